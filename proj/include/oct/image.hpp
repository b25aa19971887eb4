#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "oct/common.hpp"

namespace oct {

// Row-major 2D array. Index order is (row, col) = (depth, A-line) for B-scan
// content and (frame, A-line) for en-face content.
template <typename T>
class Image {
public:
    Image() = default;
    Image(int height, int width, T fill = T{})
        : h_(height), w_(width), v_(static_cast<size_t>(height) * width, fill) {
        OCT_REQUIRE(height >= 0 && width >= 0, "image dimensions must be non-negative");
    }

    int height() const { return h_; }
    int width() const { return w_; }
    size_t size() const { return v_.size(); }
    bool empty() const { return v_.empty(); }

    T& at(int r, int c) { return v_[static_cast<size_t>(r) * w_ + c]; }
    const T& at(int r, int c) const { return v_[static_cast<size_t>(r) * w_ + c]; }

    T* data() { return v_.data(); }
    const T* data() const { return v_.data(); }
    std::vector<T>& raw() { return v_; }
    const std::vector<T>& raw() const { return v_; }

    template <typename U>
    bool same_shape(const Image<U>& o) const { return h_ == o.height() && w_ == o.width(); }

    bool operator==(const Image& o) const { return h_ == o.h_ && w_ == o.w_ && v_ == o.v_; }

    void fill(T value) { std::fill(v_.begin(), v_.end(), value); }

private:
    int h_ = 0;
    int w_ = 0;
    std::vector<T> v_;
};

using ImageF = Image<float>;
using ImageU8 = Image<uint8_t>;

template <typename T>
Image<T> hflip(const Image<T>& img) {
    Image<T> out(img.height(), img.width());
    for (int r = 0; r < img.height(); ++r)
        for (int c = 0; c < img.width(); ++c) out.at(r, c) = img.at(r, img.width() - 1 - c);
    return out;
}

template <typename T, typename U, typename F>
Image<U> map_image(const Image<T>& img, F f) {
    Image<U> out(img.height(), img.width());
    for (size_t i = 0; i < img.size(); ++i) out.raw()[i] = f(img.raw()[i]);
    return out;
}

inline ImageU8 to_u8(const ImageF& img) {
    return map_image<float, uint8_t>(img, [](float v) {
        const float c = std::clamp(v, 0.0f, 1.0f);
        return static_cast<uint8_t>(c * 255.0f + 0.5f);
    });
}

inline ImageF to_float(const ImageU8& img) {
    return map_image<uint8_t, float>(img, [](uint8_t v) { return static_cast<float>(v) / 255.0f; });
}

inline ImageF minmax_normalize(const ImageF& img) {
    if (img.empty()) return img;
    const auto [mn, mx] = std::minmax_element(img.raw().begin(), img.raw().end());
    ImageF out(img.height(), img.width());
    if (*mx > *mn) {
        const float span = *mx - *mn;
        for (size_t i = 0; i < img.size(); ++i) out.raw()[i] = (img.raw()[i] - *mn) / span;
    }
    return out;
}

}  // namespace oct
