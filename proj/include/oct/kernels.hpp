#pragma once

#include <cstddef>

#include "oct/image.hpp"

namespace oct::kernels {

// Every kernel has a serial reference implementation and an OpenMP-parallel
// one. The parallel versions partition work into fixed-size chunks so each
// output element is produced by exactly one thread with a fixed accumulation
// order: results are bit-identical for any thread count.
enum class Backend { Serial, Parallel };

Backend& default_backend();

struct Conv2dShape {
    int n = 1;            // batch
    int cin = 1, h = 0, w = 0;
    int cout = 1, kh = 3, kw = 3;
    int sh = 1, sw = 1;   // stride
    int ph = 1, pw = 1;   // zero padding

    int out_h() const { return (h + 2 * ph - kh) / sh + 1; }
    int out_w() const { return (w + 2 * pw - kw) / sw + 1; }
    size_t x_size() const { return size_t(n) * cin * h * w; }
    size_t w_size() const { return size_t(cout) * cin * kh * kw; }
    size_t y_size() const { return size_t(n) * cout * out_h() * out_w(); }
};

// x: [n, cin, h, w], w: [cout, cin, kh, kw], b: [cout] (nullable), y: [n, cout, oh, ow]
template <typename T>
void conv2d_forward(const T* x, const T* w, const T* b, T* y, const Conv2dShape& s,
                    Backend backend);

// gy: [n, cout, oh, ow] -> gx: [n, cin, h, w] (overwritten)
template <typename T>
void conv2d_backward_input(const T* gy, const T* w, T* gx, const Conv2dShape& s, Backend backend);

// gy + x -> gw: [cout, cin, kh, kw], gb: [cout] (nullable); both overwritten
template <typename T>
void conv2d_backward_params(const T* gy, const T* x, T* gw, T* gb, const Conv2dShape& s,
                            Backend backend);

// Separable Gaussian blur with reflect padding. sigma <= 0 returns the input.
ImageF gaussian_blur(const ImageF& img, float sigma, Backend backend);

// Mean over depth rows [upper[c], lower[c]) of one volume frame, one output
// value per column. Empty or out-of-range bands give 0 and set flagged[c].
void band_mean_columns(const float* frame, int depth, int alines, const float* upper,
                       const float* lower, float* out, uint8_t* flagged, Backend backend);

}  // namespace oct::kernels
