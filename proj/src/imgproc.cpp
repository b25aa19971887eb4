#include "oct/imgproc.hpp"

#include <cmath>
#include <queue>
#include <vector>

#include "oct/common.hpp"
#include "oct/kernels.hpp"

namespace oct::imgproc {

ImageF gaussian_blur(const ImageF& img, float sigma) {
    return kernels::gaussian_blur(img, sigma, kernels::default_backend());
}

Gradients sobel(const ImageF& img) {
    const int h = img.height(), w = img.width();
    Gradients g{ImageF(h, w), ImageF(h, w), ImageF(h, w)};
    auto px = [&](int r, int c) {
        r = std::clamp(r, 0, h - 1);
        c = std::clamp(c, 0, w - 1);
        return img.at(r, c);
    };
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const float gx = (px(r - 1, c + 1) + 2 * px(r, c + 1) + px(r + 1, c + 1)) -
                             (px(r - 1, c - 1) + 2 * px(r, c - 1) + px(r + 1, c - 1));
            const float gy = (px(r + 1, c - 1) + 2 * px(r + 1, c) + px(r + 1, c + 1)) -
                             (px(r - 1, c - 1) + 2 * px(r - 1, c) + px(r - 1, c + 1));
            g.gx.at(r, c) = gx;
            g.gy.at(r, c) = gy;
            g.magnitude.at(r, c) = std::sqrt(gx * gx + gy * gy);
        }
    return g;
}

ImageU8 canny(const ImageF& img, float sigma, float low_frac, float high_frac) {
    const int h = img.height(), w = img.width();
    const ImageF smooth = gaussian_blur(img, sigma);
    const Gradients g = sobel(smooth);

    float max_mag = 0.0f;
    for (float m : g.magnitude.raw()) max_mag = std::max(max_mag, m);
    ImageU8 edges(h, w, 0);
    if (max_mag <= 0.0f) return edges;
    const float low = low_frac * max_mag, high = high_frac * max_mag;

    // non-maximum suppression along the quantized gradient direction;
    // asymmetric tie-break keeps step edges one pixel wide
    ImageU8 strong(h, w, 0), weak(h, w, 0);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const float m = g.magnitude.at(r, c);
            if (m < low) continue;
            const float gx = g.gx.at(r, c), gy = g.gy.at(r, c);
            int dr, dc;
            const float ax = std::abs(gx), ay = std::abs(gy);
            if (ax > 2.414f * ay) {
                dr = 0; dc = 1;             // horizontal gradient -> vertical edge
            } else if (ay > 2.414f * ax) {
                dr = 1; dc = 0;
            } else if ((gx > 0) == (gy > 0)) {
                dr = 1; dc = 1;
            } else {
                dr = 1; dc = -1;
            }
            auto mag = [&](int rr, int cc) {
                if (rr < 0 || rr >= h || cc < 0 || cc >= w) return 0.0f;
                return g.magnitude.at(rr, cc);
            };
            if (m > mag(r + dr, c + dc) && m >= mag(r - dr, c - dc)) {
                if (m >= high)
                    strong.at(r, c) = 1;
                else
                    weak.at(r, c) = 1;
            }
        }

    // hysteresis: BFS from strong pixels through weak ones
    std::queue<std::pair<int, int>> q;
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            if (strong.at(r, c)) {
                edges.at(r, c) = 1;
                q.push({r, c});
            }
    while (!q.empty()) {
        auto [r, c] = q.front();
        q.pop();
        for (int dr = -1; dr <= 1; ++dr)
            for (int dc = -1; dc <= 1; ++dc) {
                const int rr = r + dr, cc = c + dc;
                if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
                if (weak.at(rr, cc) && !edges.at(rr, cc)) {
                    edges.at(rr, cc) = 1;
                    q.push({rr, cc});
                }
            }
    }
    return edges;
}

namespace {

ImageU8 morph(const ImageU8& mask, int iterations, bool dilate_op) {
    ImageU8 cur = mask;
    const int h = mask.height(), w = mask.width();
    // outside the frame counts as background for dilation and as foreground
    // for erosion, which keeps closing extensive at the borders
    const int border = dilate_op ? 0 : 1;
    for (int it = 0; it < iterations; ++it) {
        ImageU8 next(h, w);
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) {
                auto get = [&](int rr, int cc) -> int {
                    if (rr < 0 || rr >= h || cc < 0 || cc >= w) return border;
                    return cur.at(rr, cc);
                };
                const int center = get(r, c), up = get(r - 1, c), down = get(r + 1, c),
                          left = get(r, c - 1), right = get(r, c + 1);
                if (dilate_op)
                    next.at(r, c) = (center || up || down || left || right) ? 1 : 0;
                else
                    next.at(r, c) = (center && up && down && left && right) ? 1 : 0;
            }
        cur = std::move(next);
    }
    return cur;
}

}  // namespace

ImageU8 dilate(const ImageU8& mask, int iterations) { return morph(mask, iterations, true); }
ImageU8 erode(const ImageU8& mask, int iterations) { return morph(mask, iterations, false); }

Image<int> connected_components(const ImageU8& mask, int* n_components) {
    const int h = mask.height(), w = mask.width();
    Image<int> labels(h, w, 0);
    int next = 0;
    std::vector<std::pair<int, int>> stack;
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            if (!mask.at(r, c) || labels.at(r, c)) continue;
            ++next;
            labels.at(r, c) = next;
            stack.push_back({r, c});
            while (!stack.empty()) {
                auto [cr, cc] = stack.back();
                stack.pop_back();
                for (int dr = -1; dr <= 1; ++dr)
                    for (int dc = -1; dc <= 1; ++dc) {
                        const int rr = cr + dr, c2 = cc + dc;
                        if (rr < 0 || rr >= h || c2 < 0 || c2 >= w) continue;
                        if (mask.at(rr, c2) && !labels.at(rr, c2)) {
                            labels.at(rr, c2) = next;
                            stack.push_back({rr, c2});
                        }
                    }
            }
        }
    if (n_components) *n_components = next;
    return labels;
}

ImageU8 largest_component(const ImageU8& mask) {
    int n = 0;
    const Image<int> labels = connected_components(mask, &n);
    if (n == 0) return mask;
    std::vector<int> counts(n + 1, 0);
    for (int l : labels.raw()) ++counts[l];
    int best = 1;
    for (int l = 2; l <= n; ++l)
        if (counts[l] > counts[best]) best = l;
    ImageU8 out(mask.height(), mask.width(), 0);
    for (size_t i = 0; i < out.size(); ++i) out.raw()[i] = labels.raw()[i] == best ? 1 : 0;
    return out;
}

ImageU8 remove_small_components(const ImageU8& mask, int min_pixels) {
    int n = 0;
    const Image<int> labels = connected_components(mask, &n);
    std::vector<int> counts(n + 1, 0);
    for (int l : labels.raw()) ++counts[l];
    ImageU8 out(mask.height(), mask.width(), 0);
    for (size_t i = 0; i < out.size(); ++i) {
        const int l = labels.raw()[i];
        out.raw()[i] = (l > 0 && counts[l] >= min_pixels) ? 1 : 0;
    }
    return out;
}

ImageU8 adaptive_threshold_dark(const ImageF& img, int window, float offset) {
    OCT_REQUIRE(window >= 1 && window % 2 == 1, "window must be odd and >= 1");
    const int h = img.height(), w = img.width();
    // integral image with one row/col of zero padding
    std::vector<double> integral(size_t(h + 1) * (w + 1), 0.0);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            integral[size_t(r + 1) * (w + 1) + c + 1] = img.at(r, c) +
                                                        integral[size_t(r) * (w + 1) + c + 1] +
                                                        integral[size_t(r + 1) * (w + 1) + c] -
                                                        integral[size_t(r) * (w + 1) + c];
    const int half = window / 2;
    ImageU8 out(h, w, 0);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const int r0 = std::max(0, r - half), r1 = std::min(h - 1, r + half);
            const int c0 = std::max(0, c - half), c1 = std::min(w - 1, c + half);
            const double sum = integral[size_t(r1 + 1) * (w + 1) + c1 + 1] -
                               integral[size_t(r0) * (w + 1) + c1 + 1] -
                               integral[size_t(r1 + 1) * (w + 1) + c0] +
                               integral[size_t(r0) * (w + 1) + c0];
            const double mean = sum / (double(r1 - r0 + 1) * (c1 - c0 + 1));
            out.at(r, c) = img.at(r, c) < mean - offset ? 1 : 0;
        }
    return out;
}

}  // namespace oct::imgproc
