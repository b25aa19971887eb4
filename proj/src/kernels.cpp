#include "oct/kernels.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstring>
#include <vector>

#include "oct/common.hpp"

namespace oct::kernels {

namespace {

constexpr int kChunk = 1024;  // output pixels per GEMM chunk, fixed for determinism

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapRM = Eigen::Map<const MatRM<T>>;

// im2col for output pixels [p0, p1): col is (cin*kh*kw) x (p1-p0), row-major.
template <typename T>
void im2col_chunk(const T* x, const Conv2dShape& s, int p0, int p1, T* col) {
    const int ow = s.out_w();
    const int cols = p1 - p0;
    for (int ci = 0; ci < s.cin; ++ci) {
        const T* plane = x + size_t(ci) * s.h * s.w;
        for (int kr = 0; kr < s.kh; ++kr) {
            for (int kc = 0; kc < s.kw; ++kc) {
                T* dst = col + (size_t(ci) * s.kh * s.kw + size_t(kr) * s.kw + kc) * cols;
                for (int p = p0; p < p1; ++p) {
                    const int oh = p / ow, owp = p % ow;
                    const int ih = oh * s.sh - s.ph + kr;
                    const int iw = owp * s.sw - s.pw + kc;
                    dst[p - p0] = (ih >= 0 && ih < s.h && iw >= 0 && iw < s.w)
                                      ? plane[size_t(ih) * s.w + iw]
                                      : T(0);
                }
            }
        }
    }
}

template <typename T>
void conv2d_forward_serial(const T* x, const T* w, const T* b, T* y, const Conv2dShape& s) {
    const int oh = s.out_h(), ow = s.out_w();
    for (int n = 0; n < s.n; ++n) {
        const T* xs = x + size_t(n) * s.cin * s.h * s.w;
        T* ys = y + size_t(n) * s.cout * oh * ow;
        for (int co = 0; co < s.cout; ++co) {
            for (int r = 0; r < oh; ++r) {
                for (int c = 0; c < ow; ++c) {
                    T acc = b ? b[co] : T(0);
                    for (int ci = 0; ci < s.cin; ++ci) {
                        for (int kr = 0; kr < s.kh; ++kr) {
                            const int ih = r * s.sh - s.ph + kr;
                            if (ih < 0 || ih >= s.h) continue;
                            for (int kc = 0; kc < s.kw; ++kc) {
                                const int iw = c * s.sw - s.pw + kc;
                                if (iw < 0 || iw >= s.w) continue;
                                acc += xs[(size_t(ci) * s.h + ih) * s.w + iw] *
                                       w[((size_t(co) * s.cin + ci) * s.kh + kr) * s.kw + kc];
                            }
                        }
                    }
                    ys[(size_t(co) * oh + r) * ow + c] = acc;
                }
            }
        }
    }
}

template <typename T>
void conv2d_forward_parallel(const T* x, const T* w, const T* b, T* y, const Conv2dShape& s) {
    const int oh = s.out_h(), ow = s.out_w();
    const int pixels = oh * ow;
    const int nchunks = (pixels + kChunk - 1) / kChunk;
    const int k = s.cin * s.kh * s.kw;
    CMapRM<T> W(w, s.cout, k);

#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < s.n; ++n) {
        for (int chunk = 0; chunk < nchunks; ++chunk) {
            const int p0 = chunk * kChunk;
            const int p1 = std::min(pixels, p0 + kChunk);
            std::vector<T> col(size_t(k) * (p1 - p0));
            im2col_chunk(x + size_t(n) * s.cin * s.h * s.w, s, p0, p1, col.data());
            CMapRM<T> C(col.data(), k, p1 - p0);

            std::vector<T> out(size_t(s.cout) * (p1 - p0));
            MapRM<T> O(out.data(), s.cout, p1 - p0);
            O.noalias() = W * C;

            T* ys = y + size_t(n) * s.cout * pixels;
            for (int co = 0; co < s.cout; ++co) {
                const T bias = b ? b[co] : T(0);
                for (int p = p0; p < p1; ++p)
                    ys[size_t(co) * pixels + p] = out[size_t(co) * (p1 - p0) + (p - p0)] + bias;
            }
        }
    }
}

template <typename T>
void conv2d_backward_input_serial(const T* gy, const T* w, T* gx, const Conv2dShape& s) {
    const int oh = s.out_h(), ow = s.out_w();
    std::memset(gx, 0, s.x_size() * sizeof(T));
    for (int n = 0; n < s.n; ++n) {
        const T* gys = gy + size_t(n) * s.cout * oh * ow;
        T* gxs = gx + size_t(n) * s.cin * s.h * s.w;
        for (int co = 0; co < s.cout; ++co) {
            for (int r = 0; r < oh; ++r) {
                for (int c = 0; c < ow; ++c) {
                    const T g = gys[(size_t(co) * oh + r) * ow + c];
                    for (int ci = 0; ci < s.cin; ++ci) {
                        for (int kr = 0; kr < s.kh; ++kr) {
                            const int ih = r * s.sh - s.ph + kr;
                            if (ih < 0 || ih >= s.h) continue;
                            for (int kc = 0; kc < s.kw; ++kc) {
                                const int iw = c * s.sw - s.pw + kc;
                                if (iw < 0 || iw >= s.w) continue;
                                gxs[(size_t(ci) * s.h + ih) * s.w + iw] +=
                                    g * w[((size_t(co) * s.cin + ci) * s.kh + kr) * s.kw + kc];
                            }
                        }
                    }
                }
            }
        }
    }
}

// col2im races across column chunks, so the parallel split is over samples:
// whole-sample GEMM (chunked over columns) then a serial col2im per sample.
template <typename T>
void conv2d_backward_input_parallel(const T* gy, const T* w, T* gx, const Conv2dShape& s) {
    const int oh = s.out_h(), ow = s.out_w();
    const int pixels = oh * ow;
    const int k = s.cin * s.kh * s.kw;
    CMapRM<T> W(w, s.cout, k);

#pragma omp parallel for schedule(static)
    for (int n = 0; n < s.n; ++n) {
        const T* gys = gy + size_t(n) * s.cout * pixels;
        T* gxs = gx + size_t(n) * s.cin * s.h * s.w;
        std::memset(gxs, 0, size_t(s.cin) * s.h * s.w * sizeof(T));

        std::vector<T> colgrad(size_t(k) * pixels);
        CMapRM<T> GY(gys, s.cout, pixels);
        MapRM<T> CG(colgrad.data(), k, pixels);
        CG.noalias() = W.transpose() * GY;

        for (int ci = 0; ci < s.cin; ++ci) {
            T* plane = gxs + size_t(ci) * s.h * s.w;
            for (int kr = 0; kr < s.kh; ++kr) {
                for (int kc = 0; kc < s.kw; ++kc) {
                    const T* src = colgrad.data() +
                                   (size_t(ci) * s.kh * s.kw + size_t(kr) * s.kw + kc) * pixels;
                    for (int p = 0; p < pixels; ++p) {
                        const int r = p / ow, c = p % ow;
                        const int ih = r * s.sh - s.ph + kr;
                        const int iw = c * s.sw - s.pw + kc;
                        if (ih >= 0 && ih < s.h && iw >= 0 && iw < s.w)
                            plane[size_t(ih) * s.w + iw] += src[p];
                    }
                }
            }
        }
    }
}

template <typename T>
void conv2d_backward_params_serial(const T* gy, const T* x, T* gw, T* gb, const Conv2dShape& s) {
    const int oh = s.out_h(), ow = s.out_w();
    std::memset(gw, 0, s.w_size() * sizeof(T));
    if (gb) std::memset(gb, 0, size_t(s.cout) * sizeof(T));
    for (int n = 0; n < s.n; ++n) {
        const T* xs = x + size_t(n) * s.cin * s.h * s.w;
        const T* gys = gy + size_t(n) * s.cout * oh * ow;
        for (int co = 0; co < s.cout; ++co) {
            for (int r = 0; r < oh; ++r) {
                for (int c = 0; c < ow; ++c) {
                    const T g = gys[(size_t(co) * oh + r) * ow + c];
                    if (gb) gb[co] += g;
                    for (int ci = 0; ci < s.cin; ++ci) {
                        for (int kr = 0; kr < s.kh; ++kr) {
                            const int ih = r * s.sh - s.ph + kr;
                            if (ih < 0 || ih >= s.h) continue;
                            for (int kc = 0; kc < s.kw; ++kc) {
                                const int iw = c * s.sw - s.pw + kc;
                                if (iw < 0 || iw >= s.w) continue;
                                gw[((size_t(co) * s.cin + ci) * s.kh + kr) * s.kw + kc] +=
                                    g * xs[(size_t(ci) * s.h + ih) * s.w + iw];
                            }
                        }
                    }
                }
            }
        }
    }
}

// Per-chunk partial gradients reduced serially in chunk order afterwards, so
// the accumulation order never depends on the thread count.
template <typename T>
void conv2d_backward_params_parallel(const T* gy, const T* x, T* gw, T* gb,
                                     const Conv2dShape& s) {
    const int oh = s.out_h(), ow = s.out_w();
    const int pixels = oh * ow;
    const int nchunks = (pixels + kChunk - 1) / kChunk;
    const int k = s.cin * s.kh * s.kw;
    const int total = s.n * nchunks;

    std::vector<std::vector<T>> partials(total);
    std::vector<std::vector<T>> bias_partials(gb ? total : 0);

#pragma omp parallel for schedule(static)
    for (int t = 0; t < total; ++t) {
        const int n = t / nchunks;
        const int chunk = t % nchunks;
        const int p0 = chunk * kChunk;
        const int p1 = std::min(pixels, p0 + kChunk);

        std::vector<T> col(size_t(k) * (p1 - p0));
        im2col_chunk(x + size_t(n) * s.cin * s.h * s.w, s, p0, p1, col.data());
        CMapRM<T> C(col.data(), k, p1 - p0);

        std::vector<T> gyc(size_t(s.cout) * (p1 - p0));
        const T* gys = gy + size_t(n) * s.cout * pixels;
        for (int co = 0; co < s.cout; ++co)
            std::memcpy(gyc.data() + size_t(co) * (p1 - p0), gys + size_t(co) * pixels + p0,
                        size_t(p1 - p0) * sizeof(T));
        CMapRM<T> GY(gyc.data(), s.cout, p1 - p0);

        partials[t].resize(size_t(s.cout) * k);
        MapRM<T> GW(partials[t].data(), s.cout, k);
        GW.noalias() = GY * C.transpose();

        if (gb) {
            bias_partials[t].assign(s.cout, T(0));
            for (int co = 0; co < s.cout; ++co)
                for (int p = 0; p < p1 - p0; ++p)
                    bias_partials[t][co] += gyc[size_t(co) * (p1 - p0) + p];
        }
    }

    std::memset(gw, 0, s.w_size() * sizeof(T));
    if (gb) std::memset(gb, 0, size_t(s.cout) * sizeof(T));
    for (int t = 0; t < total; ++t) {
        for (size_t i = 0; i < partials[t].size(); ++i) gw[i] += partials[t][i];
        if (gb)
            for (int co = 0; co < s.cout; ++co) gb[co] += bias_partials[t][co];
    }
}

std::vector<float> gaussian_taps(float sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0f * sigma)));
    std::vector<float> taps(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * double(i) * i / (double(sigma) * sigma));
        taps[i + radius] = static_cast<float>(v);
        sum += v;
    }
    for (auto& t : taps) t = static_cast<float>(t / sum);
    return taps;
}

int reflect(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * n - 2 - i;
    }
    return i;
}

ImageF blur_impl(const ImageF& img, float sigma, bool parallel) {
    if (sigma <= 0.0f || img.empty()) return img;
    const auto taps = gaussian_taps(sigma);
    const int radius = (static_cast<int>(taps.size()) - 1) / 2;
    const int h = img.height(), w = img.width();

    ImageF tmp(h, w), out(h, w);
#pragma omp parallel for schedule(static) if (parallel)
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            float acc = 0.0f;
            for (int i = -radius; i <= radius; ++i)
                acc += taps[i + radius] * img.at(r, reflect(c + i, w));
            tmp.at(r, c) = acc;
        }
#pragma omp parallel for schedule(static) if (parallel)
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            float acc = 0.0f;
            for (int i = -radius; i <= radius; ++i)
                acc += taps[i + radius] * tmp.at(reflect(r + i, h), c);
            out.at(r, c) = acc;
        }
    return out;
}

}  // namespace

Backend& default_backend() {
    static Backend backend = Backend::Parallel;
    return backend;
}

template <typename T>
void conv2d_forward(const T* x, const T* w, const T* b, T* y, const Conv2dShape& s,
                    Backend backend) {
    OCT_REQUIRE(s.out_h() > 0 && s.out_w() > 0, "conv2d output would be empty");
    if (backend == Backend::Serial)
        conv2d_forward_serial(x, w, b, y, s);
    else
        conv2d_forward_parallel(x, w, b, y, s);
}

template <typename T>
void conv2d_backward_input(const T* gy, const T* w, T* gx, const Conv2dShape& s, Backend backend) {
    if (backend == Backend::Serial)
        conv2d_backward_input_serial(gy, w, gx, s);
    else
        conv2d_backward_input_parallel(gy, w, gx, s);
}

template <typename T>
void conv2d_backward_params(const T* gy, const T* x, T* gw, T* gb, const Conv2dShape& s,
                            Backend backend) {
    if (backend == Backend::Serial)
        conv2d_backward_params_serial(gy, x, gw, gb, s);
    else
        conv2d_backward_params_parallel(gy, x, gw, gb, s);
}

template void conv2d_forward<float>(const float*, const float*, const float*, float*,
                                    const Conv2dShape&, Backend);
template void conv2d_forward<double>(const double*, const double*, const double*, double*,
                                     const Conv2dShape&, Backend);
template void conv2d_backward_input<float>(const float*, const float*, float*, const Conv2dShape&,
                                           Backend);
template void conv2d_backward_input<double>(const double*, const double*, double*,
                                            const Conv2dShape&, Backend);
template void conv2d_backward_params<float>(const float*, const float*, float*, float*,
                                            const Conv2dShape&, Backend);
template void conv2d_backward_params<double>(const double*, const double*, double*, double*,
                                             const Conv2dShape&, Backend);

ImageF gaussian_blur(const ImageF& img, float sigma, Backend backend) {
    return blur_impl(img, sigma, backend == Backend::Parallel);
}

void band_mean_columns(const float* frame, int depth, int alines, const float* upper,
                       const float* lower, float* out, uint8_t* flagged, Backend backend) {
#pragma omp parallel for schedule(static) if (backend == Backend::Parallel)
    for (int a = 0; a < alines; ++a) {
        const bool has = upper[a] >= 0.0f && lower[a] >= 0.0f;
        int r0 = has ? static_cast<int>(std::lround(upper[a])) : 0;
        int r1 = has ? static_cast<int>(std::lround(lower[a])) : 0;
        r0 = std::max(0, r0);
        r1 = std::min(depth, r1);
        if (!has || r1 <= r0) {
            out[a] = 0.0f;
            if (flagged) flagged[a] = 1;
            continue;
        }
        double acc = 0.0;
        for (int r = r0; r < r1; ++r) acc += frame[size_t(r) * alines + a];
        out[a] = static_cast<float>(acc / (r1 - r0));
        if (flagged) flagged[a] = 0;
    }
}

}  // namespace oct::kernels
