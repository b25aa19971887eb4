#include <omp.h>

#include "doctest.h"
#include "oct/kernels.hpp"
#include "oct/rng.hpp"

using namespace oct;
using kernels::Backend;
using kernels::Conv2dShape;

namespace {

template <typename T>
std::vector<T> random_vec(size_t n, Rng& rng) {
    std::vector<T> v(n);
    for (auto& x : v) x = static_cast<T>(rng.normal());
    return v;
}

template <typename T>
double max_rel_diff(const std::vector<T>& a, const std::vector<T>& b) {
    double worst = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = std::abs(double(a[i]) - double(b[i]));
        const double s = std::max(1.0, std::max(std::abs(double(a[i])), std::abs(double(b[i]))));
        worst = std::max(worst, d / s);
    }
    return worst;
}

const Conv2dShape kShapes[] = {
    {2, 3, 17, 23, 5, 3, 3, 1, 1, 1, 1},
    {1, 4, 16, 16, 8, 4, 4, 2, 2, 1, 1},
    {3, 2, 12, 9, 4, 3, 3, 2, 1, 1, 1},   // anisotropic stride
    {1, 1, 8, 8, 2, 1, 1, 1, 1, 0, 0},    // 1x1
    {2, 6, 10, 33, 3, 4, 4, 1, 1, 1, 1},  // spans a chunk boundary when wide
};

}  // namespace

TEST_CASE("conv2d: parallel matches serial reference") {
    Rng rng(42);
    for (const auto& s : kShapes) {
        const auto x = random_vec<float>(s.x_size(), rng);
        const auto w = random_vec<float>(s.w_size(), rng);
        const auto b = random_vec<float>(size_t(s.cout), rng);

        std::vector<float> y_ser(s.y_size()), y_par(s.y_size());
        kernels::conv2d_forward(x.data(), w.data(), b.data(), y_ser.data(), s, Backend::Serial);
        kernels::conv2d_forward(x.data(), w.data(), b.data(), y_par.data(), s, Backend::Parallel);
        CHECK(max_rel_diff(y_ser, y_par) < 1e-5);

        const auto gy = random_vec<float>(s.y_size(), rng);
        std::vector<float> gx_ser(s.x_size()), gx_par(s.x_size());
        kernels::conv2d_backward_input(gy.data(), w.data(), gx_ser.data(), s, Backend::Serial);
        kernels::conv2d_backward_input(gy.data(), w.data(), gx_par.data(), s, Backend::Parallel);
        CHECK(max_rel_diff(gx_ser, gx_par) < 1e-5);

        std::vector<float> gw_ser(s.w_size()), gw_par(s.w_size());
        std::vector<float> gb_ser(s.cout), gb_par(s.cout);
        kernels::conv2d_backward_params(gy.data(), x.data(), gw_ser.data(), gb_ser.data(), s,
                                        Backend::Serial);
        kernels::conv2d_backward_params(gy.data(), x.data(), gw_par.data(), gb_par.data(), s,
                                        Backend::Parallel);
        // weight gradients accumulate the most terms; float order noise is larger
        CHECK(max_rel_diff(gw_ser, gw_par) < 1e-4);
        CHECK(max_rel_diff(gb_ser, gb_par) < 1e-4);
    }
}

TEST_CASE("conv2d: parallel results are identical for any thread count") {
    Rng rng(43);
    const Conv2dShape s{2, 5, 40, 52, 7, 3, 3, 1, 1, 1, 1};
    const auto x = random_vec<float>(s.x_size(), rng);
    const auto w = random_vec<float>(s.w_size(), rng);
    const auto gy = random_vec<float>(s.y_size(), rng);

    const int max_threads = omp_get_max_threads();
    std::vector<float> y1(s.y_size()), yn(s.y_size());
    std::vector<float> gw1(s.w_size()), gwn(s.w_size());
    std::vector<float> gx1(s.x_size()), gxn(s.x_size());

    omp_set_num_threads(1);
    kernels::conv2d_forward<float>(x.data(), w.data(), nullptr, y1.data(), s, Backend::Parallel);
    kernels::conv2d_backward_input(gy.data(), w.data(), gx1.data(), s, Backend::Parallel);
    kernels::conv2d_backward_params<float>(gy.data(), x.data(), gw1.data(), nullptr, s,
                                           Backend::Parallel);
    omp_set_num_threads(max_threads);
    kernels::conv2d_forward<float>(x.data(), w.data(), nullptr, yn.data(), s, Backend::Parallel);
    kernels::conv2d_backward_input(gy.data(), w.data(), gxn.data(), s, Backend::Parallel);
    kernels::conv2d_backward_params<float>(gy.data(), x.data(), gwn.data(), nullptr, s,
                                           Backend::Parallel);

    CHECK(y1 == yn);    // bitwise
    CHECK(gx1 == gxn);
    CHECK(gw1 == gwn);
}

TEST_CASE("conv2d: double instantiation agrees with serial to 1e-12") {
    Rng rng(44);
    const Conv2dShape s{1, 3, 9, 11, 4, 3, 3, 1, 1, 1, 1};
    const auto x = random_vec<double>(s.x_size(), rng);
    const auto w = random_vec<double>(s.w_size(), rng);
    std::vector<double> ys(s.y_size()), yp(s.y_size());
    kernels::conv2d_forward<double>(x.data(), w.data(), nullptr, ys.data(), s, Backend::Serial);
    kernels::conv2d_forward<double>(x.data(), w.data(), nullptr, yp.data(), s, Backend::Parallel);
    CHECK(max_rel_diff(ys, yp) < 1e-12);
}

TEST_CASE("gaussian blur: serial == parallel, mass preserved") {
    Rng rng(45);
    ImageF img(37, 61);
    for (auto& v : img.raw()) v = static_cast<float>(rng.uniform());
    const ImageF a = kernels::gaussian_blur(img, 1.5f, Backend::Serial);
    const ImageF b = kernels::gaussian_blur(img, 1.5f, Backend::Parallel);
    CHECK(a == b);  // per-pixel loops, same order

    const ImageF flat(20, 20, 0.25f);
    const ImageF fb = kernels::gaussian_blur(flat, 2.0f, Backend::Parallel);
    for (float v : fb.raw()) CHECK(v == doctest::Approx(0.25f).epsilon(1e-5));
}

TEST_CASE("band_mean_columns: empty bands flagged, means exact") {
    const int depth = 10, alines = 4;
    std::vector<float> frame(depth * alines);
    for (int r = 0; r < depth; ++r)
        for (int a = 0; a < alines; ++a) frame[r * alines + a] = float(r);
    std::vector<float> upper{2, 0, -1, 5}, lower{5, 10, -1, 5};
    std::vector<float> out(alines);
    std::vector<uint8_t> flag(alines);
    kernels::band_mean_columns(frame.data(), depth, alines, upper.data(), lower.data(), out.data(),
                               flag.data(), Backend::Parallel);
    CHECK(out[0] == doctest::Approx(3.0));   // rows 2,3,4
    CHECK(out[1] == doctest::Approx(4.5));   // rows 0..9
    CHECK(flag[2] == 1);                     // sentinel band
    CHECK(flag[3] == 1);                     // zero-height band
    CHECK(out[2] == 0.0f);
    CHECK(out[3] == 0.0f);
}
