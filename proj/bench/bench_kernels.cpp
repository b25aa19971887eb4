// Times the serial reference kernels against the OpenMP-parallel ones and a
// representative training step of each network, at desk-scale shapes.
#include <omp.h>

#include <chrono>
#include <cstdio>
#include <vector>

#include "oct/bionet.hpp"
#include "oct/kernels.hpp"
#include "oct/nn.hpp"
#include "oct/rng.hpp"

using namespace oct;
using kernels::Backend;
using kernels::Conv2dShape;
using Clock = std::chrono::steady_clock;

namespace {

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

template <typename F>
double time_best_of(int reps, F f) {
    double best = 1e30;
    for (int i = 0; i < reps; ++i) {
        const auto t0 = Clock::now();
        f();
        best = std::min(best, ms_since(t0));
    }
    return best;
}

void bench_conv(const char* label, const Conv2dShape& s) {
    Rng rng(1);
    std::vector<float> x(s.x_size()), w(s.w_size()), y(s.y_size()), gy(s.y_size());
    std::vector<float> gx(s.x_size()), gw(s.w_size());
    for (auto& v : x) v = float(rng.normal());
    for (auto& v : w) v = float(rng.normal());
    for (auto& v : gy) v = float(rng.normal());

    const double fs = time_best_of(3, [&] {
        kernels::conv2d_forward<float>(x.data(), w.data(), nullptr, y.data(), s, Backend::Serial);
    });
    const double fp = time_best_of(3, [&] {
        kernels::conv2d_forward<float>(x.data(), w.data(), nullptr, y.data(), s, Backend::Parallel);
    });
    const double bs = time_best_of(3, [&] {
        kernels::conv2d_backward_input(gy.data(), w.data(), gx.data(), s, Backend::Serial);
        kernels::conv2d_backward_params<float>(gy.data(), x.data(), gw.data(), nullptr, s,
                                               Backend::Serial);
    });
    const double bp = time_best_of(3, [&] {
        kernels::conv2d_backward_input(gy.data(), w.data(), gx.data(), s, Backend::Parallel);
        kernels::conv2d_backward_params<float>(gy.data(), x.data(), gw.data(), nullptr, s,
                                               Backend::Parallel);
    });
    std::printf("%-28s fwd %8.2f ms -> %8.2f ms (%4.1fx)   bwd %8.2f ms -> %8.2f ms (%4.1fx)\n",
                label, fs, fp, fs / fp, bs, bp, bs / bp);
}

void bench_blur() {
    Rng rng(2);
    ImageF img(192, 192);
    for (auto& v : img.raw()) v = float(rng.uniform());
    const double ts = time_best_of(5, [&] { kernels::gaussian_blur(img, 1.5f, Backend::Serial); });
    const double tp =
        time_best_of(5, [&] { kernels::gaussian_blur(img, 1.5f, Backend::Parallel); });
    std::printf("%-28s     %8.2f ms -> %8.2f ms (%4.1fx)\n", "gaussian_blur 192x192", ts, tp,
                ts / tp);
}

void bench_unet_step(int base) {
    nn::UNet<float> unet(3, 1, 12, 4, base, nn::Head::Softmax);
    Rng rng(4);
    ag::Tensor4<float> x(ag::Shape4{4, 1, 192, 192});
    for (auto& v : x.v) v = float(rng.uniform());
    ag::Tensor4<float> gt(ag::Shape4{4, 12, 192, 192}, 0.0f);
    for (int n = 0; n < 4; ++n)
        for (int h = 0; h < 192; ++h)
            for (int w = 0; w < 192; ++w) gt.at(n, int(rng.uniform_int(0, 11)), h, w) = 1.0f;

    const double t = time_best_of(2, [&] {
        unet.store().zero_grads();
        auto loss = ag::ce_mean(unet.forward(ag::constant(x)), ag::constant(gt));
        ag::backward(loss);
    });
    std::printf("unet(base=%2d) fwd+bwd, batch 4 @192x192: %8.1f ms\n", base, t);
}

}  // namespace

int main() {
    std::printf("threads: %d\n", omp_get_max_threads());
    bench_conv("conv 16ch 192x192 k3", {4, 16, 192, 192, 16, 3, 3, 1, 1, 1, 1});
    bench_conv("conv 32ch 96x96 k3", {4, 32, 96, 96, 32, 3, 3, 1, 1, 1, 1});
    bench_conv("conv 64ch 48x48 k3", {4, 64, 48, 48, 64, 3, 3, 1, 1, 1, 1});
    bench_blur();
    bench_unet_step(8);
    bench_unet_step(12);
    bench_unet_step(16);
    bench_unet_step(32);
    return 0;
}
