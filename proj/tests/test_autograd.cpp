#include "doctest.h"
#include "gradcheck.hpp"
#include "oct/nn.hpp"

using namespace oct;
using namespace oct::testutil;
using ag::Shape4;
using ag::Var;

namespace {
constexpr double kTol = 1e-6;  // double precision, smooth ops
constexpr double kTolKinked = 1e-3;
}  // namespace

TEST_CASE("gradcheck: elementwise ops") {
    auto x = random_input({2, 3, 4, 4}, 1);
    auto y = random_input({2, 3, 4, 4}, 2);

    auto r1 = gradcheck([](auto& in) { return ag::mean_all(ag::mul(in[0], in[1])); }, {x, y});
    CHECK(r1.max_rel_err < kTol);

    auto r2 = gradcheck(
        [](auto& in) { return ag::mean_all(ag::sigmoid(ag::sub(in[0], in[1]))); }, {x, y});
    CHECK(r2.max_rel_err < kTol);

    auto r3 = gradcheck([](auto& in) { return ag::mean_all(ag::softplus(ag::scale(in[0], 2.0))); },
                        {x});
    CHECK(r3.max_rel_err < kTol);

    auto r4 = gradcheck([](auto& in) { return ag::mean_all(ag::leaky_relu(in[0], 0.2)); }, {x});
    CHECK(r4.max_rel_err < kTolKinked);

    auto r5 = gradcheck([](auto& in) { return ag::mean_all(ag::abs_(in[0])); }, {x});
    CHECK(r5.max_rel_err < kTolKinked);
}

TEST_CASE("gradcheck: structure ops") {
    auto x = random_input({2, 2, 4, 6}, 3);
    auto y = random_input({2, 3, 4, 6}, 4);

    auto r1 = gradcheck(
        [](auto& in) { return ag::mean_all(ag::concat_channels(in[0], in[1])); }, {x, y});
    CHECK(r1.max_rel_err < kTol);

    auto r2 = gradcheck([](auto& in) { return ag::mean_all(ag::max_pool2x2(in[0])); }, {x});
    CHECK(r2.max_rel_err < kTolKinked);

    auto r3 = gradcheck([](auto& in) { return ag::mean_all(ag::upsample_nearest2x(in[0])); }, {x});
    CHECK(r3.max_rel_err < kTol);

    // weighted sum so the softmax gradient is non-trivial
    auto w = random_input({2, 3, 4, 6}, 5);
    w->requires_grad = false;
    auto r4 = gradcheck(
        [&](auto& in) { return ag::mean_all(ag::mul(ag::softmax_channels(in[0]), w)); }, {y});
    CHECK(r4.max_rel_err < kTol);

    auto r5 = gradcheck([](auto& in) { return ag::mean_all(ag::mean_over_height(in[0])); }, {x});
    CHECK(r5.max_rel_err < kTol);

    auto r6 = gradcheck([&](auto& in) { return ag::mean_all(ag::mul(ag::gram(in[0]), in[1])); },
                        {y, random_input({2, 3, 3, 1}, 6)});
    CHECK(r6.max_rel_err < kTol);
}

TEST_CASE("gradcheck: conv2d wrt input, weights, bias") {
    auto x = random_input({2, 2, 6, 5}, 7);
    auto w = random_input({3, 2, 3, 3}, 8);
    auto b = random_input({1, 3, 1, 1}, 9);
    auto r = gradcheck(
        [](auto& in) { return ag::mean_all(ag::conv2d(in[0], in[1], in[2], 1, 1, 1, 1)); },
        {x, w, b});
    CHECK(r.max_rel_err < kTol);

    // strided, anisotropic
    auto r2 = gradcheck(
        [](auto& in) { return ag::mean_all(ag::conv2d(in[0], in[1], in[2], 2, 1, 1, 1)); },
        {x, w, b});
    CHECK(r2.max_rel_err < kTol);
}

TEST_CASE("gradcheck: instance norm") {
    auto x = random_input({2, 3, 4, 4}, 10);
    auto g = random_input({1, 3, 1, 1}, 11, 0.5, 1.5);
    auto b = random_input({1, 3, 1, 1}, 12);
    auto r = gradcheck(
        [](auto& in) { return ag::mean_all(ag::mul(ag::instance_norm(in[0], in[1], in[2]), in[3])); },
        {x, g, b, random_input({2, 3, 4, 4}, 13)});
    CHECK(r.max_rel_err < 1e-5);
}

TEST_CASE("gradcheck: fused losses") {
    auto a = random_input({2, 1, 4, 4}, 14, 0.1, 0.9);
    auto t = random_input({2, 1, 4, 4}, 15, 0.0, 1.0);
    t->requires_grad = false;
    auto r1 = gradcheck([&](auto& in) { return ag::bce_mean(in[0], t); }, {a});
    CHECK(r1.max_rel_err < kTol);

    auto logits = random_input({2, 1, 4, 4}, 16, -2.0, 2.0);
    auto r2 = gradcheck([](auto& in) { return ag::bce_logits_mean(in[0], 1.0); }, {logits});
    CHECK(r2.max_rel_err < kTol);

    auto p = random_input({1, 4, 3, 3}, 17, 0.05, 0.95);
    ag::Tensor4<double> onehot_t(Shape4{1, 4, 3, 3}, 0.0);
    Rng rng(18);
    for (int h = 0; h < 3; ++h)
        for (int w = 0; w < 3; ++w) onehot_t.at(0, int(rng.uniform_int(0, 3)), h, w) = 1.0;
    auto onehot = ag::constant(std::move(onehot_t));
    auto r3 = gradcheck([&](auto& in) { return ag::ce_mean(in[0], onehot); }, {p});
    CHECK(r3.max_rel_err < kTol);

    auto b2 = random_input({2, 1, 4, 4}, 19);
    auto r4 = gradcheck([](auto& in) { return ag::l1_mean(in[0], in[1]); }, {a, b2});
    CHECK(r4.max_rel_err < kTolKinked);
}

TEST_CASE("gradcheck: whole tiny networks (double)") {
    // tiny U-Net
    nn::UNet<double> unet(21, 1, 2, 2, 4, nn::Head::Softmax);
    auto x = random_input({1, 1, 8, 8}, 22, 0.0, 1.0);
    ag::Tensor4<double> gt_t(Shape4{1, 2, 8, 8}, 0.0);
    Rng rng(23);
    for (int h = 0; h < 8; ++h)
        for (int w = 0; w < 8; ++w) gt_t.at(0, int(rng.uniform_int(0, 1)), h, w) = 1.0;
    auto gt = ag::constant(std::move(gt_t));
    auto r = gradcheck([&](auto& in) { return ag::ce_mean(unet.forward(in[0]), gt); }, {x}, 1e-5);
    CHECK(r.max_rel_err < kTolKinked);

    // tiny biomarker net: gradient wrt its mask input
    nn::BiomarkerNet<double> bio(24, 4);
    auto mask = random_input({1, 1, 16, 8}, 25, 0.0, 1.0);
    auto r2 = gradcheck([&](auto& in) { return ag::mean_all(bio.biomarker(in[0])); }, {mask}, 1e-5);
    CHECK(r2.max_rel_err < kTolKinked);
}

TEST_CASE("multiple uses of a node accumulate gradients") {
    auto x = random_input({1, 1, 2, 2}, 26);
    auto r = gradcheck([](auto& in) { return ag::mean_all(ag::mul(in[0], in[0])); }, {x});
    CHECK(r.max_rel_err < kTol);
}

TEST_CASE("frozen parameters receive no gradients") {
    nn::BiomarkerNet<double> bio(27, 4);
    bio.freeze();
    auto mask = random_input({1, 1, 16, 8}, 28, 0.0, 1.0);
    auto out = ag::mean_all(bio.biomarker(mask));
    ag::backward(out);
    for (auto& [name, p] : bio.store().items()) {
        CHECK_FALSE(p->requires_grad);
        for (size_t i = 0; i < p->grad.numel(); ++i) CHECK(p->grad[i] == 0.0);
    }
    // ...while the input still gets a gradient
    double sum = 0.0;
    for (size_t i = 0; i < mask->grad.numel(); ++i) sum += std::abs(mask->grad[i]);
    CHECK(sum > 0.0);
}
