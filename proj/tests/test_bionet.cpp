#include "doctest.h"
#include "gradcheck.hpp"
#include "oct/bionet.hpp"
#include "oct/imgproc.hpp"
#include "oct/phantom.hpp"

using namespace oct;
using namespace oct::bionet;
using namespace oct::testutil;
using ag::Shape4;
using ag::Tensor4;
using ag::Var;

namespace {

phantom::PhantomConfig small_cfg(uint64_t seed) {
    phantom::PhantomConfig cfg;
    cfg.width = 48;
    cfg.height = 80;
    cfg.frames = 1;
    cfg.seed = seed;
    cfg.layer_mean_thicknesses_px = {10, 4, 6, 4, 4, 4, 6, 4, 4, 14, 6, 2};
    cfg.layer_thickness_spread_frac = 0.4f;  // the regressor needs thickness variety
    cfg.boundary_wiggle_amplitude_px = 2.0f;
    return cfg;
}

std::vector<Sample> make_samples(int n, uint64_t seed0) {
    std::vector<Sample> out;
    for (int i = 0; i < n; ++i) {
        const auto s = phantom::generate_bscan(small_cfg(seed0 + i), 0);
        out.push_back({s.bscan.pixels, s.layer_map, s.choroid_mask});
    }
    return out;
}

// shared tiny trained biomarker net (training is part of the test)
const BiomarkerOutcome& trained_bio() {
    static BiomarkerOutcome outcome = [] {
        auto samples = make_samples(24, 1000);
        train::TrainConfig cfg;
        cfg.initial_lr = 2e-3;
        cfg.max_epochs = 40;
        cfg.batch_size = 8;
        cfg.seed = 5;
        cfg.aug_rotation_deg = 0.0;  // keep masks clean bands for this check
        cfg.early_stop_val = 1.0;
        NetConfig nc;
        nc.bio_base = 6;
        return train_biomarker_net(samples, cfg, nc);
    }();
    return outcome;
}

}  // namespace

TEST_CASE("Eq.1: zero at equality, mean of absolute errors otherwise") {
    Tensor4<double> a(Shape4{3, 1, 1, 1});
    a.v = {10.0, 20.0, 30.0};
    auto pred = ag::make_var(a, true);
    auto gt = ag::constant(a);
    CHECK(biomarker_regression_loss<double>(pred, gt)->value[0] == 0.0);

    Tensor4<double> b = a;
    b.v = {12.0, 17.0, 30.0};
    CHECK(biomarker_regression_loss<double>(pred, ag::constant(b))->value[0] ==
          doctest::Approx((2.0 + 3.0 + 0.0) / 3.0));
}

TEST_CASE("Eq.2: perfect one-hot prediction costs at most 12*eps; uniform costs ln 12") {
    const int C = kNumLayers;
    Tensor4<double> onehot_t(Shape4{1, C, 2, 2}, 0.0);
    for (int p = 0; p < 4; ++p) onehot_t.v[(p % C) * 4 + p] = 1.0;

    // clip the perfect prediction by eps as a probability map would be
    Tensor4<double> perfect = onehot_t;
    for (auto& v : perfect.v) v = std::min(1.0 - 1e-7, std::max(1e-7, v));
    auto l_perfect = multilayer_loss<double>(ag::make_var(perfect, true), ag::constant(onehot_t));
    CHECK(l_perfect->value[0] <= 12.0 * 1e-7 + 1e-12);

    Tensor4<double> uniform(Shape4{1, C, 2, 2}, 1.0 / C);
    auto l_uniform = multilayer_loss<double>(ag::make_var(uniform, true), ag::constant(onehot_t));
    CHECK(l_uniform->value[0] == doctest::Approx(std::log(12.0)).epsilon(1e-9));
}

TEST_CASE("Eq.2: finite-difference gradient check (double, 4x4)") {
    auto probs = random_input({1, kNumLayers, 4, 4}, 50, 0.05, 0.95);
    Tensor4<double> onehot_t(Shape4{1, kNumLayers, 4, 4}, 0.0);
    Rng rng(51);
    for (int h = 0; h < 4; ++h)
        for (int w = 0; w < 4; ++w)
            onehot_t.at(0, int(rng.uniform_int(0, kNumLayers - 1)), h, w) = 1.0;
    auto onehot = ag::constant(onehot_t);
    const auto r =
        gradcheck([&](auto& in) { return multilayer_loss<double>(in[0], onehot); }, {probs});
    CHECK(r.max_rel_err < 1e-3);
}

TEST_CASE("Eq.3: zero at equality, ln 2 at 0.5, gradient check") {
    Tensor4<double> gt_t(Shape4{1, 1, 4, 4}, 0.0);
    for (int i = 0; i < 8; ++i) gt_t.v[i] = 1.0;
    auto gt = ag::constant(gt_t);

    Tensor4<double> same = gt_t;
    for (auto& v : same.v) v = std::min(1.0 - 1e-7, std::max(1e-7, v));
    CHECK(choroid_loss<double>(ag::make_var(same, true), gt)->value[0] < 1e-5);

    Tensor4<double> half(Shape4{1, 1, 4, 4}, 0.5);
    CHECK(choroid_loss<double>(ag::make_var(half, true), gt)->value[0] ==
          doctest::Approx(std::log(2.0)).epsilon(1e-9));

    auto pred = random_input({1, 1, 4, 4}, 52, 0.05, 0.95);
    const auto r = gradcheck([&](auto& in) { return choroid_loss<double>(in[0], gt); }, {pred});
    CHECK(r.max_rel_err < 1e-3);

    Tensor4<double> wrong_shape(Shape4{1, 1, 2, 2}, 0.5);
    CHECK_THROWS_AS(choroid_loss<double>(ag::make_var(wrong_shape, true), gt), DataError);
}

TEST_CASE("Eq.4: frozen contract, exact zero at C_pred = C_gt, gradient check") {
    nn::BiomarkerNet<double> bio(60, 4);

    Tensor4<double> mask_t(Shape4{1, 1, 16, 8}, 0.0);
    for (int r = 5; r < 11; ++r)
        for (int c = 0; c < 8; ++c) mask_t.at(0, 0, r, c) = 1.0;
    auto c_pred = ag::make_var(mask_t, true);
    auto b_ref = ag::constant(bio.biomarker(ag::constant(mask_t))->value);

    // unfrozen net is rejected
    CHECK_THROWS_AS(bio_consistency_loss<double>(c_pred, bio, b_ref), DataError);

    bio.freeze();
    // C_pred equal to the ground-truth mask: same input to the same frozen
    // net as B_ref, so the loss is exactly zero
    CHECK(bio_consistency_loss<double>(c_pred, bio, b_ref)->value[0] == 0.0);

    // gradient flows into C_pred but never into the frozen parameters
    auto perturbed = random_input({1, 1, 16, 8}, 61, 0.0, 1.0);
    auto loss = bio_consistency_loss<double>(perturbed, bio, b_ref);
    ag::backward(loss);
    for (auto& [name, p] : bio.store().items())
        for (size_t i = 0; i < p->grad.numel(); ++i) CHECK(p->grad[i] == 0.0);
    double g = 0.0;
    for (size_t i = 0; i < perturbed->grad.numel(); ++i) g += std::abs(perturbed->grad[i]);
    CHECK(g > 0.0);

    const auto r = gradcheck(
        [&](auto& in) { return bio_consistency_loss<double>(in[0], bio, b_ref); }, {perturbed},
        1e-5);
    CHECK(r.max_rel_err < 1e-3);
}

TEST_CASE("Eq.5: paper weights, zero parts, arithmetic, linearity in each lambda") {
    LossWeights<double> w;  // (1, 1, 0.01) defaults match the paper setting
    CHECK(w.seg_multilayers == 1.0);
    CHECK(w.seg_choroid == 1.0);
    CHECK(w.bio_choroid == 0.01);

    auto part = [](double v) { return ag::make_var(Tensor4<double>(Shape4{1, 1, 1, 1}, v), true); };
    CHECK(total_loss<double>(part(0), part(0), part(0), w)->value[0] == 0.0);
    CHECK(total_loss<double>(part(0.3), part(0.2), part(5.0), w)->value[0] ==
          doctest::Approx(0.55).epsilon(1e-12));

    // linear in each lambda: L(a*k) - L(0) scales with k
    Rng rng(70);
    for (int i = 0; i < 20; ++i) {
        LossWeights<double> w2{rng.uniform(0, 2), rng.uniform(0, 2), rng.uniform(0, 2)};
        const double l1 = rng.uniform(0, 3), l2 = rng.uniform(0, 3), l3 = rng.uniform(0, 3);
        const double base = total_loss<double>(part(l1), part(l2), part(l3), w2)->value[0];
        LossWeights<double> w3 = w2;
        w3.bio_choroid *= 2.0;
        const double doubled = total_loss<double>(part(l1), part(l2), part(l3), w3)->value[0];
        CHECK(doubled - base == doctest::Approx(w2.bio_choroid * l3).epsilon(1e-9));
    }

    LossWeights<double> neg;
    neg.seg_choroid = -1.0;
    CHECK_THROWS_AS(total_loss<double>(part(1), part(1), part(1), neg), DataError);
}

TEST_CASE("biomarker net: trains to val MAE <= 2 px on phantom masks") {
    const auto& outcome = trained_bio();
    CHECK(outcome.val_mae_px <= 2.0);
    CHECK(outcome.converged);
    CHECK(outcome.net->frozen());
}

TEST_CASE("biomarker net: uniform 10-px band predicts within 2 px; empty mask >= 0") {
    const auto& outcome = trained_bio();
    RegionMask band;
    band.mask = ImageU8(80, 48, 0);
    for (int c = 0; c < 48; ++c)
        for (int r = 40; r < 50; ++r) band.mask.at(r, c) = 1;
    std::vector<const RegionMask*> ptrs{&band};
    const auto b = outcome.net->biomarker(ag::constant(masks_to_tensor(ptrs)));
    CHECK(b->value[0] == doctest::Approx(10.0).epsilon(0.2));

    RegionMask empty;
    empty.mask = ImageU8(80, 48, 0);
    std::vector<const RegionMask*> eptrs{&empty};
    const auto be = outcome.net->biomarker(ag::constant(masks_to_tensor(eptrs)));
    CHECK(be->value[0] >= 0.0f);
}

TEST_CASE("bio consistency loss grows monotonically with mask dilation") {
    const auto& outcome = trained_bio();
    // noiseless thin-choroid sample so every dilation step stays inside the
    // regressor's trained thickness range
    auto cfg = small_cfg(777);
    cfg.speckle_contrast = 0.0f;
    cfg.csi_blur_sigma_px = 0.0f;
    cfg.layer_thickness_spread_frac = 0.0f;
    cfg.layer_mean_thicknesses_px[kChoroid] = 10;
    const auto s = phantom::generate_bscan(cfg, 0);

    std::vector<const RegionMask*> gt_ptr{&s.choroid_mask};
    auto gt_var = ag::constant(masks_to_tensor(gt_ptr));
    auto b_ref = ag::constant(outcome.net->biomarker(gt_var)->value);

    double prev = -1.0;
    for (int k : {1, 2, 4}) {
        RegionMask dilated;
        dilated.mask = imgproc::dilate(s.choroid_mask.mask, k);
        std::vector<const RegionMask*> ptrs{&dilated};
        auto c_pred = ag::constant(masks_to_tensor(ptrs));
        const double loss =
            bio_consistency_loss<float>(c_pred, *outcome.net, b_ref)->value[0];
        CHECK(loss > prev);
        prev = loss;
    }
}

TEST_CASE("ordered layer decode: monotone columns, argmax preserved when ordered") {
    Rng rng(314);
    ag::Tensor4<real> probs(ag::Shape4{1, kNumLayers, 24, 8});
    for (auto& v : probs.v) v = float(rng.uniform(0.0, 1.0));
    const auto decoded = bionet::ordered_layer_decode(probs);
    CHECK(layer_order_valid(decoded));

    // near-one-hot ordered stack: decoding equals the argmax
    ag::Tensor4<real> clean(ag::Shape4{1, kNumLayers, 24, 8}, 0.01f);
    for (int r = 0; r < 24; ++r)
        for (int c = 0; c < 8; ++c) clean.at(0, r / 2, r, c) = 0.9f;
    const auto d2 = bionet::ordered_layer_decode(clean);
    for (int r = 0; r < 24; ++r)
        for (int c = 0; c < 8; ++c) CHECK(d2.labels.at(r, c) == r / 2);
}

TEST_CASE("postprocess: empty probability map flags an empty result") {
    bool flag = false;
    const auto m = postprocess_choroid_prob(ImageF(16, 16, 0.1f), 0.5f, &flag);
    CHECK(flag);
    CHECK(m.count() == 0);
}

TEST_CASE("postprocess: keeps the largest component and single-run columns") {
    ImageF prob(16, 16, 0.0f);
    for (int r = 4; r < 9; ++r)
        for (int c = 0; c < 16; ++c) prob.at(r, c) = 0.9f;
    prob.at(14, 2) = 0.9f;  // small spurious blob
    bool flag = true;
    const auto m = postprocess_choroid_prob(prob, 0.5f, &flag);
    CHECK_FALSE(flag);
    CHECK(m.mask.at(5, 3) == 1);
    CHECK(m.mask.at(14, 2) == 0);
    CHECK_NOTHROW(boundary_from_mask(m));
}

TEST_CASE("train_bionet: lambda3 = 0 reproduces U-Net+GMS bit-for-bit") {
    auto samples = make_samples(6, 3000);
    train::TrainConfig cfg;
    cfg.initial_lr = 1e-3;
    cfg.max_epochs = 1;
    cfg.batch_size = 2;
    cfg.seed = 42;
    cfg.val_fraction = 0.0;
    NetConfig nc;
    nc.levels = 3;
    nc.global_base = 4;
    nc.local_base = 4;
    nc.bio_base = 4;

    // frozen (untrained) biomarker net for the Full variant
    auto bio = std::make_shared<nn::BiomarkerNet<real>>(derive_seed(cfg.seed, "bio_init"), 4);
    bio->freeze();

    LossWeights<real> w_zero;
    w_zero.bio_choroid = 0.0f;
    const auto full = train_bionet(samples, bio, cfg, w_zero, Ablation::Full, nc);
    const auto gms = train_bionet(samples, nullptr, cfg, w_zero, Ablation::UnetGms, nc);

    const auto a = full.models.local_seg->store().state_dict();
    const auto b = gms.models.local_seg->store().state_dict();
    for (const auto& [k, t] : a) CHECK(b.at(k).v == t.v);
    const auto ga = full.models.global_seg->store().state_dict();
    const auto gb = gms.models.global_seg->store().state_dict();
    for (const auto& [k, t] : ga) CHECK(gb.at(k).v == t.v);
}

TEST_CASE("train_bionet: ablation structure (U-Net+Bio has no global module)") {
    auto samples = make_samples(4, 4000);
    train::TrainConfig cfg;
    cfg.initial_lr = 1e-3;
    cfg.max_epochs = 1;
    cfg.batch_size = 2;
    cfg.seed = 7;
    cfg.val_fraction = 0.0;
    NetConfig nc;
    nc.levels = 3;
    nc.global_base = 4;
    nc.local_base = 4;
    nc.bio_base = 4;

    auto bio = std::make_shared<nn::BiomarkerNet<real>>(1, 4);
    bio->freeze();
    const auto out = train_bionet(samples, bio, cfg, {}, Ablation::UnetBio, nc);
    CHECK(out.models.global_seg == nullptr);
    CHECK(out.models.local_seg != nullptr);

    const auto base = train_bionet(samples, nullptr, cfg, {}, Ablation::Baseline, nc);
    CHECK(base.models.global_seg == nullptr);
    CHECK(base.models.bio == nullptr);

    const auto gms = train_bionet(samples, nullptr, cfg, {}, Ablation::Gms, nc);
    CHECK(gms.models.local_seg == nullptr);
    CHECK(gms.models.global_seg != nullptr);

    // segment_choroid works for every variant
    for (const auto* m : {&out.models, &base.models, &gms.models}) {
        const auto res = segment_choroid(samples[0].image, *m);
        CHECK(res.choroid.mask.same_shape(samples[0].image));
        CHECK(res.layers.labels.same_shape(samples[0].image));
    }

    // unfrozen biomarker net is rejected
    auto raw = std::make_shared<nn::BiomarkerNet<real>>(2, 4);
    CHECK_THROWS_AS(train_bionet(samples, raw, cfg, {}, Ablation::Full, nc), DataError);
}

TEST_CASE("bionet checkpoint: save -> load -> identical segmentation") {
    auto samples = make_samples(4, 5000);
    train::TrainConfig cfg;
    cfg.initial_lr = 1e-3;
    cfg.max_epochs = 1;
    cfg.batch_size = 2;
    cfg.seed = 11;
    cfg.val_fraction = 0.0;
    NetConfig nc;
    nc.levels = 3;
    nc.global_base = 4;
    nc.local_base = 4;

    const auto out = train_bionet(samples, nullptr, cfg, {}, Ablation::UnetGms, nc);
    const auto dir = std::filesystem::temp_directory_path() / "oct_bionet_ckpt";
    std::filesystem::create_directories(dir);
    out.models.save(dir / "m.ckpt");
    const auto loaded = BioNetModels::load(dir / "m.ckpt", Ablation::UnetGms, nc, nullptr);

    const auto a = segment_choroid(samples[0].image, out.models);
    const auto b = segment_choroid(samples[0].image, loaded);
    CHECK(a.choroid.mask == b.choroid.mask);
    CHECK(a.layers.labels == b.layers.labels);
}
