#include <filesystem>

#include "doctest.h"
#include "oct/bionet.hpp"
#include "oct/nn.hpp"
#include "oct/training.hpp"

using namespace oct;
using namespace oct::train;
namespace fs = std::filesystem;

namespace {

TrainConfig paper_schedule() {
    TrainConfig cfg;
    cfg.initial_lr = 0.01;
    cfg.lr_drop_epochs = {40, 80, 160, 240};
    cfg.lr_drop_factor = 0.1;
    cfg.batch_size = 4;
    return cfg;
}

}  // namespace

TEST_CASE("lr schedule: drops at 40/80/160/240 to 1/10") {
    const auto cfg = paper_schedule();
    CHECK(lr_at(cfg, 0) == doctest::Approx(0.01));
    CHECK(lr_at(cfg, 39) == doctest::Approx(0.01));
    CHECK(lr_at(cfg, 40) == doctest::Approx(0.001));
    CHECK(lr_at(cfg, 100) == doctest::Approx(0.0001));
    CHECK(lr_at(cfg, 240) == doctest::Approx(1e-6));
}

TEST_CASE("lr schedule is non-increasing in epoch") {
    auto cfg = paper_schedule();
    cfg.lr_drop_epochs = {3, 7, 11, 200};
    double prev = 1e9;
    for (int e = 0; e < 300; ++e) {
        const double lr = lr_at(cfg, e);
        CHECK(lr <= prev);
        prev = lr;
    }
}

TEST_CASE("config invariants rejected") {
    TrainConfig cfg;
    cfg.initial_lr = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    cfg.lr_drop_factor = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("augment: flip twice is the identity; rotation 0 is the identity") {
    ImageF img(8, 8);
    Rng rng(1);
    for (auto& v : img.raw()) v = float(rng.uniform());
    CHECK(hflip(hflip(img)) == img);
    CHECK(rotate_bilinear(img, 0.0) == img);
    ImageU8 m(8, 8);
    for (auto& v : m.raw()) v = uint8_t(rng.uniform_int(0, 1));
    CHECK(rotate_nearest(m, 0.0) == m);
}

TEST_CASE("augment: hflip reverses the thickness vector, mean unchanged") {
    // left-heavy band: thickness decreases with the column index
    RegionMask mask;
    const int h = 32, w = 16;
    mask.mask = ImageU8(h, w, 0);
    for (int c = 0; c < w; ++c)
        for (int r = 4; r < 4 + (w - c); ++r) mask.mask.at(r, c) = 1;
    const auto t = thickness_from_mask(mask, 1.0f);

    RegionMask flipped;
    flipped.mask = hflip(mask.mask);
    const auto tf = thickness_from_mask(flipped, 1.0f);
    CHECK(tf.mean == doctest::Approx(t.mean));
    for (int c = 0; c < w; ++c)
        CHECK(tf.per_column[c] == doctest::Approx(t.per_column[w - 1 - c]));
}

TEST_CASE("train: lr 0 leaves weights unchanged") {
    nn::UNet<float> net(5, 1, 1, 2, 4, nn::Head::Sigmoid);
    const auto before = net.store().state_dict();

    TrainConfig cfg;
    cfg.initial_lr = 1e-30;  // effectively zero update
    cfg.max_epochs = 1;
    cfg.batch_size = 2;
    cfg.val_fraction = 0.0;
    cfg.aug_hflip = false;
    cfg.aug_rotation_deg = 0.0;

    ag::Tensor4<float> x(ag::Shape4{1, 1, 8, 8}, 0.5f);
    ag::Tensor4<float> t(ag::Shape4{1, 1, 8, 8}, 1.0f);
    auto step = [&](const std::vector<int>&, Rng&) -> StepResult<float> {
        auto loss = ag::bce_mean(net.forward(ag::constant(x)), ag::constant(t));
        return {loss, {{"loss_total", loss->value[0]}}};
    };
    auto validate = [](const std::vector<int>&) { return 0.0; };
    std::vector<nn::ParamStore<float>*> stores{&net.store()};
    run_training<float>(cfg, 4, step, validate, stores, "nolr");

    const auto after = net.store().state_dict();
    for (const auto& [name, tens] : before) {
        const auto& a = after.at(name);
        for (size_t i = 0; i < tens.numel(); ++i)
            CHECK(std::abs(a.v[i] - tens.v[i]) < 1e-6f);
    }
}

TEST_CASE("train: overfit oracle - 2 samples, tiny net, loss < 1e-2") {
    nn::UNet<float> net(6, 1, 1, 2, 6, nn::Head::Sigmoid);
    Rng rng(7);
    std::vector<ag::Tensor4<float>> xs, ts;
    for (int k = 0; k < 2; ++k) {
        ag::Tensor4<float> x(ag::Shape4{1, 1, 16, 16});
        ag::Tensor4<float> t(ag::Shape4{1, 1, 16, 16});
        for (size_t i = 0; i < x.numel(); ++i) x.v[i] = float(rng.uniform());
        for (int r = 0; r < 16; ++r)
            for (int c = 0; c < 16; ++c) t.at(0, 0, r, c) = (r > 4 + 3 * k && r < 12) ? 1.f : 0.f;
        xs.push_back(x);
        ts.push_back(t);
    }

    TrainConfig cfg;
    cfg.initial_lr = 3e-3;
    cfg.max_epochs = 200;
    cfg.batch_size = 1;
    cfg.val_fraction = 0.0;
    cfg.aug_hflip = false;
    cfg.aug_rotation_deg = 0.0;
    cfg.seed = 9;

    double last_loss = 1e9;
    auto step = [&](const std::vector<int>& batch, Rng&) -> StepResult<float> {
        const int i = batch[0];
        auto loss = ag::bce_mean(net.forward(ag::constant(xs[i])), ag::constant(ts[i]));
        last_loss = loss->value[0];
        return {loss, {{"loss_total", loss->value[0]}}};
    };
    auto validate = [&](const std::vector<int>&) { return last_loss; };
    std::vector<nn::ParamStore<float>*> stores{&net.store()};
    cfg.early_stop_val = 5e-3;
    const auto out = run_training<float>(cfg, 2, step, validate, stores, "overfit");
    CHECK(out.best_val < 1e-2);
}

TEST_CASE("train: non-finite loss aborts naming the term") {
    nn::UNet<float> net(8, 1, 1, 2, 4, nn::Head::Sigmoid);
    TrainConfig cfg;
    cfg.max_epochs = 1;
    cfg.initial_lr = 0.1;
    cfg.val_fraction = 0.0;
    auto step = [&](const std::vector<int>&, Rng&) -> StepResult<float> {
        auto loss = ag::scalar<float>(std::numeric_limits<float>::quiet_NaN());
        return {loss, {{"loss_badterm", loss->value[0]}}};
    };
    auto validate = [](const std::vector<int>&) { return 0.0; };
    std::vector<nn::ParamStore<float>*> stores{&net.store()};
    try {
        run_training<float>(cfg, 2, step, validate, stores, "nan");
        FAIL("expected TrainError");
    } catch (const TrainError& e) {
        CHECK(std::string(e.what()).find("loss_badterm") != std::string::npos);
    }
}

TEST_CASE("checkpoint: save/load round-trip preserves probe outputs exactly") {
    const fs::path dir = fs::temp_directory_path() / "oct_ckpt_test";
    fs::create_directories(dir);

    nn::UNet<float> net(10, 1, 3, 2, 4, nn::Head::Softmax);
    CheckpointMeta meta;
    meta.epoch = 5;
    meta.config_echo = R"({"note":"probe"})";
    save_checkpoint(dir / "probe.ckpt", net.store().state_dict(), meta);

    ag::Tensor4<float> probe(ag::Shape4{1, 1, 16, 16});
    Rng rng(11);
    for (auto& v : probe.v) v = float(rng.uniform());
    const auto before = net.forward(ag::constant(probe))->value;

    // perturb, reload, compare bitwise
    for (auto& [name, p] : net.store().items()) p->value.v[0] += 1.0f;
    CheckpointMeta meta2;
    net.store().load_state_dict(load_checkpoint<float>(dir / "probe.ckpt", &meta2));
    CHECK(meta2.epoch == 5);
    const auto after = net.forward(ag::constant(probe))->value;
    CHECK(before.v == after.v);
}

TEST_CASE("adam converges on a quadratic") {
    auto p = ag::make_var(ag::Tensor4<float>(ag::Shape4{1, 1, 1, 4}, 3.0f), true);
    Adam<float> opt({p}, 0.9, 0.999, 1e-8);
    for (int i = 0; i < 500; ++i) {
        opt.zero_grad();
        auto loss = ag::mean_all(ag::mul(p, p));
        ag::backward(loss);
        opt.step(0.05);
    }
    for (size_t i = 0; i < p->value.numel(); ++i) CHECK(std::abs(p->value[i]) < 1e-2f);
}
