#include "doctest.h"
#include "oct/shadow.hpp"

using namespace oct;
using namespace oct::shadow;

TEST_CASE("refine_mask: empty stays empty") {
    ShadowMask m;
    m.mask = ImageU8(32, 32, 0);
    CHECK(refine_mask(m).mask == m.mask);
}

TEST_CASE("refine_mask: 1-px line becomes ~7 px wide (1 + 2*3)") {
    ShadowMask m;
    m.mask = ImageU8(41, 41, 0);
    for (int c = 0; c < 41; ++c) m.mask.at(20, c) = 1;
    const auto r = refine_mask(m);
    int width = 0;
    for (int row = 0; row < 41; ++row) width += r.mask.at(row, 20);
    CHECK(width == 7);
}

TEST_CASE("refine_mask: collinear segments with a 2-px gap merge") {
    ShadowMask m;
    m.mask = ImageU8(21, 41, 0);
    for (int c = 4; c < 18; ++c) m.mask.at(10, c) = 1;
    for (int c = 20; c < 36; ++c) m.mask.at(10, c) = 1;
    const auto r = refine_mask(m);
    CHECK(r.mask.at(10, 18) == 1);
    CHECK(r.mask.at(10, 19) == 1);
    // one connected component after refinement
    int n = 0;
    imgproc::connected_components(r.mask, &n);
    CHECK(n == 1);
}

TEST_CASE("refine_mask: superset property on 100 random masks") {
    Rng rng(99);
    for (int it = 0; it < 100; ++it) {
        ShadowMask m;
        m.mask = ImageU8(24, 36, 0);
        const int strokes = static_cast<int>(rng.uniform_int(0, 4));
        for (int s = 0; s < strokes; ++s) {
            int r = static_cast<int>(rng.uniform_int(0, 23));
            int c = static_cast<int>(rng.uniform_int(0, 35));
            const int len = static_cast<int>(rng.uniform_int(1, 20));
            for (int i = 0; i < len && c < 36; ++i, ++c) m.mask.at(r, std::min(35, c)) = 1;
        }
        const auto refined = refine_mask(m);
        for (size_t i = 0; i < m.mask.size(); ++i)
            if (m.mask.raw()[i]) CHECK(refined.mask.raw()[i] == 1);
    }
}

TEST_CASE("vessel mask sampler: never empty, widths in range") {
    Rng rng(7);
    for (int i = 0; i < 50; ++i) {
        const auto m = sample_vessel_mask(rng, 48, 48);
        int on = 0;
        for (uint8_t v : m.raw()) on += v != 0;
        CHECK(on > 0);
        CHECK(on < 48 * 48);
    }
}

TEST_CASE("collapse guard trips after 50 consecutive near-zero losses") {
    CollapseGuard guard(1e-4, 50);
    for (int i = 0; i < 49; ++i) CHECK_NOTHROW(guard.observe(1e-6, "edge"));
    CHECK_NOTHROW(guard.observe(0.5, "edge"));  // healthy step resets the count
    for (int i = 0; i < 49; ++i) CHECK_NOTHROW(guard.observe(1e-6, "edge"));
    CHECK_THROWS_AS(guard.observe(1e-6, "edge"), TrainError);
}

TEST_CASE("deshadow: stage order enforced") {
    DeshadowModel model(1);
    std::vector<ImageF> textures{ImageF(48, 48, 0.5f)};
    DeshadowTrainConfig cfg;
    cfg.steps = 1;
    cfg.batch = 1;
    CHECK_THROWS_AS(train_deshadow_stage(model, textures, cfg, Stage::Joint), ConfigError);
    CHECK_THROWS_AS(train_deshadow_stage(model, textures, cfg, Stage::Inpaint), ConfigError);
}

TEST_CASE("deshadow: checkpoint round-trip preserves stage and weights") {
    DeshadowModel model(3);
    model.stages_done = 2;
    const auto dir = std::filesystem::temp_directory_path() / "oct_deshadow_ckpt";
    std::filesystem::create_directories(dir);
    model.save(dir / "m.ckpt");
    const auto loaded = DeshadowModel::load(dir / "m.ckpt");
    CHECK(loaded.stages_done == 2);
    const auto a = model.g_edge.store().state_dict();
    const auto b = loaded.g_edge.store().state_dict();
    for (const auto& [k, t] : a) CHECK(b.at(k).v == t.v);
}

TEST_CASE("eliminate_shadows: empty mask returns the input bit-identically") {
    DeshadowModel model(5);
    model.stages_done = 2;  // untrained weights are fine: composition rule is what matters
    EnFaceImage img;
    img.pixels = ImageF(32, 48);
    Rng rng(11);
    for (auto& v : img.pixels.raw()) v = float(rng.uniform());
    ShadowMask empty;
    empty.mask = ImageU8(32, 48, 0);
    const auto out = eliminate_shadows(img, empty, model);
    CHECK(out.pixels == img.pixels);
}

TEST_CASE("eliminate_shadows: outside-mask pixels bit-identical, inside in [0,1]") {
    DeshadowModel model(6);
    model.stages_done = 2;
    EnFaceImage img;
    img.pixels = ImageF(32, 48);
    Rng rng(13);
    for (auto& v : img.pixels.raw()) v = float(rng.uniform());
    ShadowMask m;
    m.mask = ImageU8(32, 48, 0);
    for (int r = 8; r < 16; ++r)
        for (int c = 10; c < 30; ++c) m.mask.at(r, c) = 1;
    const auto out = eliminate_shadows(img, m, model);
    for (int r = 0; r < 32; ++r)
        for (int c = 0; c < 48; ++c) {
            if (m.mask.at(r, c)) {
                CHECK(out.pixels.at(r, c) >= 0.0f);
                CHECK(out.pixels.at(r, c) <= 1.0f);
            } else {
                CHECK(out.pixels.at(r, c) == img.pixels.at(r, c));
            }
        }
}

TEST_CASE("eliminate_shadows: refuses masks covering > 60%") {
    DeshadowModel model(7);
    model.stages_done = 2;
    EnFaceImage img;
    img.pixels = ImageF(20, 20, 0.5f);
    ShadowMask m;
    m.mask = ImageU8(20, 20, 1);
    CHECK_THROWS_AS(eliminate_shadows(img, m, model), DataError);
}

TEST_CASE("eliminate_shadows: deterministic given fixed weights and inputs") {
    DeshadowModel model(8);
    model.stages_done = 2;
    EnFaceImage img;
    img.pixels = ImageF(24, 24);
    Rng rng(17);
    for (auto& v : img.pixels.raw()) v = float(rng.uniform());
    ShadowMask m;
    m.mask = ImageU8(24, 24, 0);
    for (int c = 0; c < 24; ++c) m.mask.at(12, c) = 1;
    const auto a = eliminate_shadows(img, m, model);
    const auto b = eliminate_shadows(img, m, model);
    CHECK(a.pixels == b.pixels);
}

TEST_CASE("deshadow: one edge-stage step runs and updates weights") {
    DeshadowModel model(9);
    std::vector<ImageF> textures;
    Rng rng(19);
    ImageF tex(64, 64);
    for (auto& v : tex.raw()) v = float(rng.uniform(0.3, 0.8));
    textures.push_back(tex);

    const auto before = model.g_edge.store().state_dict();
    DeshadowTrainConfig cfg;
    cfg.steps = 2;
    cfg.batch = 2;
    cfg.patch = 32;
    train_deshadow_stage(model, textures, cfg, Stage::Edge);
    CHECK(model.stages_done == 1);
    const auto after = model.g_edge.store().state_dict();
    double delta = 0.0;
    for (const auto& [k, t] : before)
        for (size_t i = 0; i < t.numel(); ++i) delta += std::abs(double(after.at(k).v[i]) - t.v[i]);
    CHECK(delta > 0.0);
}
