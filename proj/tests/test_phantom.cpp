#include <filesystem>
#include <set>

#include "doctest.h"
#include "oct/enface.hpp"
#include "oct/geometry.hpp"
#include "oct/io.hpp"
#include "oct/phantom.hpp"

using namespace oct;
using namespace oct::phantom;
namespace fs = std::filesystem;

namespace {

PhantomConfig noiseless() {
    PhantomConfig cfg;
    cfg.width = 64;
    cfg.height = 96;
    cfg.frames = 8;
    cfg.layer_mean_thicknesses_px = {12, 6, 8, 6, 6, 5, 8, 6, 5, 18, 10, 4};
    cfg.speckle_contrast = 0.0f;
    cfg.boundary_wiggle_amplitude_px = 0.0f;
    cfg.csi_blur_sigma_px = 0.0f;
    cfg.vessel_count_min = cfg.vessel_count_max = 0;
    cfg.choroid_vessel_count_min = cfg.choroid_vessel_count_max = 0;
    // distinct reflectances so labels are recoverable from intensity
    for (int k = 0; k < kNumLayers; ++k)
        cfg.layer_reflectances[k] = 0.04f + 0.08f * static_cast<float>(k);
    return cfg;
}

}  // namespace

TEST_CASE("phantom: noise-free bands recoverable by intensity thresholding") {
    const auto cfg = noiseless();
    const auto s = generate_bscan(cfg, 0);
    for (int r = 0; r < cfg.height; ++r)
        for (int c = 0; c < cfg.width; ++c) {
            const float v = s.bscan.pixels.at(r, c);
            int best = 0;
            float best_d = 1e9f;
            for (int k = 0; k < kNumLayers; ++k) {
                const float d = std::abs(v - cfg.layer_reflectances[k]);
                if (d < best_d) {
                    best_d = d;
                    best = k;
                }
            }
            CHECK(best == s.layer_map.labels.at(r, c));
        }
}

TEST_CASE("phantom: fixed seed is bit-identical") {
    PhantomConfig cfg;
    cfg.width = 48;
    cfg.height = 80;
    cfg.frames = 4;
    cfg.layer_mean_thicknesses_px = {10, 4, 6, 4, 4, 4, 6, 4, 4, 12, 6, 2};
    cfg.seed = 1234;
    const auto a = generate_bscan(cfg, 2);
    const auto b = generate_bscan(cfg, 2);
    CHECK(a.bscan.pixels == b.bscan.pixels);
    CHECK(a.layer_map.labels == b.layer_map.labels);
    CHECK(a.choroid_mask.mask == b.choroid_mask.mask);
    CHECK(a.clean_choroid_texture == b.clean_choroid_texture);
    CHECK(a.shadow_columns == b.shadow_columns);
}

TEST_CASE("phantom: attenuation 1.0 means clean equals shadowed") {
    PhantomConfig cfg;
    cfg.width = 48;
    cfg.height = 80;
    cfg.frames = 2;
    cfg.layer_mean_thicknesses_px = {10, 4, 6, 4, 4, 4, 6, 4, 4, 12, 6, 2};
    cfg.shadow_attenuation = 1.0f;
    cfg.seed = 5;
    const auto s = generate_bscan(cfg, 0);
    CHECK(s.bscan.pixels == s.clean_choroid_texture);
    CHECK_FALSE(s.shadow_columns.empty());  // vessels exist, shadows are no-ops
}

TEST_CASE("phantom: ground-truth consistency and layer ordering") {
    PhantomConfig cfg;
    cfg.width = 64;
    cfg.height = 96;
    cfg.frames = 4;
    cfg.layer_mean_thicknesses_px = {12, 6, 8, 6, 6, 5, 8, 6, 5, 18, 10, 4};
    cfg.seed = 77;
    for (int f = 0; f < cfg.frames; ++f) {
        const auto s = generate_bscan(cfg, f);
        CHECK(layer_order_valid(s.layer_map));
        CHECK(s.choroid_mask.mask == mask_from_layer(s.layer_map, kChoroid).mask);
        const auto t = thickness_from_mask(s.choroid_mask, 1.0f);
        CHECK(t.mean == s.thickness.mean);
        CHECK(t.per_column == s.thickness.per_column);
    }
}

TEST_CASE("phantom: shadow monotonicity in attenuation") {
    PhantomConfig cfg;
    cfg.width = 64;
    cfg.height = 96;
    cfg.frames = 2;
    cfg.layer_mean_thicknesses_px = {12, 6, 8, 6, 6, 5, 8, 6, 5, 18, 10, 4};
    cfg.seed = 31;
    cfg.shadow_attenuation = 0.2f;
    const auto dark = generate_bscan(cfg, 0);
    cfg.shadow_attenuation = 0.6f;
    const auto lighter = generate_bscan(cfg, 0);
    REQUIRE(dark.shadow_columns == lighter.shadow_columns);
    REQUIRE_FALSE(dark.shadow_columns.empty());

    double mean_dark = 0.0, mean_light = 0.0;
    int n = 0;
    for (int a : dark.shadow_columns)
        for (int r = 0; r < cfg.height; ++r) {
            mean_dark += dark.bscan.pixels.at(r, a);
            mean_light += lighter.bscan.pixels.at(r, a);
            ++n;
        }
    CHECK(mean_dark / n < mean_light / n);
    // pointwise: attenuated pixels never brighter
    for (size_t i = 0; i < dark.bscan.pixels.size(); ++i)
        CHECK(dark.bscan.pixels.raw()[i] <= lighter.bscan.pixels.raw()[i] + 1e-6f);
}

TEST_CASE("phantom volume: frames=1 reduces to generate_bscan") {
    PhantomConfig cfg;
    cfg.width = 48;
    cfg.height = 80;
    cfg.frames = 1;
    cfg.layer_mean_thicknesses_px = {10, 4, 6, 4, 4, 4, 6, 4, 4, 12, 6, 2};
    cfg.seed = 9;
    const auto pv = generate_volume(cfg);
    const auto s = generate_bscan(cfg, 0);
    CHECK(pv.volume.frames == 1);
    CHECK(pv.samples[0].bscan.pixels == s.bscan.pixels);
    CHECK(pv.volume.frame(0) == s.bscan.pixels);
}

TEST_CASE("phantom volume: en-face shadow mask equals union of shadow columns (noiseless)") {
    auto cfg = noiseless();
    cfg.vessel_count_min = cfg.vessel_count_max = 3;
    cfg.shadow_attenuation = 0.3f;
    cfg.seed = 13;
    const auto pv = generate_volume(cfg);

    // recompute from the per-frame lists and compare with the en-face RPE:
    // a column is dark exactly where a shadow was planted
    std::vector<RegionMask> masks;
    for (const auto& s : pv.samples) masks.push_back(s.choroid_mask);
    const auto pair = enface::enface_pair(pv.volume, masks);
    for (int f = 0; f < cfg.frames; ++f) {
        std::set<int> cols(pv.samples[f].shadow_columns.begin(),
                           pv.samples[f].shadow_columns.end());
        for (int a = 0; a < cfg.width; ++a) {
            const bool planted = cols.count(a) > 0;
            CHECK(bool(pv.shadow_enface.at(f, a)) == planted);
            // RPE en-face: shadowed columns strictly darker than clean ones
            if (planted) CHECK(pair.rpe.pixels.at(f, a) < 0.5f);
        }
    }
}

TEST_CASE("phantom volume: planted vessel fraction matches a direct count") {
    PhantomConfig cfg;
    cfg.width = 96;
    cfg.height = 96;
    cfg.frames = 48;
    cfg.layer_mean_thicknesses_px = {12, 6, 8, 6, 6, 5, 8, 6, 5, 18, 10, 4};
    cfg.seed = 21;
    const auto pv = generate_volume(cfg);
    size_t planted = 0;
    for (uint8_t v : pv.choroid_vessel_enface.raw()) planted += v;
    CHECK(pv.planted_vessel_fraction ==
          doctest::Approx(double(planted) / pv.choroid_vessel_enface.size()));
    CHECK(pv.planted_vessel_fraction > 0.02f);
    CHECK(pv.planted_vessel_fraction < 0.8f);
}

TEST_CASE("phantom dataset: deterministic bytes, disjoint split seeds") {
    const fs::path dir = fs::temp_directory_path() / "oct_phantom_ds";
    fs::remove_all(dir);
    PhantomConfig cfg;
    cfg.width = 48;
    cfg.height = 80;
    cfg.frames = 1;
    cfg.layer_mean_thicknesses_px = {10, 4, 6, 4, 4, 4, 6, 4, 4, 12, 6, 2};
    cfg.seed = 2024;
    const auto m1 = generate_dataset(cfg, 4, 3, dir / "a");
    const auto m2 = generate_dataset(cfg, 4, 3, dir / "b");

    CHECK(m1.train_seeds == m2.train_seeds);
    for (uint64_t s : m1.test_seeds)
        CHECK(std::find(m1.train_seeds.begin(), m1.train_seeds.end(), s) == m1.train_seeds.end());

    for (const std::string split : {"train", "test"}) {
        for (const auto& e : fs::directory_iterator(dir / "a" / split)) {
            const auto rel = e.path().filename();
            CHECK(io::hash_file(e.path()) == io::hash_file(dir / "b" / split / rel));
        }
    }
    fs::remove_all(dir);
}

TEST_CASE("phantom: config invariants rejected") {
    PhantomConfig cfg;
    cfg.layer_mean_thicknesses_px = {50, 50, 50, 50, 50, 50, 50, 50, 50, 50, 50, 50};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = PhantomConfig{};
    cfg.shadow_attenuation = 0.0f;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = PhantomConfig{};
    cfg.speckle_contrast = 1.0f;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = PhantomConfig{};
    cfg.layer_reflectances[3] = cfg.layer_reflectances[4];
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
