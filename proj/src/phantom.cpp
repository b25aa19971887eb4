#include "oct/phantom.hpp"

#include <cmath>

#include "oct/common.hpp"
#include "oct/geometry.hpp"
#include "oct/io.hpp"
#include "oct/kernels.hpp"
#include "oct/rng.hpp"

#include "json.hpp"

namespace oct::phantom {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

// Smooth band-limited field over (frame, a-line): a small sum of random
// low-frequency sinusoids, normalized to the requested amplitude.
struct WiggleField {
    struct Term {
        double amp, fx, ff, phase;
    };
    std::vector<Term> terms;
    double scale = 0.0;

    static WiggleField draw(Rng& rng, double amplitude) {
        WiggleField f;
        if (amplitude <= 0.0) return f;
        double total = 0.0;
        for (int j = 0; j < 4; ++j) {
            Term t;
            t.amp = rng.uniform(0.3, 1.0);
            t.fx = rng.uniform(0.5, 3.0);
            t.ff = rng.uniform(0.5, 2.0);
            t.phase = rng.uniform(0.0, kTwoPi);
            total += t.amp;
            f.terms.push_back(t);
        }
        f.scale = amplitude / total;
        return f;
    }

    double at(double frame_u, double aline_u) const {
        double v = 0.0;
        for (const auto& t : terms)
            v += t.amp * std::sin(kTwoPi * (t.fx * aline_u + t.ff * frame_u) + t.phase);
        return v * scale;
    }
};

struct RetinalVessel {
    double center;  // mean A-line position
    double radius;
    WiggleField path;  // lateral drift across frames

    double column_at(double frame_u, int width) const {
        const double c = center + path.at(frame_u, 0.0);
        return std::clamp(c, 0.0, double(width - 1));
    }
};

// Everything derived deterministically from the config seed; frame content
// is then pure in (geometry, frame_index).
struct Geometry {
    std::vector<WiggleField> interface_wiggle;  // one per interface 1..11
    WiggleField bowl;                           // shared curvature
    std::array<float, kNumLayers> thicknesses;  // per-sample layer thicknesses
    std::vector<RetinalVessel> vessels;
    ImageU8 choroid_vessels;  // (frames, width) planted vasculature

    static Geometry build(const PhantomConfig& cfg) {
        Geometry g;
        Rng trng(derive_seed(cfg.seed, "thicknesses"));
        for (int k = 0; k < kNumLayers; ++k) {
            const double scale =
                1.0 + cfg.layer_thickness_spread_frac * trng.uniform(-1.0, 1.0);
            g.thicknesses[k] = static_cast<float>(cfg.layer_mean_thicknesses_px[k] * scale);
        }
        Rng brng(derive_seed(cfg.seed, "boundaries"));
        g.bowl = WiggleField::draw(brng, cfg.boundary_wiggle_amplitude_px * 1.5);
        for (int k = 1; k < kNumLayers; ++k)
            g.interface_wiggle.push_back(WiggleField::draw(brng, cfg.boundary_wiggle_amplitude_px));

        Rng vrng(derive_seed(cfg.seed, "vessels"));
        const int n = static_cast<int>(vrng.uniform_int(cfg.vessel_count_min, cfg.vessel_count_max));
        for (int i = 0; i < n; ++i) {
            RetinalVessel v;
            v.center = vrng.uniform(0.05, 0.95) * cfg.width;
            v.radius = vrng.uniform(cfg.vessel_radius_min_px, cfg.vessel_radius_max_px);
            v.path = WiggleField::draw(vrng, cfg.width * 0.04);
            g.vessels.push_back(v);
        }

        g.choroid_vessels = draw_choroid_vessels(cfg);
        return g;
    }

    // Random-walk curvilinear vessels on the en-face grid.
    static ImageU8 draw_choroid_vessels(const PhantomConfig& cfg) {
        ImageU8 map(cfg.frames, cfg.width, 0);
        Rng rng(derive_seed(cfg.seed, "choroid_vessels"));
        const int n =
            static_cast<int>(rng.uniform_int(cfg.choroid_vessel_count_min, cfg.choroid_vessel_count_max));
        for (int i = 0; i < n; ++i) {
            const double radius =
                rng.uniform(cfg.choroid_vessel_radius_min_px, cfg.choroid_vessel_radius_max_px);
            double y = rng.uniform(0.0, cfg.frames - 1.0);
            double x = rng.uniform(0.0, cfg.width - 1.0);
            double dir = rng.uniform(0.0, kTwoPi);
            const int steps = static_cast<int>(1.5 * (cfg.frames + cfg.width));
            for (int s = 0; s < steps; ++s) {
                stamp_disk(map, y, x, radius);
                dir += rng.normal(0.0, 0.25);
                y += std::sin(dir);
                x += std::cos(dir);
                if (y < 0 || y > cfg.frames - 1 || x < 0 || x > cfg.width - 1) break;
            }
        }
        return map;
    }

    static void stamp_disk(ImageU8& map, double cy, double cx, double radius) {
        const int r0 = std::max(0, static_cast<int>(std::floor(cy - radius)));
        const int r1 = std::min(map.height() - 1, static_cast<int>(std::ceil(cy + radius)));
        const int c0 = std::max(0, static_cast<int>(std::floor(cx - radius)));
        const int c1 = std::min(map.width() - 1, static_cast<int>(std::ceil(cx + radius)));
        for (int r = r0; r <= r1; ++r)
            for (int c = c0; c <= c1; ++c)
                if ((r - cy) * (r - cy) + (c - cx) * (c - cx) <= radius * radius)
                    map.at(r, c) = 1;
    }
};

std::vector<std::array<int, kNumLayers + 1>> interface_rows(const PhantomConfig& cfg,
                                                            const Geometry& g, int frame) {
    const double fu = cfg.frames > 1 ? double(frame) / cfg.frames : 0.0;
    std::vector<std::array<int, kNumLayers + 1>> rows(cfg.width);
    std::array<double, kNumLayers + 1> base{};
    base[0] = 0.0;
    for (int k = 1; k <= kNumLayers; ++k) base[k] = base[k - 1] + g.thicknesses[k - 1];
    for (int a = 0; a < cfg.width; ++a) {
        const double au = double(a) / cfg.width;
        const double bowl = g.bowl.at(fu, au);
        auto& r = rows[a];
        r[0] = 0;
        for (int k = 1; k < kNumLayers; ++k) {
            const double pos = base[k] + bowl + g.interface_wiggle[k - 1].at(fu, au);
            r[k] = std::clamp(static_cast<int>(std::lround(pos)), r[k - 1], cfg.height);
        }
        r[kNumLayers] = cfg.height;
    }
    return rows;
}

}  // namespace

void PhantomConfig::validate() const {
    OCT_REQUIRE_CFG(width >= 8 && height >= 8 && frames >= 1, "phantom dims too small");
    float sum = 0.0f;
    for (float t : layer_mean_thicknesses_px) {
        OCT_REQUIRE_CFG(t >= 0.0f, "layer thickness must be >= 0");
        sum += t;
    }
    OCT_REQUIRE_CFG(sum < height, "layer thicknesses must sum below the image height");
    for (int k = 0; k + 1 < kNumLayers; ++k)
        OCT_REQUIRE_CFG(std::abs(layer_reflectances[k] - layer_reflectances[k + 1]) >= 0.05f,
                        "adjacent layer reflectances must differ by >= 0.05");
    for (float r : layer_reflectances)
        OCT_REQUIRE_CFG(r >= 0.0f && r <= 1.0f, "reflectances must be in [0,1]");
    OCT_REQUIRE_CFG(speckle_contrast >= 0.0f && speckle_contrast < 1.0f,
                    "speckle_contrast must be in [0,1)");
    OCT_REQUIRE_CFG(shadow_attenuation > 0.0f && shadow_attenuation <= 1.0f,
                    "shadow_attenuation must be in (0,1]");
    OCT_REQUIRE_CFG(vessel_count_min >= 0 && vessel_count_max >= vessel_count_min,
                    "bad vessel count range");
    OCT_REQUIRE_CFG(vessel_radius_min_px > 0 && vessel_radius_max_px >= vessel_radius_min_px,
                    "bad vessel radius range");
    OCT_REQUIRE_CFG(csi_blur_sigma_px >= 0.0f, "csi_blur_sigma_px must be >= 0");
    OCT_REQUIRE_CFG(layer_thickness_spread_frac >= 0.0f && layer_thickness_spread_frac < 1.0f,
                    "layer_thickness_spread_frac must be in [0,1)");
    OCT_REQUIRE_CFG(axial_pitch_um > 0 && lateral_pitch_um > 0 && frame_pitch_um > 0,
                    "pitches must be positive");
}

PhantomSample generate_bscan(const PhantomConfig& cfg, int frame_index) {
    cfg.validate();
    OCT_REQUIRE(frame_index >= 0 && frame_index < cfg.frames, "frame index out of range");
    const Geometry g = Geometry::build(cfg);

    const auto rows = interface_rows(cfg, g, frame_index);
    const double fu = cfg.frames > 1 ? double(frame_index) / cfg.frames : 0.0;

    PhantomSample s;
    s.layer_map.labels = ImageU8(cfg.height, cfg.width);
    for (int a = 0; a < cfg.width; ++a)
        for (int k = 0; k < kNumLayers; ++k)
            for (int r = rows[a][k]; r < rows[a][k + 1]; ++r)
                s.layer_map.labels.at(r, a) = static_cast<uint8_t>(k);

    // structure: per-layer reflectance, choroidal vasculature darkening
    ImageF img(cfg.height, cfg.width);
    for (int r = 0; r < cfg.height; ++r)
        for (int a = 0; a < cfg.width; ++a)
            img.at(r, a) = cfg.layer_reflectances[s.layer_map.labels.at(r, a)];
    for (int a = 0; a < cfg.width; ++a) {
        if (!g.choroid_vessels.at(frame_index, a)) continue;
        for (int r = rows[a][kChoroid]; r < rows[a][kChoroid + 1]; ++r)
            img.at(r, a) *= (1.0f - cfg.choroid_vessel_darkness);
    }

    // retinal vessels: dark blobs centered in the GCL band
    struct Placed {
        int col, bottom, radius;
    };
    std::vector<Placed> placed;
    for (const auto& v : g.vessels) {
        const int vc = static_cast<int>(std::lround(v.column_at(fu, cfg.width)));
        const int band_top = rows[vc][kGCL], band_bot = rows[vc][kGCL + 1];
        if (band_bot <= band_top) continue;
        const int cy = (band_top + band_bot) / 2;
        const int rr = static_cast<int>(std::lround(v.radius));
        for (int r = std::max(0, cy - rr); r <= std::min(cfg.height - 1, cy + rr); ++r)
            for (int a = std::max(0, vc - rr); a <= std::min(cfg.width - 1, vc + rr); ++a)
                if ((r - cy) * (r - cy) + (a - vc) * (a - vc) <= rr * rr) img.at(r, a) *= 0.3f;
        placed.push_back({vc, cy + rr + 1, rr});
    }

    // soften the choroid-sclera interface
    if (cfg.csi_blur_sigma_px > 0.0f) {
        const ImageF blurred =
            kernels::gaussian_blur(img, cfg.csi_blur_sigma_px, kernels::default_backend());
        const int half = static_cast<int>(std::ceil(3.0f * cfg.csi_blur_sigma_px));
        for (int a = 0; a < cfg.width; ++a) {
            const int csi = rows[a][kSclera];
            for (int r = std::max(0, csi - half); r < std::min(cfg.height, csi + half); ++r)
                img.at(r, a) = blurred.at(r, a);
        }
    }

    // multiplicative speckle, unit mean
    if (cfg.speckle_contrast > 0.0f) {
        Rng nrng(derive_seed(derive_seed(cfg.seed, "speckle"), std::to_string(frame_index)));
        const double c2 = double(cfg.speckle_contrast) * cfg.speckle_contrast;
        const double shape = 1.0 / c2;
        for (auto& px : img.raw())
            px = static_cast<float>(std::clamp(px * nrng.gamma(shape, c2), 0.0, 1.0));
    }

    s.clean_choroid_texture = img;

    // shadow columns: attenuate everything below each vessel
    ImageF shadowed = img;
    std::vector<uint8_t> is_shadow(cfg.width, 0);
    for (const auto& p : placed)
        for (int a = std::max(0, p.col - p.radius); a <= std::min(cfg.width - 1, p.col + p.radius);
             ++a) {
            is_shadow[a] = 1;
            for (int r = p.bottom; r < cfg.height; ++r) shadowed.at(r, a) *= cfg.shadow_attenuation;
        }
    for (int a = 0; a < cfg.width; ++a)
        if (is_shadow[a]) s.shadow_columns.push_back(a);

    s.bscan.pixels = std::move(shadowed);
    s.bscan.axial_pitch_um = cfg.axial_pitch_um;
    s.bscan.lateral_pitch_um = cfg.lateral_pitch_um;

    s.choroid_mask = mask_from_layer(s.layer_map, kChoroid);
    s.thickness = thickness_from_mask(s.choroid_mask, 1.0f);
    return s;
}

PhantomVolume generate_volume(const PhantomConfig& cfg) {
    cfg.validate();
    PhantomVolume pv;
    pv.samples.resize(cfg.frames);

#pragma omp parallel for schedule(static)
    for (int f = 0; f < cfg.frames; ++f) pv.samples[f] = generate_bscan(cfg, f);

    pv.volume.frames = cfg.frames;
    pv.volume.depth = cfg.height;
    pv.volume.alines = cfg.width;
    pv.volume.axial_pitch_um = cfg.axial_pitch_um;
    pv.volume.lateral_pitch_um = cfg.lateral_pitch_um;
    pv.volume.frame_pitch_um = cfg.frame_pitch_um;
    pv.volume.voxels.resize(size_t(cfg.frames) * cfg.height * cfg.width);
    for (int f = 0; f < cfg.frames; ++f)
        std::copy(pv.samples[f].bscan.pixels.raw().begin(), pv.samples[f].bscan.pixels.raw().end(),
                  pv.volume.voxels.begin() + size_t(f) * cfg.height * cfg.width);

    pv.shadow_enface = ImageU8(cfg.frames, cfg.width, 0);
    for (int f = 0; f < cfg.frames; ++f)
        for (int a : pv.samples[f].shadow_columns) pv.shadow_enface.at(f, a) = 1;

    pv.choroid_vessel_enface = Geometry::build(cfg).choroid_vessels;
    size_t planted = 0;
    for (uint8_t v : pv.choroid_vessel_enface.raw()) planted += v;
    pv.planted_vessel_fraction =
        static_cast<float>(double(planted) / double(pv.choroid_vessel_enface.size()));
    return pv;
}

OctVolume assemble_clean_volume(const PhantomVolume& pv) {
    OctVolume clean = pv.volume;
    const int per = clean.depth * clean.alines;
    for (int f = 0; f < clean.frames; ++f)
        std::copy(pv.samples[f].clean_choroid_texture.raw().begin(),
                  pv.samples[f].clean_choroid_texture.raw().end(),
                  clean.voxels.begin() + size_t(f) * per);
    return clean;
}

DatasetManifest generate_dataset(const PhantomConfig& cfg, int n_train, int n_test,
                                 const fs::path& out_dir) {
    cfg.validate();
    OCT_REQUIRE(n_train >= 1 && n_test >= 1, "n_train and n_test must be >= 1");
    std::error_code ec;
    fs::create_directories(out_dir / "train", ec);
    fs::create_directories(out_dir / "test", ec);
    OCT_REQUIRE(fs::is_directory(out_dir / "train") && fs::is_directory(out_dir / "test"),
                "cannot create dataset directory: " + out_dir.string());

    DatasetManifest m;
    m.root = out_dir;

    auto write_split = [&](const std::string& split, int count, int index_offset,
                           std::vector<uint64_t>& seeds) {
        seeds.resize(count);
#pragma omp parallel for schedule(static)
        for (int i = 0; i < count; ++i) {
            const uint64_t s = derive_seed(cfg.seed, "sample" + std::to_string(index_offset + i));
            seeds[i] = s;
            PhantomConfig c = cfg;
            c.seed = s;
            c.frames = 1;
            const PhantomSample sample = generate_bscan(c, 0);
            char name[32];
            std::snprintf(name, sizeof(name), "%05d.png", i);
            io::write_png(out_dir / split / (std::string("bscan_") + name), sample.bscan.pixels);
            io::write_layers_png(out_dir / split / (std::string("layers_") + name),
                                 sample.layer_map);
            io::write_mask_png(out_dir / split / (std::string("choroid_") + name),
                               sample.choroid_mask);
        }
    };
    write_split("train", n_train, 0, m.train_seeds);
    write_split("test", n_test, n_train, m.test_seeds);

    nlohmann::json meta;
    meta["n_train"] = n_train;
    meta["n_test"] = n_test;
    meta["master_seed"] = cfg.seed;
    meta["train_seeds"] = m.train_seeds;
    meta["test_seeds"] = m.test_seeds;
    meta["config"] = {{"width", cfg.width},
                      {"height", cfg.height},
                      {"speckle_contrast", cfg.speckle_contrast},
                      {"boundary_wiggle_amplitude_px", cfg.boundary_wiggle_amplitude_px},
                      {"shadow_attenuation", cfg.shadow_attenuation},
                      {"csi_blur_sigma_px", cfg.csi_blur_sigma_px},
                      {"axial_pitch_um", cfg.axial_pitch_um}};
    io::write_text_file(out_dir / "meta.json", meta.dump(2) + "\n");
    return m;
}

}  // namespace oct::phantom
