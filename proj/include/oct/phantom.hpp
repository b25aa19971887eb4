#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include "oct/types.hpp"

namespace oct::phantom {

namespace fs = std::filesystem;

struct PhantomConfig {
    uint64_t seed = 0;
    int width = 192;   // A-lines
    int height = 192;  // depth rows
    int frames = 64;

    // per-layer mean thickness in px; background-below extends to the bottom
    std::array<float, kNumLayers> layer_mean_thicknesses_px = {36, 10, 12, 8,  8,  6,
                                                               16, 8,  6,  40, 22, 10};
    // per-sample relative spread of the layer thicknesses (each layer drawn
    // once per sample as mean * (1 ± spread)); gives the population its
    // thickness variation
    float layer_thickness_spread_frac = 0.0f;
    float boundary_wiggle_amplitude_px = 3.0f;
    std::array<float, kNumLayers> layer_reflectances = {0.05f, 0.80f, 0.35f, 0.45f, 0.25f, 0.45f,
                                                        0.15f, 0.55f, 0.95f, 0.55f, 0.35f, 0.05f};
    float speckle_contrast = 0.15f;  // std/mean of multiplicative noise, [0,1)

    // retinal vessels (in the GCL band; these cast the shadows)
    int vessel_count_min = 3, vessel_count_max = 6;
    float vessel_radius_min_px = 2.0f, vessel_radius_max_px = 4.0f;
    float shadow_attenuation = 0.35f;  // (0,1], 1 = no shadow

    float csi_blur_sigma_px = 1.5f;

    // choroidal vasculature (the content being visualized)
    int choroid_vessel_count_min = 8, choroid_vessel_count_max = 14;
    float choroid_vessel_radius_min_px = 2.0f, choroid_vessel_radius_max_px = 5.0f;
    float choroid_vessel_darkness = 0.6f;

    float axial_pitch_um = kDefaultAxialPitchUm;
    float lateral_pitch_um = kDefaultLateralPitchUm;
    float frame_pitch_um = kDefaultFramePitchUm;

    void validate() const;
};

struct PhantomSample {
    BScan bscan;
    LayerMap layer_map;
    RegionMask choroid_mask;
    ThicknessProfile thickness;           // pixel units (pitch 1.0)
    std::vector<int> shadow_columns;      // A-line columns shadowed in this frame
    ImageF clean_choroid_texture;         // same render without the shadow step
};

// Pure given (config, frame_index): frames of the same config share boundary
// surfaces, vessel paths and choroidal vasculature, so volumes are coherent.
PhantomSample generate_bscan(const PhantomConfig& cfg, int frame_index);

struct PhantomVolume {
    OctVolume volume;
    std::vector<PhantomSample> samples;  // one per frame
    ImageU8 shadow_enface;               // union of shadow columns, (frame, A-line)
    ImageU8 choroid_vessel_enface;       // planted choroidal vasculature, (frame, A-line)
    float planted_vessel_fraction = 0.0f;
};

PhantomVolume generate_volume(const PhantomConfig& cfg);

// Renders the whole volume without the shadow step (clean_choroid_texture
// per frame assembled into a volume).
OctVolume assemble_clean_volume(const PhantomVolume& pv);

struct DatasetManifest {
    fs::path root;
    std::vector<uint64_t> train_seeds;
    std::vector<uint64_t> test_seeds;
};

// Writes train/ and test/ directories of bscan_%05d.png, layers_%05d.png,
// choroid_%05d.png plus a meta.json manifest with per-sample seeds and a
// config echo. Per-sample seeds are disjoint between the splits.
DatasetManifest generate_dataset(const PhantomConfig& cfg, int n_train, int n_test,
                                 const fs::path& out_dir);

}  // namespace oct::phantom
