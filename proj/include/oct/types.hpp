#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "oct/image.hpp"

namespace oct {

// Canonical 12-layer label list.
enum Layer : uint8_t {
    kBackgroundAbove = 0,
    kRNFL = 1,
    kGCL = 2,
    kIPL = 3,
    kINL = 4,
    kOPL = 5,
    kONL = 6,
    kPRL = 7,
    kRPE = 8,
    kChoroid = 9,
    kSclera = 10,
    kBackgroundBelow = 11,
};
inline constexpr int kNumLayers = 12;

// Default physical pitches for generated data: 992 px over ~3 mm of depth.
inline constexpr float kDefaultAxialPitchUm = 3000.0f / 992.0f;
inline constexpr float kDefaultLateralPitchUm = 6000.0f / 512.0f;
inline constexpr float kDefaultFramePitchUm = 6000.0f / 256.0f;

// 3D reflectance grid, axis order (frame, depth-row, A-line column).
struct OctVolume {
    int frames = 0;
    int depth = 0;
    int alines = 0;
    std::vector<float> voxels;  // normalized to [0,1]
    float axial_pitch_um = kDefaultAxialPitchUm;
    float lateral_pitch_um = kDefaultLateralPitchUm;
    float frame_pitch_um = kDefaultFramePitchUm;

    float& at(int f, int r, int a) {
        return voxels[(static_cast<size_t>(f) * depth + r) * alines + a];
    }
    float at(int f, int r, int a) const {
        return voxels[(static_cast<size_t>(f) * depth + r) * alines + a];
    }

    ImageF frame(int f) const {
        ImageF img(depth, alines);
        for (int r = 0; r < depth; ++r)
            for (int a = 0; a < alines; ++a) img.at(r, a) = at(f, r, a);
        return img;
    }
};

struct BScan {
    ImageF pixels;  // (depth-row, A-line)
    float axial_pitch_um = kDefaultAxialPitchUm;
    float lateral_pitch_um = kDefaultLateralPitchUm;
};

struct LayerMap {
    ImageU8 labels;  // values 0..11, one per B-scan pixel
};

struct RegionMask {
    ImageU8 mask;  // values 0/1

    int count() const {
        int n = 0;
        for (uint8_t v : mask.raw()) n += v != 0;
        return n;
    }
};

// Fractional depth-row position per A-line column. Columns with no boundary
// carry kNoBoundary; metrics skip them.
struct BoundaryCurve {
    static constexpr float kNoBoundary = -1.0f;
    std::vector<float> rows;

    explicit BoundaryCurve(size_t n = 0, float v = kNoBoundary) : rows(n, v) {}

    size_t size() const { return rows.size(); }
    bool valid(size_t i) const { return rows[i] >= 0.0f; }
};

// Per-A-line choroid thickness plus its mean: the biomarker B.
// Units follow the pitch passed at construction (micrometers for reporting,
// pitch 1.0 for the pixel-unit values used inside losses).
struct ThicknessProfile {
    static constexpr float kInvalid = -1.0f;
    std::vector<float> per_column;
    float mean = 0.0f;

    size_t valid_count() const {
        size_t n = 0;
        for (float v : per_column) n += v >= 0.0f;
        return n;
    }
};

struct EnFaceImage {
    ImageF pixels;  // (frame, A-line), values in [0,1]
};

struct ShadowMask {
    ImageU8 mask;  // en-face, 1 = shadow
};

struct VesselMap {
    ImageU8 map;  // en-face, 1 = vessel
};

}  // namespace oct
