#include "oct/enface.hpp"

#include <cmath>

#include "oct/common.hpp"
#include "oct/geometry.hpp"
#include "oct/kernels.hpp"

namespace oct::enface {

int rpe_shift_px(float axial_pitch_um) {
    OCT_REQUIRE(axial_pitch_um > 0.0f, "axial pitch must be positive");
    return static_cast<int>(std::lround(20.0f / axial_pitch_um));
}

std::vector<Band> derive_rpe_band(const std::vector<BoundaryCurve>& choroid_upper,
                                  float axial_pitch_um) {
    const int shift = rpe_shift_px(axial_pitch_um);
    std::vector<Band> bands;
    bands.reserve(choroid_upper.size());
    for (const auto& upper : choroid_upper) {
        Band b{BoundaryCurve(upper.size()), BoundaryCurve(upper.size())};
        for (size_t c = 0; c < upper.size(); ++c) {
            if (!upper.valid(c)) continue;
            b.upper.rows[c] = std::max(0.0f, upper.rows[c] - float(shift));
            b.lower.rows[c] = upper.rows[c];
        }
        bands.push_back(std::move(b));
    }
    return bands;
}

Projection project_mean(const OctVolume& vol, const std::vector<Band>& bands) {
    OCT_REQUIRE(static_cast<int>(bands.size()) == vol.frames,
                "need one band per volume frame");
    Projection p;
    p.image.pixels = ImageF(vol.frames, vol.alines);
    p.flagged = ImageU8(vol.frames, vol.alines, 0);
#pragma omp parallel for schedule(static)
    for (int f = 0; f < vol.frames; ++f) {
        OCT_REQUIRE(static_cast<int>(bands[f].upper.size()) == vol.alines,
                    "band width must match A-line count");
        kernels::band_mean_columns(&vol.voxels[size_t(f) * vol.depth * vol.alines], vol.depth,
                                   vol.alines, bands[f].upper.rows.data(),
                                   bands[f].lower.rows.data(), &p.image.pixels.at(f, 0),
                                   &p.flagged.at(f, 0), kernels::Backend::Serial);
    }
    return p;
}

std::vector<Band> choroid_bands(const std::vector<RegionMask>& choroid_masks) {
    std::vector<Band> bands;
    bands.reserve(choroid_masks.size());
    for (const auto& m : choroid_masks) {
        auto [upper, lower] = boundary_from_mask(m);
        bands.push_back(Band{std::move(upper), std::move(lower)});
    }
    return bands;
}

EnFacePair enface_pair(const OctVolume& vol, const std::vector<RegionMask>& choroid_masks) {
    const auto cho_bands = choroid_bands(choroid_masks);
    std::vector<BoundaryCurve> uppers;
    uppers.reserve(cho_bands.size());
    for (const auto& b : cho_bands) uppers.push_back(b.upper);
    const auto rpe_bands = derive_rpe_band(uppers, vol.axial_pitch_um);

    Projection rpe = project_mean(vol, rpe_bands);
    Projection cho = project_mean(vol, cho_bands);

    EnFacePair out;
    out.rpe.pixels = minmax_normalize(rpe.image.pixels);
    out.choroid.pixels = minmax_normalize(cho.image.pixels);
    out.flagged = ImageU8(vol.frames, vol.alines, 0);
    for (size_t i = 0; i < out.flagged.size(); ++i)
        out.flagged.raw()[i] = rpe.flagged.raw()[i] || cho.flagged.raw()[i];
    return out;
}

}  // namespace oct::enface
