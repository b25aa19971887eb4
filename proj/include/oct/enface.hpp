#pragma once

#include <vector>

#include "oct/types.hpp"

namespace oct::enface {

// One band per frame: depth rows [upper[c], lower[c]) per A-line column.
struct Band {
    BoundaryCurve upper, lower;
};

// RPE band = [choroid_upper - shift, choroid_upper), shift = round(20um /
// axial pitch), clamped at the top of the image.
int rpe_shift_px(float axial_pitch_um);
std::vector<Band> derive_rpe_band(const std::vector<BoundaryCurve>& choroid_upper,
                                  float axial_pitch_um);

struct Projection {
    EnFaceImage image;
    ImageU8 flagged;  // 1 where the band was empty or out of range
};

// Mean over the band rows per (frame, A-line). Empty bands give 0 + flag.
Projection project_mean(const OctVolume& vol, const std::vector<Band>& bands);

struct EnFacePair {
    EnFaceImage rpe;
    EnFaceImage choroid;
    ImageU8 flagged;  // union of both projections' flags
};

// Projects both bands from per-frame choroid masks and min-max normalizes
// each image to [0,1].
EnFacePair enface_pair(const OctVolume& vol, const std::vector<RegionMask>& choroid_masks);

// Band helpers shared with the pipeline.
std::vector<Band> choroid_bands(const std::vector<RegionMask>& choroid_masks);

}  // namespace oct::enface
