#pragma once

#include <utility>

#include "oct/types.hpp"

namespace oct {

// Boundary extraction. Each column of the mask must contain at most one
// contiguous run of 1s. upper = first 1-row, lower = one past the last 1-row;
// columns without 1s carry the sentinel on both curves.
std::pair<BoundaryCurve, BoundaryCurve> boundary_from_mask(const RegionMask& mask);

// Inverse of boundary_from_mask: rows [upper, lower) set per column. Sentinel
// columns stay empty. Throws on crossing boundaries.
RegionMask mask_from_boundaries(const BoundaryCurve& upper, const BoundaryCurve& lower,
                                int height, int width);

// Per-column thickness = (lower - upper) * axial_pitch_um; mean over valid
// columns. Pass pitch 1.0 for pixel units. Throws if every column is empty.
ThicknessProfile thickness_from_mask(const RegionMask& mask, float axial_pitch_um);

// Same computation from explicit curves; u == l gives thickness 0 there.
ThicknessProfile thickness_from_boundaries(const BoundaryCurve& upper, const BoundaryCurve& lower,
                                           float axial_pitch_um);

// True when every column of the map is a vertically ordered stack of
// contiguous label intervals in anatomical order. `bad_columns` (optional)
// receives the count of violating columns.
bool layer_order_valid(const LayerMap& map, int* bad_columns = nullptr);

RegionMask mask_from_layer(const LayerMap& map, uint8_t label);

}  // namespace oct
