#include "oct/geometry.hpp"

#include <cmath>

#include "oct/common.hpp"

namespace oct {

std::pair<BoundaryCurve, BoundaryCurve> boundary_from_mask(const RegionMask& mask) {
    const int h = mask.mask.height(), w = mask.mask.width();
    BoundaryCurve upper(w), lower(w);
    for (int c = 0; c < w; ++c) {
        int first = -1, last = -1;
        int runs = 0;
        bool in_run = false;
        for (int r = 0; r < h; ++r) {
            const bool on = mask.mask.at(r, c) != 0;
            if (on && !in_run) {
                ++runs;
                if (first < 0) first = r;
            }
            if (on) last = r;
            in_run = on;
        }
        OCT_REQUIRE(runs <= 1,
                    "mask column " + std::to_string(c) + " has " + std::to_string(runs) +
                        " runs; expected at most one contiguous run");
        if (first >= 0) {
            upper.rows[c] = static_cast<float>(first);
            lower.rows[c] = static_cast<float>(last + 1);
        }
    }
    return {upper, lower};
}

RegionMask mask_from_boundaries(const BoundaryCurve& upper, const BoundaryCurve& lower,
                                int height, int width) {
    OCT_REQUIRE(upper.size() == lower.size() && static_cast<int>(upper.size()) == width,
                "boundary curves must match the mask width");
    RegionMask out;
    out.mask = ImageU8(height, width, 0);
    for (int c = 0; c < width; ++c) {
        const bool u_ok = upper.valid(c), l_ok = lower.valid(c);
        if (!u_ok && !l_ok) continue;
        OCT_REQUIRE(u_ok && l_ok, "column " + std::to_string(c) + " has only one valid boundary");
        OCT_REQUIRE(upper.rows[c] <= lower.rows[c],
                    "crossing boundaries at column " + std::to_string(c));
        const int r0 = std::max(0, static_cast<int>(std::lround(upper.rows[c])));
        const int r1 = std::min(height, static_cast<int>(std::lround(lower.rows[c])));
        for (int r = r0; r < r1; ++r) out.mask.at(r, c) = 1;
    }
    return out;
}

ThicknessProfile thickness_from_boundaries(const BoundaryCurve& upper, const BoundaryCurve& lower,
                                           float axial_pitch_um) {
    OCT_REQUIRE(upper.size() == lower.size(), "boundary curves must have equal length");
    ThicknessProfile t;
    t.per_column.assign(upper.size(), ThicknessProfile::kInvalid);
    double sum = 0.0;
    size_t n = 0;
    for (size_t c = 0; c < upper.size(); ++c) {
        if (!upper.valid(c) || !lower.valid(c)) continue;
        const float px = lower.rows[c] - upper.rows[c];
        OCT_REQUIRE(px >= 0.0f, "crossing boundaries at column " + std::to_string(c));
        t.per_column[c] = px * axial_pitch_um;
        sum += t.per_column[c];
        ++n;
    }
    OCT_REQUIRE(n > 0, "thickness undefined: all columns empty");
    t.mean = static_cast<float>(sum / static_cast<double>(n));
    return t;
}

ThicknessProfile thickness_from_mask(const RegionMask& mask, float axial_pitch_um) {
    auto [upper, lower] = boundary_from_mask(mask);
    return thickness_from_boundaries(upper, lower, axial_pitch_um);
}

bool layer_order_valid(const LayerMap& map, int* bad_columns) {
    const int h = map.labels.height(), w = map.labels.width();
    int bad = 0;
    for (int c = 0; c < w; ++c) {
        bool ok = true;
        int prev = -1;
        for (int r = 0; r < h; ++r) {
            const int l = map.labels.at(r, c);
            if (l >= kNumLayers || l < prev) {
                ok = false;
                break;
            }
            prev = l;
        }
        bad += !ok;
    }
    if (bad_columns) *bad_columns = bad;
    return bad == 0;
}

RegionMask mask_from_layer(const LayerMap& map, uint8_t label) {
    RegionMask out;
    out.mask = map_image<uint8_t, uint8_t>(map.labels,
                                           [label](uint8_t v) { return uint8_t(v == label); });
    return out;
}

}  // namespace oct
