#pragma once

#include "oct/types.hpp"

namespace oct::metrics {

struct SegScores {
    double di = 0.0, iou = 0.0, acc = 0.0, sen = 0.0;
};

// DI = 2|P∩G|/(|P|+|G|), IOU = |P∩G|/|P∪G|, Acc = (TP+TN)/all, Sen =
// TP/(TP+FN). Two empty masks give DI = IOU = 1; empty ground truth gives
// Sen = 1.
SegScores seg_scores(const RegionMask& pred, const RegionMask& gt);

struct AusdeResult {
    double mean_px = 0.0;
    double coverage = 0.0;  // fraction of columns where both curves are valid
};

// Mean |pred[i] - gt[i]| over columns where both curves are valid. Throws if
// no column qualifies.
AusdeResult ausde(const BoundaryCurve& pred, const BoundaryCurve& gt);

// Dark pixels under a local 15x15 mean threshold (minus offset), specks
// below 5 px removed.
VesselMap binarize_vessels(const EnFaceImage& enface, int window = 15, float offset = 0.02f,
                           int min_speck_px = 5);

// VD = sum(V within ROI) / |ROI|. Pass an empty ROI mask (width 0) to use
// the whole image.
double vessel_density(const VesselMap& v, const RegionMask& roi);
double vessel_density(const VesselMap& v);

struct Fidelity {
    double ssim = 0.0;
    double psnr = 0.0;  // dB, +inf when mse == 0
    double mse = 0.0;
};

// SSIM with an 11x11 Gaussian window (sigma 1.5) and the standard stability
// constants (K1=0.01, K2=0.03, L=1); PSNR with peak 1.0.
Fidelity image_fidelity(const ImageF& a, const ImageF& b);

// PSNR value used in CSV reports: equality capped at 99 dB.
double psnr_for_report(double psnr);

}  // namespace oct::metrics
