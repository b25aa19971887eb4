#include "oct/metrics.hpp"

#include <cmath>
#include <limits>

#include "oct/common.hpp"
#include "oct/imgproc.hpp"
#include "oct/kernels.hpp"

namespace oct::metrics {

SegScores seg_scores(const RegionMask& pred, const RegionMask& gt) {
    OCT_REQUIRE(pred.mask.same_shape(gt.mask), "seg_scores: shape mismatch");
    size_t tp = 0, tn = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < pred.mask.size(); ++i) {
        const bool p = pred.mask.raw()[i] != 0, g = gt.mask.raw()[i] != 0;
        tp += p && g;
        tn += !p && !g;
        fp += p && !g;
        fn += !p && g;
    }
    SegScores s;
    const size_t all = tp + tn + fp + fn;
    s.acc = all ? double(tp + tn) / double(all) : 1.0;
    s.di = (2 * tp + fp + fn) ? 2.0 * double(tp) / double(2 * tp + fp + fn) : 1.0;
    s.iou = (tp + fp + fn) ? double(tp) / double(tp + fp + fn) : 1.0;
    s.sen = (tp + fn) ? double(tp) / double(tp + fn) : 1.0;
    return s;
}

AusdeResult ausde(const BoundaryCurve& pred, const BoundaryCurve& gt) {
    OCT_REQUIRE(pred.size() == gt.size(), "ausde: curve length mismatch");
    double sum = 0.0;
    size_t n = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        if (!pred.valid(i) || !gt.valid(i)) continue;
        sum += std::abs(double(pred.rows[i]) - double(gt.rows[i]));
        ++n;
    }
    OCT_REQUIRE(n > 0, "ausde: no columns with valid boundaries in both curves");
    return {sum / double(n), double(n) / double(pred.size())};
}

VesselMap binarize_vessels(const EnFaceImage& enface, int window, float offset,
                           int min_speck_px) {
    VesselMap v;
    v.map = imgproc::adaptive_threshold_dark(enface.pixels, window, offset);
    v.map = imgproc::remove_small_components(v.map, min_speck_px);
    return v;
}

double vessel_density(const VesselMap& v, const RegionMask& roi) {
    OCT_REQUIRE(v.map.same_shape(roi.mask), "vessel_density: shape mismatch");
    size_t n_roi = 0, n_vessel = 0;
    for (size_t i = 0; i < v.map.size(); ++i) {
        if (!roi.mask.raw()[i]) continue;
        ++n_roi;
        n_vessel += v.map.raw()[i] != 0;
    }
    OCT_REQUIRE(n_roi > 0, "vessel_density: empty ROI");
    return double(n_vessel) / double(n_roi);
}

double vessel_density(const VesselMap& v) {
    RegionMask whole;
    whole.mask = ImageU8(v.map.height(), v.map.width(), 1);
    return vessel_density(v, whole);
}

Fidelity image_fidelity(const ImageF& a, const ImageF& b) {
    OCT_REQUIRE(a.same_shape(b), "image_fidelity: shape mismatch");
    OCT_REQUIRE(!a.empty(), "image_fidelity: empty image");

    Fidelity f;
    double se = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = double(a.raw()[i]) - double(b.raw()[i]);
        se += d * d;
    }
    f.mse = se / double(a.size());
    f.psnr = f.mse > 0.0 ? 10.0 * std::log10(1.0 / f.mse)
                         : std::numeric_limits<double>::infinity();

    // SSIM over Gaussian-weighted local statistics
    const auto blur = [](const ImageF& img) {
        return kernels::gaussian_blur(img, 1.5f, kernels::Backend::Serial);
    };
    ImageF aa(a.height(), a.width()), bb(a.height(), a.width()), ab(a.height(), a.width());
    for (size_t i = 0; i < a.size(); ++i) {
        aa.raw()[i] = a.raw()[i] * a.raw()[i];
        bb.raw()[i] = b.raw()[i] * b.raw()[i];
        ab.raw()[i] = a.raw()[i] * b.raw()[i];
    }
    const ImageF mu_a = blur(a), mu_b = blur(b);
    const ImageF m_aa = blur(aa), m_bb = blur(bb), m_ab = blur(ab);
    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;  // L = 1
    double ssim_sum = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double ma = mu_a.raw()[i], mb = mu_b.raw()[i];
        const double va = m_aa.raw()[i] - ma * ma;
        const double vb = m_bb.raw()[i] - mb * mb;
        const double cov = m_ab.raw()[i] - ma * mb;
        ssim_sum += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                    ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    f.ssim = ssim_sum / double(a.size());
    return f;
}

double psnr_for_report(double psnr) { return std::isfinite(psnr) ? std::min(psnr, 99.0) : 99.0; }

}  // namespace oct::metrics
