#pragma once

#include <optional>

#include "oct/nn.hpp"
#include "oct/training.hpp"
#include "oct/types.hpp"

namespace oct::bionet {

using real = float;

// ---- losses ----
// These templates are the training-path implementations; the test suite
// instantiates them at double for finite-difference gradient checks.

// mean over samples of |B_pred - B_gt|; inputs [N,1,1,1]
template <typename T>
ag::Var<T> biomarker_regression_loss(const ag::Var<T>& b_pred, const ag::Var<T>& b_gt) {
    OCT_REQUIRE(b_pred->value.shape == b_gt->value.shape, "biomarker loss: shape mismatch");
    return ag::l1_mean(b_pred, b_gt);
}

// categorical cross entropy over the 12 layer channels, mean over pixels
template <typename T>
ag::Var<T> multilayer_loss(const ag::Var<T>& g_pred, const ag::Var<T>& g_gt) {
    OCT_REQUIRE(g_pred->value.shape.c == kNumLayers, "multilayer loss expects 12 channels");
    return ag::ce_mean(g_pred, g_gt);
}

// binary cross entropy between the choroid probability map and the binary
// ground truth, mean over pixels
template <typename T>
ag::Var<T> choroid_loss(const ag::Var<T>& c_pred, const ag::Var<T>& c_gt) {
    return ag::bce_mean(c_pred, c_gt);
}

// mean over the batch of |B(C_pred) - B_ref|, with B frozen. Gradients flow
// into C_pred only; B_ref is the frozen net applied to the ground-truth mask.
template <typename T>
ag::Var<T> bio_consistency_loss(const ag::Var<T>& c_pred, const nn::BiomarkerNet<T>& bio,
                                const ag::Var<T>& b_ref) {
    OCT_REQUIRE(bio.frozen(), "bio_consistency_loss requires a frozen biomarker net");
    return ag::l1_mean(bio.biomarker(c_pred), b_ref);
}

// Column-resolved variant used inside training: compares the regressor's
// per-A-line thickness vector (x_i, h) on C_pred against the reference
// vector, mean absolute difference over batch and columns. Zero exactly when
// the scalar form is zero column-wise, and it cannot be satisfied by
// misplacing the same mask area elsewhere.
template <typename T>
ag::Var<T> bio_consistency_loss_columns(const ag::Var<T>& c_pred, const nn::BiomarkerNet<T>& bio,
                                        const ag::Var<T>& h_ref) {
    OCT_REQUIRE(bio.frozen(), "bio_consistency_loss requires a frozen biomarker net");
    return ag::l1_mean(bio.thickness_vector(c_pred), h_ref);
}

template <typename T>
struct LossWeights {
    T seg_multilayers = T(1);
    T seg_choroid = T(1);
    T bio_choroid = T(0.01);
};

template <typename T>
ag::Var<T> total_loss(const ag::Var<T>& l_multilayers, const ag::Var<T>& l_choroid,
                      const ag::Var<T>& l_bio, const LossWeights<T>& w) {
    OCT_REQUIRE(w.seg_multilayers >= T(0) && w.seg_choroid >= T(0) && w.bio_choroid >= T(0),
                "loss weights must be >= 0");
    return ag::add(ag::add(ag::scale(l_multilayers, w.seg_multilayers),
                           ag::scale(l_choroid, w.seg_choroid)),
                   ag::scale(l_bio, w.bio_choroid));
}

// ---- batch assembly ----

ag::Tensor4<real> images_to_tensor(const std::vector<const ImageF*>& images);
ag::Tensor4<real> masks_to_tensor(const std::vector<const RegionMask*>& masks);
ag::Tensor4<real> layers_to_onehot(const std::vector<const LayerMap*>& maps);

// ---- training / inference ----

struct Sample {
    ImageF image;
    LayerMap layers;
    RegionMask choroid;
};

enum class Ablation { Baseline, Gms, UnetGms, UnetBio, Full };
Ablation ablation_from_string(const std::string& s);
std::string to_string(Ablation a);

struct NetConfig {
    int levels = 4;
    int global_base = 8;
    int local_base = 8;
    int bio_base = 8;
    // blur half of the regressor's training masks so it stays calibrated on
    // the soft probability maps it sees inside Eq. 4
    bool bio_soft_input_aug = true;
};

struct BiomarkerOutcome {
    std::shared_ptr<nn::BiomarkerNet<real>> net;  // frozen
    double val_mae_px = 0.0;
    bool converged = false;  // val MAE <= 2 px
    train::TrainOutcome train;
};

// Trains the thickness regressor on ground-truth choroid masks, freezes it.
BiomarkerOutcome train_biomarker_net(const std::vector<Sample>& samples,
                                     const train::TrainConfig& cfg, const NetConfig& net_cfg = {});

struct BioNetModels {
    std::shared_ptr<nn::BiomarkerNet<real>> bio;  // frozen; null for ablations without Bio
    std::shared_ptr<nn::UNet<real>> global_seg;   // null for ablations without GMS
    std::shared_ptr<nn::UNet<real>> local_seg;    // null for the GMS-only ablation
    Ablation ablation = Ablation::Full;
    NetConfig net_cfg;

    void save(const train::fs::path& path) const;
    static BioNetModels load(const train::fs::path& path, Ablation a, const NetConfig& net_cfg,
                             std::shared_ptr<nn::BiomarkerNet<real>> bio);
};

struct BioNetOutcome {
    BioNetModels models;
    train::TrainOutcome train;
};

// Joint training of the global and local modules under the Eq. 5 objective.
// The biomarker net must already be frozen (pass null for ablations without
// the Bio term).
BioNetOutcome train_bionet(const std::vector<Sample>& samples,
                           std::shared_ptr<nn::BiomarkerNet<real>> bio,
                           const train::TrainConfig& cfg, const LossWeights<real>& weights,
                           Ablation ablation = Ablation::Full, const NetConfig& net_cfg = {});

struct SegmentationResult {
    RegionMask choroid;
    LayerMap layers;
    ThicknessProfile thickness_px;
    bool empty_choroid = false;  // flagged result, not an exception
};

// C_pred thresholded at 0.5 + largest-component cleanup; LayerMap from the
// per-pixel argmax of G_pred (synthesized from the choroid band when the
// ablation has no global module).
SegmentationResult segment_choroid(const ImageF& bscan, const BioNetModels& models);

// Post-processing alone, exposed for tests.
RegionMask postprocess_choroid_prob(const ImageF& prob, float threshold, bool* empty_flag);

// Monotone column decoding of the 12-channel layer probabilities: per column
// the maximum-likelihood non-decreasing label sequence (dynamic program), so
// decoded maps always satisfy the anatomical ordering invariant.
LayerMap ordered_layer_decode(const ag::Tensor4<real>& probs, int sample = 0);

// Loads a frozen biomarker net from a run_training checkpoint.
std::shared_ptr<nn::BiomarkerNet<real>> load_biomarker(const train::fs::path& ckpt, int base = 8);

}  // namespace oct::bionet
