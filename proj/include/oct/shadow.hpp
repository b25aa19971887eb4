#pragma once

#include <memory>

#include "oct/imgproc.hpp"
#include "oct/nn.hpp"
#include "oct/training.hpp"
#include "oct/types.hpp"

namespace oct::shadow {

using real = float;
namespace fs = std::filesystem;

// ---- localization ----

struct ShadowSegmenter {
    std::shared_ptr<nn::UNet<real>> net;  // 1 -> 1, sigmoid

    // full-image probability map (reflect-pads to the pooling multiple)
    ImageF probability(const ImageF& rpe) const;
    ShadowMask segment(const ImageF& rpe, float threshold = 0.5f) const;

    void save(const fs::path& path) const;
    static ShadowSegmenter load(const fs::path& path, int levels = 3, int base = 8);
};

struct ShadowTrainPair {
    EnFaceImage rpe;
    ShadowMask gt;
};

ShadowSegmenter train_shadow_segmenter(const std::vector<ShadowTrainPair>& pairs,
                                       const train::TrainConfig& cfg, int patch = 32,
                                       int steps_per_epoch = 64);

// Morphological closing (6 dilations, 6 erosions, 3x3 cross) to bridge
// fragmented detections, then 3 further dilations; the result caliber is
// about 5 px wider than the raw mask and always a superset of it.
ShadowMask refine_mask(const ShadowMask& raw);

// Canny with sigma 1.5 and (0.1, 0.2) relative hysteresis thresholds.
ImageU8 edge_map(const ImageF& image);

// ---- elimination ----

enum class Stage { Edge = 1, Inpaint = 2, Joint = 3 };
Stage stage_from_string(const std::string& s);
std::string to_string(Stage s);

struct DeshadowNetConfig {
    int gen_base = 16;
    int n_res = 4;
    int disc_base = 12;
    int feat_base = 8;
};

// Two-stage cascade: G1 completes the Canny edge structure inside the mask,
// G2 fills texture given the composed edges; both with 70x70-patch
// discriminators. Stages must be trained in order edge -> inpaint -> joint.
class DeshadowModel {
public:
    explicit DeshadowModel(uint64_t seed = 0, const DeshadowNetConfig& cfg = {});

    nn::ResGenerator<real> g_edge, g_texture;
    nn::PatchDiscriminator<real> d_edge, d_texture;
    int stages_done = 0;  // 0 none, 1 edge, 2 inpaint, 3 joint
    DeshadowNetConfig cfg;

    void save(const fs::path& path) const;
    static DeshadowModel load(const fs::path& path);
};

struct DeshadowTrainConfig {
    int steps = 400;
    int batch = 4;
    int patch = 48;
    double g_lr = 1e-4;
    double d_lr = 1e-5;
    double joint_lr = 2e-5;
    uint64_t seed = 0;
    // loss weights: stage 1 adversarial/feature-matching, stage 2
    // reconstruction/adversarial/perceptual/style
    double w_adv1 = 1.0, w_fm = 10.0;
    double w_rec = 1.0, w_adv2 = 0.1, w_perc = 0.1, w_style = 250.0;
    // discriminator collapse guard
    double d_collapse_eps = 1e-4;
    int d_collapse_steps = 50;
};

// Aborts adversarial training when the discriminator loss stays below eps
// for `limit` consecutive steps.
class CollapseGuard {
public:
    CollapseGuard(double eps, int limit) : eps_(eps), limit_(limit) {}
    void observe(double d_loss, const std::string& stage) {
        count_ = d_loss < eps_ ? count_ + 1 : 0;
        if (count_ >= limit_)
            throw TrainError("discriminator collapse during " + stage +
                             " stage: loss below threshold for " + std::to_string(limit_) +
                             " consecutive steps");
    }

private:
    double eps_;
    int limit_;
    int count_ = 0;
};

// Vessel-shaped curvilinear mask: random walk with momentum, width drawn in
// [3, 9] px. Never empty.
ImageU8 sample_vessel_mask(Rng& rng, int height, int width);

// Runs one training stage on shadow-free texture images with synthetic
// masks. Stages must be requested in order; per-epoch losses are appended to
// `log` when non-null.
void train_deshadow_stage(DeshadowModel& model, const std::vector<ImageF>& clean_textures,
                          const DeshadowTrainConfig& cfg, Stage stage,
                          std::vector<train::EpochRecord>* log = nullptr);

// Output = input outside the mask (bit-identical), generated content inside.
// Refuses masks covering more than 60% of the image.
EnFaceImage eliminate_shadows(const EnFaceImage& choroid, const ShadowMask& mask,
                              const DeshadowModel& model);

}  // namespace oct::shadow
