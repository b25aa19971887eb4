#include "oct/bionet.hpp"

#include <cmath>

#include "oct/geometry.hpp"
#include "oct/kernels.hpp"
#include "oct/imgproc.hpp"
#include "oct/metrics.hpp"

namespace oct::bionet {

using ag::Shape4;
using ag::Tensor4;
using ag::Var;

ag::Tensor4<real> images_to_tensor(const std::vector<const ImageF*>& images) {
    OCT_REQUIRE(!images.empty(), "empty batch");
    const int h = images[0]->height(), w = images[0]->width();
    Tensor4<real> t(Shape4{static_cast<int>(images.size()), 1, h, w});
    for (size_t n = 0; n < images.size(); ++n) {
        OCT_REQUIRE(images[n]->height() == h && images[n]->width() == w,
                    "batch images must share a shape");
        std::copy(images[n]->raw().begin(), images[n]->raw().end(),
                  t.v.begin() + n * size_t(h) * w);
    }
    return t;
}

ag::Tensor4<real> masks_to_tensor(const std::vector<const RegionMask*>& masks) {
    OCT_REQUIRE(!masks.empty(), "empty batch");
    const int h = masks[0]->mask.height(), w = masks[0]->mask.width();
    Tensor4<real> t(Shape4{static_cast<int>(masks.size()), 1, h, w});
    for (size_t n = 0; n < masks.size(); ++n)
        for (size_t i = 0; i < masks[n]->mask.size(); ++i)
            t.v[n * size_t(h) * w + i] = static_cast<real>(masks[n]->mask.raw()[i]);
    return t;
}

ag::Tensor4<real> layers_to_onehot(const std::vector<const LayerMap*>& maps) {
    OCT_REQUIRE(!maps.empty(), "empty batch");
    const int h = maps[0]->labels.height(), w = maps[0]->labels.width();
    Tensor4<real> t(Shape4{static_cast<int>(maps.size()), kNumLayers, h, w}, 0.0f);
    for (size_t n = 0; n < maps.size(); ++n)
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c)
                t.at(static_cast<int>(n), maps[n]->labels.at(r, c), r, c) = 1.0f;
    return t;
}

Ablation ablation_from_string(const std::string& s) {
    if (s == "baseline") return Ablation::Baseline;
    if (s == "gms") return Ablation::Gms;
    if (s == "unet-gms" || s == "unet_gms") return Ablation::UnetGms;
    if (s == "bio" || s == "unet-bio" || s == "unet_bio") return Ablation::UnetBio;
    if (s == "full") return Ablation::Full;
    throw ConfigError("unknown ablation: " + s +
                      " (want baseline|gms|unet-gms|bio|full)");
}

std::string to_string(Ablation a) {
    switch (a) {
        case Ablation::Baseline: return "baseline";
        case Ablation::Gms: return "gms";
        case Ablation::UnetGms: return "unet-gms";
        case Ablation::UnetBio: return "unet-bio";
        default: return "full";
    }
}

namespace {

bool has_global(Ablation a) {
    return a == Ablation::Gms || a == Ablation::UnetGms || a == Ablation::Full;
}
bool has_local(Ablation a) { return a != Ablation::Gms; }
bool has_bio(Ablation a) { return a == Ablation::UnetBio || a == Ablation::Full; }

// Per-column pixel count; equals (lower - upper) for single-run columns and
// stays total on augmented masks whose rotated edges may split runs.
std::vector<real> column_thickness_px(const RegionMask& m) {
    std::vector<real> t(m.mask.width(), 0.0f);
    for (int c = 0; c < m.mask.width(); ++c) {
        int n = 0;
        for (int r = 0; r < m.mask.height(); ++r) n += m.mask.at(r, c) != 0;
        t[c] = static_cast<real>(n);
    }
    return t;
}

// mean thickness over non-empty columns, in px; 0 for an all-empty mask
real mean_thickness_px(const RegionMask& m) {
    const auto t = column_thickness_px(m);
    double sum = 0.0;
    int n = 0;
    for (real v : t)
        if (v > 0.0f) {
            sum += v;
            ++n;
        }
    return n ? static_cast<real>(sum / n) : 0.0f;
}

}  // namespace

BiomarkerOutcome train_biomarker_net(const std::vector<Sample>& samples,
                                     const train::TrainConfig& cfg, const NetConfig& net_cfg) {
    OCT_REQUIRE(!samples.empty(), "train_biomarker_net: no samples");
    auto net = std::make_shared<nn::BiomarkerNet<real>>(derive_seed(cfg.seed, "bio_init"),
                                                        net_cfg.bio_base);

    std::vector<real> targets(samples.size());
    for (size_t i = 0; i < samples.size(); ++i) targets[i] = mean_thickness_px(samples[i].choroid);

    auto step = [&](const std::vector<int>& batch, Rng& rng) -> train::StepResult<real> {
        std::vector<RegionMask> aug_masks(batch.size());
        Tensor4<real> b_gt(Shape4{static_cast<int>(batch.size()), 1, 1, 1});
        const int h = samples[batch[0]].choroid.mask.height();
        const int w = samples[batch[0]].choroid.mask.width();
        Tensor4<real> x_t(Shape4{static_cast<int>(batch.size()), 1, h, w});
        Tensor4<real> col_target(Shape4{static_cast<int>(batch.size()), 1, 1, w});
        for (size_t k = 0; k < batch.size(); ++k) {
            train::TrainSample ts;
            ts.region = samples[batch[k]].choroid;
            ts.image = ImageF(h, w);  // placeholder; the regressor sees masks only
            const auto aug = train::augment(ts, cfg, rng);
            aug_masks[k] = *aug.region;
            ImageF in = map_image<uint8_t, float>(aug_masks[k].mask,
                                                  [](uint8_t v) { return float(v); });
            // The regressor later runs on soft probability maps, so train it
            // to report the band extent and ignore blur, contrast gain and a
            // diffuse background floor. Targets stay the binary-mask
            // thicknesses (zero for the rare floor-only input).
            bool band_present = true;
            if (net_cfg.bio_soft_input_aug) {
                if (rng.bernoulli(0.1)) {
                    in.fill(0.0f);
                    band_present = false;
                }
                if (rng.bernoulli(0.5))
                    in = kernels::gaussian_blur(in, float(rng.uniform(0.5, 2.0)),
                                                kernels::default_backend());
                if (rng.bernoulli(0.7)) {
                    const float gain = float(rng.uniform(0.4, 1.0));
                    for (auto& v : in.raw()) v *= gain;
                }
                if (rng.bernoulli(0.7)) {
                    const float floor_amp = float(rng.uniform(0.02, 0.15));
                    ImageF noise(h, w);
                    for (auto& v : noise.raw()) v = float(rng.uniform());
                    noise = kernels::gaussian_blur(noise, 3.0f, kernels::default_backend());
                    for (size_t i = 0; i < in.size(); ++i)
                        in.raw()[i] = std::min(1.0f, in.raw()[i] + floor_amp * noise.raw()[i]);
                }
            }
            const auto cols = column_thickness_px(aug_masks[k]);
            double t_sum = 0.0;
            int t_cols = 0;
            for (int c = 0; c < w; ++c) {
                const real t = band_present ? cols[c] : 0.0f;
                col_target.at(static_cast<int>(k), 0, 0, c) = t;
                if (t > 0.0f) {
                    t_sum += t;
                    ++t_cols;
                }
            }
            b_gt.v[k] = t_cols ? static_cast<real>(t_sum / t_cols) : 0.0f;
            std::copy(in.raw().begin(), in.raw().end(), x_t.v.begin() + k * size_t(h) * w);
        }
        auto x = ag::constant(std::move(x_t));

        // per-column supervision plus the Eq. 1 mean term
        Var<real> vec = net->thickness_vector(x);
        Var<real> col_loss = ag::l1_mean(vec, ag::constant(std::move(col_target)));
        Var<real> reg_loss =
            biomarker_regression_loss(ag::mean_per_sample(vec), ag::constant(std::move(b_gt)));
        Var<real> loss = ag::add(reg_loss, col_loss);
        return {loss,
                {{"loss_total", loss->value[0]},
                 {"loss_bio_reg", reg_loss->value[0]},
                 {"loss_column", col_loss->value[0]}}};
    };

    auto validate = [&](const std::vector<int>& idx) -> double {
        double mae = 0.0;
        for (int i : idx) {
            std::vector<const RegionMask*> ptrs{&samples[i].choroid};
            auto x = ag::constant(masks_to_tensor(ptrs));
            const Var<real> b = net->biomarker(x);
            mae += std::abs(double(b->value[0]) - double(targets[i]));
        }
        return mae / double(idx.size());
    };

    BiomarkerOutcome out;
    std::vector<nn::ParamStore<real>*> stores{&net->store()};
    out.train = train::run_training<real>(cfg, static_cast<int>(samples.size()), step, validate,
                                          stores, "biomarker", "val_mae_px");
    net->freeze();
    out.net = net;
    out.val_mae_px = out.train.best_val;
    out.converged = out.val_mae_px <= 2.0;
    return out;
}

void BioNetModels::save(const train::fs::path& path) const {
    std::map<std::string, Tensor4<real>> merged;
    if (global_seg)
        for (auto& [k, v] : global_seg->store().state_dict()) merged["global." + k] = v;
    if (local_seg)
        for (auto& [k, v] : local_seg->store().state_dict()) merged["local." + k] = v;
    train::CheckpointMeta meta;
    meta.config_echo = "{\"ablation\":\"" + to_string(ablation) + "\"}";
    train::save_checkpoint(path, merged, meta);
}

BioNetModels BioNetModels::load(const train::fs::path& path, Ablation a, const NetConfig& net_cfg,
                                std::shared_ptr<nn::BiomarkerNet<real>> bio) {
    BioNetModels m;
    m.ablation = a;
    m.net_cfg = net_cfg;
    m.bio = std::move(bio);
    const auto merged = train::load_checkpoint<real>(path);
    auto sub = [&](const std::string& prefix) {
        std::map<std::string, Tensor4<real>> s;
        for (auto& [k, v] : merged)
            if (k.rfind(prefix, 0) == 0) s[k.substr(prefix.size())] = v;
        return s;
    };
    if (has_global(a)) {
        m.global_seg = std::make_shared<nn::UNet<real>>(0, 1, kNumLayers, net_cfg.levels,
                                                        net_cfg.global_base, nn::Head::Softmax);
        m.global_seg->store().load_state_dict(sub("global."));
    }
    if (has_local(a)) {
        const int in_ch = has_global(a) ? 1 + kNumLayers : 1;
        m.local_seg = std::make_shared<nn::UNet<real>>(0, in_ch, 1, net_cfg.levels,
                                                       net_cfg.local_base, nn::Head::Sigmoid);
        m.local_seg->store().load_state_dict(sub("local."));
    }
    return m;
}

BioNetOutcome train_bionet(const std::vector<Sample>& samples,
                           std::shared_ptr<nn::BiomarkerNet<real>> bio,
                           const train::TrainConfig& cfg, const LossWeights<real>& weights,
                           Ablation ablation, const NetConfig& net_cfg) {
    OCT_REQUIRE(!samples.empty(), "train_bionet: no samples");
    if (has_bio(ablation)) {
        OCT_REQUIRE(bio != nullptr, "this ablation needs a biomarker net");
        OCT_REQUIRE(bio->frozen(), "biomarker net must be frozen before Bio-Net training");
    }

    BioNetOutcome out;
    out.models.ablation = ablation;
    out.models.net_cfg = net_cfg;
    out.models.bio = has_bio(ablation) ? bio : nullptr;
    if (has_global(ablation))
        out.models.global_seg = std::make_shared<nn::UNet<real>>(
            derive_seed(cfg.seed, "global_init"), 1, kNumLayers, net_cfg.levels,
            net_cfg.global_base, nn::Head::Softmax);
    if (has_local(ablation)) {
        const int in_ch = has_global(ablation) ? 1 + kNumLayers : 1;
        out.models.local_seg = std::make_shared<nn::UNet<real>>(
            derive_seed(cfg.seed, "local_init"), in_ch, 1, net_cfg.levels, net_cfg.local_base,
            nn::Head::Sigmoid);
    }

    auto forward_pair = [&](const Var<real>& x) {
        std::pair<Var<real>, Var<real>> gp_cp{nullptr, nullptr};
        if (out.models.global_seg) gp_cp.first = out.models.global_seg->forward(x);
        if (out.models.local_seg) {
            Var<real> c_in = out.models.global_seg ? ag::concat_channels(x, gp_cp.first) : x;
            gp_cp.second = out.models.local_seg->forward(c_in);
        }
        return gp_cp;
    };

    auto step = [&](const std::vector<int>& batch, Rng& rng) -> train::StepResult<real> {
        std::vector<Sample> aug(batch.size());
        for (size_t k = 0; k < batch.size(); ++k) {
            train::TrainSample ts;
            ts.image = samples[batch[k]].image;
            ts.layers = samples[batch[k]].layers;
            ts.region = samples[batch[k]].choroid;
            const auto a = train::augment(ts, cfg, rng);
            aug[k] = Sample{a.image, *a.layers, *a.region};
        }
        std::vector<const ImageF*> imgs;
        std::vector<const LayerMap*> lmaps;
        std::vector<const RegionMask*> masks;
        for (auto& s : aug) {
            imgs.push_back(&s.image);
            lmaps.push_back(&s.layers);
            masks.push_back(&s.choroid);
        }
        auto x = ag::constant(images_to_tensor(imgs));
        auto [g_pred, c_pred] = forward_pair(x);

        Var<real> zero = ag::scalar<real>(0);
        Var<real> l_ml = zero, l_cho = zero, l_bio = zero;
        if (g_pred) l_ml = multilayer_loss(g_pred, ag::constant(layers_to_onehot(lmaps)));
        if (c_pred) l_cho = choroid_loss(c_pred, ag::constant(masks_to_tensor(masks)));
        if (has_bio(ablation) && c_pred) {
            // reference: frozen net applied to the ground-truth masks, detached
            auto gt_mask_var = ag::constant(masks_to_tensor(masks));
            Var<real> h_ref_live = bio->thickness_vector(gt_mask_var);
            l_bio = bio_consistency_loss_columns(c_pred, *bio, ag::constant(h_ref_live->value));
        }
        LossWeights<real> w = weights;
        if (!g_pred) w.seg_multilayers = 0;
        if (!c_pred) w.seg_choroid = 0;
        if (!has_bio(ablation)) w.bio_choroid = 0;
        Var<real> loss = total_loss(l_ml, l_cho, l_bio, w);
        return {loss,
                {{"loss_total", loss->value[0]},
                 {"loss_seg_multilayers", l_ml->value[0]},
                 {"loss_seg_choroid", l_cho->value[0]},
                 {"loss_bio_choroid", l_bio->value[0]}}};
    };

    // validation drives best-epoch selection: mean choroid DI of every head
    // present (the local probability map and the decoded global layer band)
    BioNetModels& models = out.models;
    auto validate = [&](const std::vector<int>& idx) -> double {
        double dice = 0.0;
        for (int i : idx) {
            const auto res = segment_choroid(samples[i].image, models);
            double d = metrics::seg_scores(res.choroid, samples[i].choroid).di;
            if (models.global_seg && models.local_seg) {
                const auto band = mask_from_layer(res.layers, kChoroid);
                d = 0.5 * (d + metrics::seg_scores(band, samples[i].choroid).di);
            }
            dice += d;
        }
        return 1.0 - dice / double(idx.size());  // lower is better
    };

    std::vector<nn::ParamStore<real>*> stores;
    if (models.global_seg) stores.push_back(&models.global_seg->store());
    if (models.local_seg) stores.push_back(&models.local_seg->store());
    out.train = train::run_training<real>(cfg, static_cast<int>(samples.size()), step, validate,
                                          stores, "bionet_" + to_string(ablation), "val_one_minus_di");
    return out;
}

RegionMask postprocess_choroid_prob(const ImageF& prob, float threshold, bool* empty_flag) {
    RegionMask m;
    m.mask = map_image<float, uint8_t>(prob, [threshold](float v) {
        return static_cast<uint8_t>(v >= threshold ? 1 : 0);
    });
    bool any = false;
    for (uint8_t v : m.mask.raw())
        if (v) {
            any = true;
            break;
        }
    if (any) m.mask = imgproc::largest_component(m.mask);
    // enforce single-run columns: keep the longest run per column
    const int h = m.mask.height(), w = m.mask.width();
    for (int c = 0; c < w; ++c) {
        int best_start = -1, best_len = 0, start = -1;
        for (int r = 0; r <= h; ++r) {
            const bool on = r < h && m.mask.at(r, c);
            if (on && start < 0) start = r;
            if (!on && start >= 0) {
                if (r - start > best_len) {
                    best_len = r - start;
                    best_start = start;
                }
                start = -1;
            }
        }
        for (int r = 0; r < h; ++r)
            m.mask.at(r, c) = (best_start >= 0 && r >= best_start && r < best_start + best_len)
                                  ? 1
                                  : 0;
    }
    if (empty_flag) *empty_flag = !any;
    return m;
}

LayerMap ordered_layer_decode(const Tensor4<real>& probs, int sample) {
    const int H = probs.shape.h, W = probs.shape.w;
    OCT_REQUIRE(probs.shape.c == kNumLayers, "ordered_layer_decode expects 12 channels");
    LayerMap out;
    out.labels = ImageU8(H, W);
    const size_t plane = size_t(H) * W;
    const real* base = probs.v.data() + size_t(sample) * kNumLayers * plane;

#pragma omp parallel for schedule(static)
    for (int c = 0; c < W; ++c) {
        // dp[r][l]: best log-likelihood of rows 0..r with label l at row r and
        // labels non-decreasing
        std::vector<float> dp(size_t(H) * kNumLayers);
        std::vector<uint8_t> arg(size_t(H) * kNumLayers);
        auto logp = [&](int r, int l) {
            const real p = base[size_t(l) * plane + size_t(r) * W + c];
            return std::log(std::max(p, real(1e-12f)));
        };
        for (int l = 0; l < kNumLayers; ++l) dp[l] = logp(0, l);
        for (int r = 1; r < H; ++r) {
            float best = dp[size_t(r - 1) * kNumLayers];
            uint8_t best_l = 0;
            for (int l = 0; l < kNumLayers; ++l) {
                const float prev = dp[size_t(r - 1) * kNumLayers + l];
                if (prev > best) {
                    best = prev;
                    best_l = static_cast<uint8_t>(l);
                }
                dp[size_t(r) * kNumLayers + l] = best + logp(r, l);
                arg[size_t(r) * kNumLayers + l] = best_l;
            }
        }
        int l = 0;
        for (int k = 1; k < kNumLayers; ++k)
            if (dp[size_t(H - 1) * kNumLayers + k] > dp[size_t(H - 1) * kNumLayers + l]) l = k;
        for (int r = H - 1; r >= 0; --r) {
            out.labels.at(r, c) = static_cast<uint8_t>(l);
            if (r > 0) l = arg[size_t(r) * kNumLayers + l];
        }
    }
    return out;
}

SegmentationResult segment_choroid(const ImageF& bscan, const BioNetModels& models) {
    SegmentationResult res;

    // a zero-dynamic-range image carries no anatomy; flag instead of running
    // normalization-based networks on a degenerate input
    const auto [mn, mx] = std::minmax_element(bscan.raw().begin(), bscan.raw().end());
    if (bscan.empty() || *mx - *mn < 1e-6f) {
        res.choroid.mask = ImageU8(bscan.height(), bscan.width(), 0);
        res.layers.labels = ImageU8(bscan.height(), bscan.width(), kBackgroundAbove);
        res.empty_choroid = true;
        res.thickness_px.per_column.assign(bscan.width(), ThicknessProfile::kInvalid);
        res.thickness_px.mean = 0.0f;
        return res;
    }

    std::vector<const ImageF*> imgs{&bscan};
    auto x = ag::constant(images_to_tensor(imgs));
    Var<real> g_pred = nullptr;
    if (models.global_seg) g_pred = models.global_seg->forward(x);

    if (models.local_seg) {
        Var<real> c_in = g_pred ? ag::concat_channels(x, g_pred) : x;
        const Var<real> c_pred = models.local_seg->forward(c_in);
        ImageF prob(bscan.height(), bscan.width());
        std::copy(c_pred->value.v.begin(), c_pred->value.v.end(), prob.raw().begin());
        res.choroid = postprocess_choroid_prob(prob, 0.5f, &res.empty_choroid);
    }

    if (g_pred) {
        res.layers = ordered_layer_decode(g_pred->value);
        if (!models.local_seg) {
            const auto layer_mask = mask_from_layer(res.layers, kChoroid);
            ImageF prob = map_image<uint8_t, float>(layer_mask.mask,
                                                    [](uint8_t v) { return float(v); });
            res.choroid = postprocess_choroid_prob(prob, 0.5f, &res.empty_choroid);
        }
    } else {
        // no global module: synthesize a layer map from the choroid band
        res.layers.labels = ImageU8(bscan.height(), bscan.width(), kBackgroundAbove);
        for (int c = 0; c < bscan.width(); ++c) {
            bool below = false;
            for (int r = 0; r < bscan.height(); ++r) {
                if (res.choroid.mask.at(r, c)) {
                    res.layers.labels.at(r, c) = kChoroid;
                    below = true;
                } else if (below) {
                    res.layers.labels.at(r, c) = kBackgroundBelow;
                }
            }
        }
    }

    if (res.empty_choroid) {
        res.thickness_px.per_column.assign(bscan.width(), ThicknessProfile::kInvalid);
        res.thickness_px.mean = 0.0f;
    } else {
        res.thickness_px = thickness_from_mask(res.choroid, 1.0f);
    }
    return res;
}

}  // namespace oct::bionet
