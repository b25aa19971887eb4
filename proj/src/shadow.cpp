#include "oct/shadow.hpp"

#include <cmath>

#include "json.hpp"

namespace oct::shadow {

using ag::Shape4;
using ag::Tensor4;
using ag::Var;

namespace {

Tensor4<real> image_to_tensor(const ImageF& img) {
    Tensor4<real> t(Shape4{1, 1, img.height(), img.width()});
    std::copy(img.raw().begin(), img.raw().end(), t.v.begin());
    return t;
}

ImageF tensor_to_image(const Tensor4<real>& t, int n = 0) {
    ImageF img(t.shape.h, t.shape.w);
    const size_t plane = size_t(t.shape.h) * t.shape.w;
    std::copy(t.v.begin() + n * plane, t.v.begin() + (n + 1) * plane, img.raw().begin());
    return img;
}

ImageF reflect_pad_to_multiple(const ImageF& img, int multiple, int* pad_h, int* pad_w) {
    const int H = (img.height() + multiple - 1) / multiple * multiple;
    const int W = (img.width() + multiple - 1) / multiple * multiple;
    *pad_h = H - img.height();
    *pad_w = W - img.width();
    if (*pad_h == 0 && *pad_w == 0) return img;
    ImageF out(H, W);
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            int sr = r < img.height() ? r : 2 * img.height() - 2 - r;
            int sc = c < img.width() ? c : 2 * img.width() - 2 - c;
            out.at(r, c) = img.at(std::clamp(sr, 0, img.height() - 1),
                                  std::clamp(sc, 0, img.width() - 1));
        }
    return out;
}

ImageF crop(const ImageF& img, int r0, int c0, int h, int w) {
    ImageF out(h, w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) out.at(r, c) = img.at(r0 + r, c0 + c);
    return out;
}

// Fixed random-weight conv pyramid standing in for a pretrained perceptual
// feature extractor; weights are deterministic and frozen.
class FeatureNet {
public:
    explicit FeatureNet(int base) : store_(0xFEA7) {
        c1_ = nn::Conv2d<real>(store_, "f1", 1, base, 3, 2, 1);
        c2_ = nn::Conv2d<real>(store_, "f2", base, base * 2, 3, 2, 1);
        c3_ = nn::Conv2d<real>(store_, "f3", base * 2, base * 4, 3, 2, 1);
        store_.set_requires_grad(false);
    }

    std::vector<Var<real>> features(const Var<real>& x) const {
        std::vector<Var<real>> out;
        out.push_back(ag::relu(c1_(x)));
        out.push_back(ag::relu(c2_(out.back())));
        out.push_back(ag::relu(c3_(out.back())));
        return out;
    }

private:
    nn::ParamStore<real> store_;
    nn::Conv2d<real> c1_, c2_, c3_;
};

const FeatureNet& feature_net(int base) {
    static FeatureNet net(base);
    return net;
}

double mask_fraction(const ImageU8& m) {
    size_t on = 0;
    for (uint8_t v : m.raw()) on += v != 0;
    return m.size() ? double(on) / double(m.size()) : 0.0;
}

}  // namespace

// ---- localization ----

ImageF ShadowSegmenter::probability(const ImageF& rpe) const {
    OCT_REQUIRE(net != nullptr, "shadow segmenter not trained/loaded");
    int ph = 0, pw = 0;
    const ImageF padded = reflect_pad_to_multiple(rpe, net->spatial_multiple(), &ph, &pw);
    const Var<real> out = net->forward(ag::constant(image_to_tensor(padded)));
    const ImageF full = tensor_to_image(out->value);
    return (ph == 0 && pw == 0) ? full : crop(full, 0, 0, rpe.height(), rpe.width());
}

ShadowMask ShadowSegmenter::segment(const ImageF& rpe, float threshold) const {
    ShadowMask m;
    m.mask = map_image<float, uint8_t>(probability(rpe), [threshold](float v) {
        return static_cast<uint8_t>(v >= threshold ? 1 : 0);
    });
    return m;
}

void ShadowSegmenter::save(const fs::path& path) const {
    train::CheckpointMeta meta;
    meta.config_echo = "{\"model\":\"shadow_segmenter\"}";
    train::save_checkpoint(path, net->store().state_dict(), meta);
}

ShadowSegmenter ShadowSegmenter::load(const fs::path& path, int levels, int base) {
    ShadowSegmenter s;
    s.net = std::make_shared<nn::UNet<real>>(0, 1, 1, levels, base, nn::Head::Sigmoid);
    s.net->store().load_state_dict(train::load_checkpoint<real>(path));
    return s;
}

ShadowSegmenter train_shadow_segmenter(const std::vector<ShadowTrainPair>& pairs,
                                       const train::TrainConfig& cfg, int patch,
                                       int steps_per_epoch) {
    OCT_REQUIRE(!pairs.empty(), "train_shadow_segmenter: need at least one pair");
    for (const auto& p : pairs)
        OCT_REQUIRE(p.rpe.pixels.same_shape(p.gt.mask), "rpe/mask shape mismatch");

    ShadowSegmenter seg;
    seg.net = std::make_shared<nn::UNet<real>>(derive_seed(cfg.seed, "shadow_seg"), 1, 1, 3, 8,
                                               nn::Head::Sigmoid);

    Rng crop_rng(derive_seed(cfg.seed, "crops"));
    auto step = [&](const std::vector<int>& batch, Rng&) -> train::StepResult<real> {
        const int B = static_cast<int>(batch.size());
        Tensor4<real> x(Shape4{B, 1, patch, patch});
        Tensor4<real> t(Shape4{B, 1, patch, patch});
        for (int k = 0; k < B; ++k) {
            const auto& p = pairs[crop_rng.uniform_int(0, int64_t(pairs.size()) - 1)];
            const int h = p.rpe.pixels.height(), w = p.rpe.pixels.width();
            const int r0 = static_cast<int>(crop_rng.uniform_int(0, std::max(0, h - patch)));
            const int c0 = static_cast<int>(crop_rng.uniform_int(0, std::max(0, w - patch)));
            const bool flip = cfg.aug_hflip && crop_rng.bernoulli(0.5);
            for (int r = 0; r < patch; ++r)
                for (int c = 0; c < patch; ++c) {
                    const int sc = flip ? (patch - 1 - c) : c;
                    const int rr = std::min(h - 1, r0 + r), cc = std::min(w - 1, c0 + sc);
                    x.at(k, 0, r, c) = p.rpe.pixels.at(rr, cc);
                    t.at(k, 0, r, c) = static_cast<real>(p.gt.mask.at(rr, cc));
                }
        }
        auto loss = ag::bce_mean(seg.net->forward(ag::constant(std::move(x))),
                                 ag::constant(std::move(t)));
        return {loss, {{"loss_bce", loss->value[0]}}};
    };

    auto validate = [&](const std::vector<int>&) -> double {
        double total = 0.0;
        for (const auto& p : pairs) {
            const ImageF prob = seg.probability(p.rpe.pixels);
            double bce = 0.0;
            for (size_t i = 0; i < prob.size(); ++i) {
                const double q = std::clamp(double(prob.raw()[i]), 1e-7, 1.0 - 1e-7);
                const double t = p.gt.mask.raw()[i];
                bce -= t * std::log(q) + (1.0 - t) * std::log(1.0 - q);
            }
            total += bce / double(prob.size());
        }
        return total / double(pairs.size());
    };

    train::TrainConfig run_cfg = cfg;
    run_cfg.val_fraction = 0.0;  // virtual crop samples; validate on full images
    run_cfg.aug_rotation_deg = 0.0;
    std::vector<nn::ParamStore<real>*> stores{&seg.net->store()};
    train::run_training<real>(run_cfg, steps_per_epoch * run_cfg.batch_size, step, validate,
                              stores, "shadow_seg", "val_bce");
    return seg;
}

ShadowMask refine_mask(const ShadowMask& raw) {
    ShadowMask out;
    out.mask = imgproc::dilate(imgproc::close_(raw.mask, 6), 3);
    return out;
}

ImageU8 edge_map(const ImageF& image) { return imgproc::canny(image, 1.5f, 0.1f, 0.2f); }

// ---- elimination ----

Stage stage_from_string(const std::string& s) {
    if (s == "edge") return Stage::Edge;
    if (s == "inpaint") return Stage::Inpaint;
    if (s == "joint") return Stage::Joint;
    throw ConfigError("unknown stage: " + s + " (want edge|inpaint|joint)");
}

std::string to_string(Stage s) {
    switch (s) {
        case Stage::Edge: return "edge";
        case Stage::Inpaint: return "inpaint";
        default: return "joint";
    }
}

DeshadowModel::DeshadowModel(uint64_t seed, const DeshadowNetConfig& c)
    : g_edge(derive_seed(seed, "g_edge"), 3, 1, c.gen_base, c.n_res),
      g_texture(derive_seed(seed, "g_tex"), 3, 1, c.gen_base, c.n_res),
      d_edge(derive_seed(seed, "d_edge"), 2, c.disc_base),
      d_texture(derive_seed(seed, "d_tex"), 1, c.disc_base),
      cfg(c) {}

void DeshadowModel::save(const fs::path& path) const {
    std::map<std::string, Tensor4<real>> merged;
    for (auto& [k, v] : g_edge.store().state_dict()) merged["g1." + k] = v;
    for (auto& [k, v] : g_texture.store().state_dict()) merged["g2." + k] = v;
    for (auto& [k, v] : d_edge.store().state_dict()) merged["d1." + k] = v;
    for (auto& [k, v] : d_texture.store().state_dict()) merged["d2." + k] = v;
    train::CheckpointMeta meta;
    nlohmann::json cfg_json{{"stages_done", stages_done},
                            {"gen_base", cfg.gen_base},
                            {"n_res", cfg.n_res},
                            {"disc_base", cfg.disc_base},
                            {"feat_base", cfg.feat_base}};
    meta.config_echo = cfg_json.dump();
    train::save_checkpoint(path, merged, meta);
}

DeshadowModel DeshadowModel::load(const fs::path& path) {
    train::CheckpointMeta meta;
    const auto merged = train::load_checkpoint<real>(path, &meta);
    nlohmann::json cfg_json = nlohmann::json::parse(meta.config_echo);
    DeshadowNetConfig nc;
    nc.gen_base = cfg_json.value("gen_base", 16);
    nc.n_res = cfg_json.value("n_res", 4);
    nc.disc_base = cfg_json.value("disc_base", 12);
    nc.feat_base = cfg_json.value("feat_base", 8);
    DeshadowModel m(0, nc);
    m.stages_done = cfg_json.value("stages_done", 0);
    auto sub = [&](const std::string& prefix) {
        std::map<std::string, Tensor4<real>> s;
        for (auto& [k, v] : merged)
            if (k.rfind(prefix, 0) == 0) s[k.substr(prefix.size())] = v;
        return s;
    };
    m.g_edge.store().load_state_dict(sub("g1."));
    m.g_texture.store().load_state_dict(sub("g2."));
    m.d_edge.store().load_state_dict(sub("d1."));
    m.d_texture.store().load_state_dict(sub("d2."));
    return m;
}

ImageU8 sample_vessel_mask(Rng& rng, int height, int width) {
    ImageU8 mask(height, width, 0);
    const int n_strokes = static_cast<int>(rng.uniform_int(1, 3));
    for (int s = 0; s < n_strokes; ++s) {
        const double radius = rng.uniform(1.5, 4.5);  // width 3..9 px
        double y = rng.uniform(0.1, 0.9) * height;
        double x = rng.uniform(0.1, 0.9) * width;
        double dir = rng.uniform(0.0, 6.2831853);
        const int steps = static_cast<int>(rng.uniform_int(height / 2, height + width));
        for (int i = 0; i < steps; ++i) {
            const int r0 = std::max(0, int(y - radius)), r1 = std::min(height - 1, int(y + radius));
            const int c0 = std::max(0, int(x - radius)), c1 = std::min(width - 1, int(x + radius));
            for (int r = r0; r <= r1; ++r)
                for (int c = c0; c <= c1; ++c)
                    if ((r - y) * (r - y) + (c - x) * (c - x) <= radius * radius)
                        mask.at(r, c) = 1;
            dir += rng.normal(0.0, 0.35);
            y += std::sin(dir);
            x += std::cos(dir);
            if (y < 1 || y > height - 2 || x < 1 || x > width - 2) break;
        }
    }
    // a stroke always stamps its first disk, but guard the degenerate case
    bool any = false;
    for (uint8_t v : mask.raw()) any |= v != 0;
    if (!any) mask.at(height / 2, width / 2) = 1;
    return mask;
}

namespace {

struct Batch {
    Var<real> img, edge, mask, inv_mask, masked_img, masked_edge;
};

Batch make_batch(const std::vector<ImageF>& textures, const DeshadowTrainConfig& cfg, Rng& rng) {
    const int B = cfg.batch, P = cfg.patch;
    Tensor4<real> img(Shape4{B, 1, P, P}), edge(Shape4{B, 1, P, P}), mask(Shape4{B, 1, P, P});
    for (int k = 0; k < B; ++k) {
        const auto& tex = textures[rng.uniform_int(0, int64_t(textures.size()) - 1)];
        OCT_REQUIRE(tex.height() >= P && tex.width() >= P,
                    "texture smaller than the training patch");
        const int r0 = static_cast<int>(rng.uniform_int(0, tex.height() - P));
        const int c0 = static_cast<int>(rng.uniform_int(0, tex.width() - P));
        const ImageF patch = crop(tex, r0, c0, P, P);
        const ImageU8 e = edge_map(patch);
        ImageU8 m = sample_vessel_mask(rng, P, P);
        int on = 0;
        for (uint8_t v : m.raw()) on += v != 0;
        if (on == 0) m.at(P / 2, P / 2) = 1;  // sampler guarantees non-empty anyway
        for (int r = 0; r < P; ++r)
            for (int c = 0; c < P; ++c) {
                img.at(k, 0, r, c) = patch.at(r, c);
                edge.at(k, 0, r, c) = static_cast<real>(e.at(r, c));
                mask.at(k, 0, r, c) = static_cast<real>(m.at(r, c));
            }
    }
    Batch b;
    b.img = ag::constant(img);
    b.edge = ag::constant(edge);
    b.mask = ag::constant(mask);
    Tensor4<real> inv(mask.shape);
    for (size_t i = 0; i < inv.numel(); ++i) inv.v[i] = 1.0f - mask.v[i];
    b.inv_mask = ag::constant(std::move(inv));
    b.masked_img = ag::mul(b.img, b.inv_mask);
    b.masked_edge = ag::mul(b.edge, b.inv_mask);
    return b;
}

Var<real> compose(const Var<real>& outside, const Var<real>& inside, const Batch& b) {
    return ag::add(ag::mul(outside, b.inv_mask), ag::mul(inside, b.mask));
}

Var<real> concat3(const Var<real>& a, const Var<real>& b, const Var<real>& c) {
    return ag::concat_channels(ag::concat_channels(a, b), c);
}

}  // namespace

void train_deshadow_stage(DeshadowModel& model, const std::vector<ImageF>& clean_textures,
                          const DeshadowTrainConfig& cfg, Stage stage,
                          std::vector<train::EpochRecord>* log) {
    OCT_REQUIRE(!clean_textures.empty(), "train_deshadow_stage: no textures");
    const int want = static_cast<int>(stage);
    OCT_REQUIRE_CFG(model.stages_done >= want - 1,
                    "deshadow stages must run in order edge -> inpaint -> joint; '" +
                        to_string(stage) + "' requested after " +
                        std::to_string(model.stages_done) + " stage(s)");

    Rng rng(derive_seed(cfg.seed, "deshadow_" + to_string(stage)));
    const FeatureNet& phi = feature_net(model.cfg.feat_base);
    CollapseGuard guard(cfg.d_collapse_eps, cfg.d_collapse_steps);

    using train::Adam;
    std::vector<nn::ParamStore<real>*> g_stores, d_stores;
    if (stage == Stage::Edge) {
        g_stores = {&model.g_edge.store()};
        d_stores = {&model.d_edge.store()};
    } else if (stage == Stage::Inpaint) {
        g_stores = {&model.g_texture.store()};
        d_stores = {&model.d_texture.store()};
    } else {
        g_stores = {&model.g_edge.store(), &model.g_texture.store()};
        d_stores = {&model.d_texture.store()};
    }
    Adam<real> g_opt(Adam<real>::collect(g_stores), 0.9, 0.999, 1e-8);
    Adam<real> d_opt(Adam<real>::collect(d_stores), 0.9, 0.999, 1e-8);
    const double g_lr = stage == Stage::Joint ? cfg.joint_lr : cfg.g_lr;

    double g_sum = 0.0, d_sum = 0.0;
    for (int step = 0; step < cfg.steps; ++step) {
        Batch b = make_batch(clean_textures, cfg, rng);

        Var<real> fake;  // generator output for this stage's discriminator
        Var<real> real_sample;
        if (stage == Stage::Edge) {
            fake = model.g_edge.forward(concat3(b.masked_img, b.masked_edge, b.mask));
            real_sample = b.edge;
        } else {
            Var<real> edge_prior = b.edge;
            if (stage == Stage::Joint) {
                Var<real> e_pred =
                    model.g_edge.forward(concat3(b.masked_img, b.masked_edge, b.mask));
                edge_prior = compose(b.edge, e_pred, b);
            }
            fake = model.g_texture.forward(concat3(b.masked_img, edge_prior, b.mask));
            real_sample = b.img;
        }

        // discriminator update (generator output detached)
        nn::PatchDiscriminator<real>& disc =
            stage == Stage::Edge ? model.d_edge : model.d_texture;
        Var<real> fake_detached = ag::constant(fake->value);
        Var<real> d_in_real =
            stage == Stage::Edge ? ag::concat_channels(b.img, real_sample) : real_sample;
        Var<real> d_in_fake =
            stage == Stage::Edge ? ag::concat_channels(b.img, fake_detached) : fake_detached;
        d_opt.zero_grad();
        Var<real> d_loss = ag::scale(ag::add(ag::bce_logits_mean(disc.forward(d_in_real), real(1)),
                                             ag::bce_logits_mean(disc.forward(d_in_fake), real(0))),
                                     real(0.5));
        ag::backward(d_loss);
        d_opt.step(cfg.d_lr);
        guard.observe(d_loss->value[0], to_string(stage));

        // generator update
        g_opt.zero_grad();
        Var<real> g_loss;
        if (stage == Stage::Edge) {
            std::vector<Var<real>> feats_fake, feats_real;
            Var<real> logits = disc.forward(ag::concat_channels(b.img, fake), &feats_fake);
            disc.forward(ag::concat_channels(b.img, real_sample), &feats_real);
            Var<real> adv = ag::bce_logits_mean(logits, real(1));
            Var<real> fm = ag::scalar<real>(0);
            for (size_t i = 0; i < feats_fake.size(); ++i)
                fm = ag::add(fm, ag::l1_mean(feats_fake[i], ag::constant(feats_real[i]->value)));
            g_loss = ag::add(ag::scale(adv, real(cfg.w_adv1)), ag::scale(fm, real(cfg.w_fm)));
        } else {
            Var<real> adv = ag::bce_logits_mean(disc.forward(fake), real(1));
            Var<real> rec = ag::l1_mean(fake, b.img);
            Var<real> composed = compose(b.img, fake, b);
            const auto f_fake = phi.features(fake);
            const auto f_comp = phi.features(composed);
            const auto f_real = phi.features(b.img);
            Var<real> perc = ag::scalar<real>(0);
            Var<real> style = ag::scalar<real>(0);
            for (size_t i = 0; i < f_fake.size(); ++i) {
                perc = ag::add(perc,
                               ag::l1_mean(f_fake[i], ag::constant(f_real[i]->value)));
                style = ag::add(style, ag::l1_mean(ag::gram(f_comp[i]),
                                                   ag::constant(ag::gram(ag::constant(
                                                                    f_real[i]->value))->value)));
            }
            g_loss = ag::add(
                ag::add(ag::scale(rec, real(cfg.w_rec)), ag::scale(adv, real(cfg.w_adv2))),
                ag::add(ag::scale(perc, real(cfg.w_perc)), ag::scale(style, real(cfg.w_style))));
        }
        if (!std::isfinite(g_loss->value[0]) || !std::isfinite(d_loss->value[0]))
            throw TrainError("non-finite loss term 'gan_" + to_string(stage) + "' at step " +
                             std::to_string(step));
        ag::backward(g_loss);
        g_opt.step(g_lr);

        g_sum += g_loss->value[0];
        d_sum += d_loss->value[0];
        if (log && (step + 1) % 50 == 0) {
            train::EpochRecord rec;
            rec.epoch = step;
            rec.lr = g_lr;
            rec.mean_parts = {{"g_loss", g_sum / 50.0}, {"d_loss", d_sum / 50.0}};
            log->push_back(rec);
            g_sum = d_sum = 0.0;
        }
    }
    model.stages_done = want;
}

EnFaceImage eliminate_shadows(const EnFaceImage& choroid, const ShadowMask& mask,
                              const DeshadowModel& model) {
    OCT_REQUIRE(choroid.pixels.same_shape(mask.mask), "eliminate_shadows: shape mismatch");
    OCT_REQUIRE(model.stages_done >= 2, "deshadow model not trained through the inpaint stage");
    const double frac = mask_fraction(mask.mask);
    OCT_REQUIRE(frac <= 0.60, "mask covers " + std::to_string(int(frac * 100)) +
                                  "% of the image; the method operates below 60%");

    // pad to the generators' stride multiple (4: two stride-2 downsamplings)
    int ph = 0, pw = 0;
    const ImageF img = reflect_pad_to_multiple(choroid.pixels, 4, &ph, &pw);
    ImageF mask_f(img.height(), img.width(), 0.0f);
    for (int r = 0; r < choroid.pixels.height(); ++r)
        for (int c = 0; c < choroid.pixels.width(); ++c)
            mask_f.at(r, c) = static_cast<float>(mask.mask.at(r, c));

    const ImageU8 edges = edge_map(img);
    Tensor4<real> img_t = image_to_tensor(img);
    Tensor4<real> mask_t = image_to_tensor(mask_f);
    Tensor4<real> inv_t(mask_t.shape);
    for (size_t i = 0; i < inv_t.numel(); ++i) inv_t.v[i] = 1.0f - mask_t.v[i];
    Tensor4<real> edge_t(img_t.shape);
    for (size_t i = 0; i < edge_t.numel(); ++i)
        edge_t.v[i] = static_cast<real>(edges.raw()[i]) * inv_t.v[i];

    auto vimg = ag::constant(img_t);
    auto vmask = ag::constant(mask_t);
    auto vinv = ag::constant(inv_t);
    auto vmasked_img = ag::mul(vimg, vinv);
    auto vmasked_edge = ag::constant(edge_t);

    const Var<real> e_pred =
        model.g_edge.forward(concat3(vmasked_img, vmasked_edge, vmask));
    const Var<real> e_comp = ag::add(vmasked_edge, ag::mul(e_pred, vmask));
    const Var<real> i_pred = model.g_texture.forward(concat3(vmasked_img, e_comp, vmask));

    EnFaceImage out;
    out.pixels = choroid.pixels;  // exact composition outside the mask
    const ImageF gen = tensor_to_image(i_pred->value);
    for (int r = 0; r < out.pixels.height(); ++r)
        for (int c = 0; c < out.pixels.width(); ++c)
            if (mask.mask.at(r, c)) out.pixels.at(r, c) = std::clamp(gen.at(r, c), 0.0f, 1.0f);
    return out;
}

}  // namespace oct::shadow
