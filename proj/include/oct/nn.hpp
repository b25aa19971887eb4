#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "oct/autograd.hpp"

namespace oct::nn {

using ag::Shape4;
using ag::Tensor4;
using ag::Var;

// Owns named parameters for one model; the unit of checkpointing.
template <typename T>
class ParamStore {
public:
    explicit ParamStore(uint64_t seed) : rng_(seed) {}

    Var<T> conv_weight(const std::string& name, int cout, int cin, int kh, int kw) {
        Tensor4<T> t(Shape4{cout, cin, kh, kw});
        const double std = std::sqrt(2.0 / (double(cin) * kh * kw));
        for (auto& v : t.v) v = static_cast<T>(rng_.normal(0.0, std));
        return add(name, std::move(t));
    }

    Var<T> zeros(const std::string& name, Shape4 s) { return add(name, Tensor4<T>(s, T(0))); }
    Var<T> ones(const std::string& name, Shape4 s) { return add(name, Tensor4<T>(s, T(1))); }

    std::vector<std::pair<std::string, Var<T>>>& items() { return items_; }
    const std::vector<std::pair<std::string, Var<T>>>& items() const { return items_; }

    void set_requires_grad(bool on) {
        for (auto& [name, v] : items_) v->requires_grad = on;
    }

    void zero_grads() {
        for (auto& [name, v] : items_) {
            v->ensure_grad();
            v->zero_grad();
        }
    }

    std::map<std::string, Tensor4<T>> state_dict() const {
        std::map<std::string, Tensor4<T>> out;
        for (const auto& [name, v] : items_) out[name] = v->value;
        return out;
    }

    void load_state_dict(const std::map<std::string, Tensor4<T>>& sd) {
        for (auto& [name, v] : items_) {
            auto it = sd.find(name);
            OCT_REQUIRE(it != sd.end(), "checkpoint missing parameter: " + name);
            OCT_REQUIRE(it->second.shape == v->value.shape,
                        "checkpoint shape mismatch for parameter: " + name);
            v->value = it->second;
        }
    }

private:
    Var<T> add(const std::string& name, Tensor4<T> t) {
        auto v = ag::make_var(std::move(t), true);
        items_.emplace_back(name, v);
        return v;
    }

    Rng rng_;
    std::vector<std::pair<std::string, Var<T>>> items_;
};

template <typename T>
struct Conv2d {
    Var<T> w, b;
    int sh = 1, sw = 1, ph = 1, pw = 1;

    Conv2d() = default;
    Conv2d(ParamStore<T>& ps, const std::string& name, int cin, int cout, int k, int stride,
           int pad)
        : Conv2d(ps, name, cin, cout, k, k, stride, stride, pad, pad) {}
    Conv2d(ParamStore<T>& ps, const std::string& name, int cin, int cout, int kh, int kw,
           int sh_, int sw_, int ph_, int pw_)
        : w(ps.conv_weight(name + ".w", cout, cin, kh, kw)),
          b(ps.zeros(name + ".b", Shape4{1, cout, 1, 1})),
          sh(sh_), sw(sw_), ph(ph_), pw(pw_) {}

    Var<T> operator()(const Var<T>& x) const { return ag::conv2d(x, w, b, sh, sw, ph, pw); }
};

template <typename T>
struct InstanceNorm {
    Var<T> gamma, beta;

    InstanceNorm() = default;
    InstanceNorm(ParamStore<T>& ps, const std::string& name, int c)
        : gamma(ps.ones(name + ".g", Shape4{1, c, 1, 1})),
          beta(ps.zeros(name + ".b", Shape4{1, c, 1, 1})) {}

    Var<T> operator()(const Var<T>& x) const { return ag::instance_norm(x, gamma, beta); }
};

// conv + instance norm + relu
template <typename T>
struct ConvBlock {
    Conv2d<T> conv;
    InstanceNorm<T> norm;

    ConvBlock() = default;
    ConvBlock(ParamStore<T>& ps, const std::string& name, int cin, int cout, int k = 3,
              int stride = 1, int pad = 1)
        : conv(ps, name + ".conv", cin, cout, k, stride, pad), norm(ps, name + ".norm", cout) {}

    Var<T> operator()(const Var<T>& x) const { return ag::relu(norm(conv(x))); }
};

enum class Head { None, Sigmoid, Softmax };

// U-shape encoder-decoder: `levels` resolutions, channel width doubling per
// level, 2x max-pool down, nearest-neighbor up with skip concatenation.
template <typename T>
class UNet {
public:
    UNet() = default;
    UNet(uint64_t seed, int in_ch, int out_ch, int levels, int base, Head head)
        : store_(seed), levels_(levels), head_(head) {
        int ch = base;
        int prev = in_ch;
        for (int l = 0; l < levels; ++l) {
            enc1_.emplace_back(store_, "enc" + std::to_string(l) + "a", prev, ch);
            enc2_.emplace_back(store_, "enc" + std::to_string(l) + "b", ch, ch);
            prev = ch;
            if (l + 1 < levels) ch *= 2;
        }
        for (int l = levels - 2; l >= 0; --l) {
            const int skip_ch = base << l;
            const int up_ch = base << (l + 1);
            dec1_.emplace_back(store_, "dec" + std::to_string(l) + "a", up_ch + skip_ch, skip_ch);
            dec2_.emplace_back(store_, "dec" + std::to_string(l) + "b", skip_ch, skip_ch);
        }
        out_conv_ = Conv2d<T>(store_, "out", base, out_ch, 1, 1, 0);
        // sparse-foreground prior: start sigmoid heads near prob 0.12
        if (head == Head::Sigmoid)
            for (auto& v : out_conv_.b->value.v) v = T(-2);
    }

    Var<T> forward(const Var<T>& x) const {
        std::vector<Var<T>> skips;
        Var<T> h = x;
        for (int l = 0; l < levels_; ++l) {
            h = enc2_[l](enc1_[l](h));
            if (l + 1 < levels_) {
                skips.push_back(h);
                h = ag::max_pool2x2(h);
            }
        }
        for (size_t i = 0; i < dec1_.size(); ++i) {
            h = ag::upsample_nearest2x(h);
            h = ag::concat_channels(h, skips[skips.size() - 1 - i]);
            h = dec2_[i](dec1_[i](h));
        }
        Var<T> y = out_conv_(h);
        switch (head_) {
            case Head::Sigmoid: return ag::sigmoid(y);
            case Head::Softmax: return ag::softmax_channels(y);
            default: return y;
        }
    }

    // Spatial dims must be divisible by this for pooling round-trips.
    int spatial_multiple() const { return 1 << (levels_ - 1); }

    ParamStore<T>& store() { return store_; }
    const ParamStore<T>& store() const { return store_; }

private:
    ParamStore<T> store_{0};
    int levels_ = 0;
    Head head_ = Head::None;
    std::vector<ConvBlock<T>> enc1_, enc2_, dec1_, dec2_;
    Conv2d<T> out_conv_;
};

// Residual trunk for the thickness regressor: stem + 8 two-conv blocks + 1x1
// head, 18 conv layers. Strides act on the depth axis only, so the output
// keeps one entry per A-line column. No normalization layers: the regressor
// must preserve absolute intensity (thickness is a quantity, not a pattern),
// and normalization would blow up gradients on the near-uniform probability
// maps it sees inside the consistency loss.
template <typename T>
class BiomarkerNet {
public:
    BiomarkerNet() = default;
    explicit BiomarkerNet(uint64_t seed, int base = 8) : store_(seed) {
        stem_ = Conv2d<T>(store_, "stem", 1, base, 3, 3, 2, 1, 1, 1);
        const int widths[4] = {base, base * 2, base * 3, base * 4};
        int prev = base;
        for (int g = 0; g < 4; ++g) {
            for (int bidx = 0; bidx < 2; ++bidx) {
                const std::string nm = "g" + std::to_string(g) + "b" + std::to_string(bidx);
                Block blk;
                const int stride_h = (bidx == 0) ? 2 : 1;
                blk.c1 = Conv2d<T>(store_, nm + ".c1", prev, widths[g], 3, 3, stride_h, 1, 1, 1);
                blk.c2 = Conv2d<T>(store_, nm + ".c2", widths[g], widths[g], 3, 1, 1);
                if (stride_h != 1 || prev != widths[g]) {
                    blk.proj = Conv2d<T>(store_, nm + ".proj", prev, widths[g], 1, 1, stride_h, 1,
                                         0, 0);
                    blk.has_proj = true;
                }
                blocks_.push_back(std::move(blk));
                prev = widths[g];
            }
        }
        head_ = Conv2d<T>(store_, "head", prev, 1, 1, 1, 0);
    }

    // mask [N,1,H,W] -> per-column thickness [N,1,1,W], in pixels, >= 0
    Var<T> thickness_vector(const Var<T>& mask) const {
        Var<T> h = ag::relu(stem_(mask));
        for (const auto& blk : blocks_) {
            Var<T> y = blk.c2(ag::relu(blk.c1(h)));
            Var<T> skip = blk.has_proj ? ag::conv2d(h, blk.proj.w, blk.proj.b, blk.proj.sh,
                                                    blk.proj.sw, blk.proj.ph, blk.proj.pw)
                                       : h;
            h = ag::relu(ag::add(y, skip));
        }
        Var<T> v = head_(h);                    // [N,1,H',W]
        v = ag::mean_over_height(v);            // [N,1,1,W]
        return ag::scale(ag::softplus(v), T(40));  // pixel-scale output, >= 0
    }

    // biomarker B: mean thickness per sample, [N,1,1,1]
    Var<T> biomarker(const Var<T>& mask) const { return ag::mean_per_sample(thickness_vector(mask)); }

    void freeze() {
        store_.set_requires_grad(false);
        frozen_ = true;
    }
    bool frozen() const { return frozen_; }

    ParamStore<T>& store() { return store_; }
    const ParamStore<T>& store() const { return store_; }

private:
    struct Block {
        Conv2d<T> c1, c2, proj;
        bool has_proj = false;
    };

    ParamStore<T> store_{0};
    Conv2d<T> stem_;
    std::vector<Block> blocks_;
    Conv2d<T> head_;
    bool frozen_ = false;
};

// Encoder-decoder generator: 2 stride-2 downsampling blocks, n_res residual
// blocks, nearest-neighbor upsampling back to input size.
template <typename T>
class ResGenerator {
public:
    ResGenerator() = default;
    ResGenerator(uint64_t seed, int in_ch, int out_ch, int base = 16, int n_res = 4)
        : store_(seed) {
        in_ = ConvBlock<T>(store_, "in", in_ch, base, 3, 1, 1);
        down1_ = ConvBlock<T>(store_, "down1", base, base * 2, 4, 2, 1);
        down2_ = ConvBlock<T>(store_, "down2", base * 2, base * 4, 4, 2, 1);
        for (int i = 0; i < n_res; ++i) {
            const std::string nm = "res" + std::to_string(i);
            res_.push_back({ConvBlock<T>(store_, nm + ".a", base * 4, base * 4),
                            Conv2d<T>(store_, nm + ".b.conv", base * 4, base * 4, 3, 1, 1),
                            InstanceNorm<T>(store_, nm + ".b.norm", base * 4)});
        }
        up1_ = ConvBlock<T>(store_, "up1", base * 4, base * 2, 3, 1, 1);
        up2_ = ConvBlock<T>(store_, "up2", base * 2, base, 3, 1, 1);
        out_ = Conv2d<T>(store_, "out", base, out_ch, 3, 1, 1);
    }

    Var<T> forward(const Var<T>& x) const {
        Var<T> h = down2_(down1_(in_(x)));
        for (const auto& r : res_) h = ag::relu(ag::add(r.n(r.b(r.a(h))), h));
        h = up1_(ag::upsample_nearest2x(h));
        h = up2_(ag::upsample_nearest2x(h));
        return ag::sigmoid(out_(h));
    }

    ParamStore<T>& store() { return store_; }
    const ParamStore<T>& store() const { return store_; }

private:
    struct Res {
        ConvBlock<T> a;
        Conv2d<T> b;
        InstanceNorm<T> n;
    };

    ParamStore<T> store_{0};
    ConvBlock<T> in_, down1_, down2_, up1_, up2_;
    std::vector<Res> res_;
    Conv2d<T> out_;
};

// PatchGAN discriminator: five 4x4 convs with strides 2,2,2,1,1 giving a
// 70x70 receptive field per output logit. Also exposes intermediate features
// for the feature-matching loss.
template <typename T>
class PatchDiscriminator {
public:
    PatchDiscriminator() = default;
    PatchDiscriminator(uint64_t seed, int in_ch, int base = 16) : store_(seed) {
        c1_ = Conv2d<T>(store_, "c1", in_ch, base, 4, 2, 1);
        c2_ = Conv2d<T>(store_, "c2", base, base * 2, 4, 2, 1);
        n2_ = InstanceNorm<T>(store_, "n2", base * 2);
        c3_ = Conv2d<T>(store_, "c3", base * 2, base * 4, 4, 2, 1);
        n3_ = InstanceNorm<T>(store_, "n3", base * 4);
        c4_ = Conv2d<T>(store_, "c4", base * 4, base * 4, 4, 1, 1);
        n4_ = InstanceNorm<T>(store_, "n4", base * 4);
        c5_ = Conv2d<T>(store_, "c5", base * 4, 1, 4, 1, 1);
    }

    // returns logits; features (4 scales) appended to `feats` when non-null
    Var<T> forward(const Var<T>& x, std::vector<Var<T>>* feats = nullptr) const {
        const T slope = T(0.2);
        Var<T> f1 = ag::leaky_relu(c1_(x), slope);
        Var<T> f2 = ag::leaky_relu(n2_(c2_(f1)), slope);
        Var<T> f3 = ag::leaky_relu(n3_(c3_(f2)), slope);
        Var<T> f4 = ag::leaky_relu(n4_(c4_(f3)), slope);
        if (feats) {
            feats->push_back(f1);
            feats->push_back(f2);
            feats->push_back(f3);
            feats->push_back(f4);
        }
        return c5_(f4);
    }

    ParamStore<T>& store() { return store_; }
    const ParamStore<T>& store() const { return store_; }

private:
    ParamStore<T> store_{0};
    Conv2d<T> c1_, c2_, c3_, c4_, c5_;
    InstanceNorm<T> n2_, n3_, n4_;
};

}  // namespace oct::nn
