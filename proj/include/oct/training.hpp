#pragma once

#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "oct/geometry.hpp"
#include "oct/io.hpp"
#include "oct/nn.hpp"
#include "oct/rng.hpp"
#include "oct/types.hpp"

namespace oct::train {

namespace fs = std::filesystem;

struct TrainConfig {
    std::string optimizer = "adam";
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    double initial_lr = 0.01;
    int batch_size = 4;
    int max_epochs = 1;
    std::vector<int> lr_drop_epochs;
    double lr_drop_factor = 0.1;
    bool aug_hflip = true;
    double aug_rotation_deg = 10.0;  // rotations drawn uniformly in ±this
    uint64_t seed = 0;
    fs::path checkpoint_dir;
    double val_fraction = 0.10;
    // optional early stop: when set, training stops once the validation
    // metric drops to this value or below
    std::optional<double> early_stop_val;

    void validate() const;
};

// initial_lr times drop_factor^(number of drop epochs <= epoch)
double lr_at(const TrainConfig& cfg, int epoch);

// ---- augmentation ----

// One supervised sample: a B-scan image plus whichever spatial targets the
// stage uses. Thickness targets are recomputed from the transformed mask.
struct TrainSample {
    ImageF image;
    std::optional<LayerMap> layers;
    std::optional<RegionMask> region;
};

ImageF rotate_bilinear(const ImageF& img, double degrees);
ImageU8 rotate_nearest(const ImageU8& img, double degrees);

TrainSample augment(const TrainSample& s, const TrainConfig& cfg, Rng& rng);

// ---- optimizer ----

template <typename T>
class Adam {
public:
    Adam(std::vector<ag::Var<T>> params, double beta1, double beta2, double eps)
        : params_(std::move(params)), b1_(beta1), b2_(beta2), eps_(eps) {
        for (const auto& p : params_) {
            m_.emplace_back(p->value.numel(), T(0));
            v_.emplace_back(p->value.numel(), T(0));
        }
    }

    template <typename Store>
    static std::vector<ag::Var<T>> collect(std::vector<Store*> stores) {
        std::vector<ag::Var<T>> out;
        for (auto* s : stores)
            for (auto& [name, var] : s->items()) out.push_back(var);
        return out;
    }

    void zero_grad() {
        for (auto& p : params_) {
            p->ensure_grad();
            p->zero_grad();
        }
    }

    void step(double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(b1_, t_);
        const double bc2 = 1.0 - std::pow(b2_, t_);
        for (size_t pi = 0; pi < params_.size(); ++pi) {
            auto& p = *params_[pi];
            if (!p.requires_grad) continue;
            p.ensure_grad();
            for (size_t i = 0; i < p.value.numel(); ++i) {
                const double g = static_cast<double>(p.grad[i]);
                double m = b1_ * m_[pi][i] + (1.0 - b1_) * g;
                double v = b2_ * v_[pi][i] + (1.0 - b2_) * g * g;
                m_[pi][i] = static_cast<T>(m);
                v_[pi][i] = static_cast<T>(v);
                const double mhat = m / bc1, vhat = v / bc2;
                p.value[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps_));
            }
        }
    }

private:
    std::vector<ag::Var<T>> params_;
    double b1_, b2_, eps_;
    int64_t t_ = 0;
    std::vector<std::vector<T>> m_, v_;
};

// ---- checkpoints ----

// 16-byte header: magic "OCTCKPT\0", u32 version, u32 scalar width; then a
// u64-length JSON table of {epoch, config, params:[{name, shape}]} and the
// raw little-endian parameter data in table order.
struct CheckpointMeta {
    int epoch = 0;
    std::string config_echo;  // JSON text
};

template <typename T>
void save_checkpoint(const fs::path& path, const std::map<std::string, ag::Tensor4<T>>& state,
                     const CheckpointMeta& meta);

template <typename T>
std::map<std::string, ag::Tensor4<T>> load_checkpoint(const fs::path& path,
                                                      CheckpointMeta* meta = nullptr);

// Loads a checkpoint written by run_training (parameters prefixed "s<i>.")
// back into the same ordered list of stores.
template <typename T, typename StoreList>
void load_checkpoint_into(const fs::path& path, StoreList stores) {
    auto merged = load_checkpoint<T>(path);
    int si = 0;
    for (auto* s : stores) {
        std::map<std::string, ag::Tensor4<T>> sub;
        const std::string prefix = "s" + std::to_string(si) + ".";
        for (auto& [name, t] : merged)
            if (name.rfind(prefix, 0) == 0) sub[name.substr(prefix.size())] = t;
        s->load_state_dict(sub);
        ++si;
    }
}

// ---- generic supervised loop ----

using LossParts = std::vector<std::pair<std::string, double>>;

template <typename T>
struct StepResult {
    ag::Var<T> loss;
    LossParts parts;
};

struct EpochRecord {
    int epoch = 0;
    double lr = 0.0;
    LossParts mean_parts;
    double val_metric = 0.0;
};

struct TrainOutcome {
    std::vector<EpochRecord> log;
    double best_val = 0.0;
    int best_epoch = -1;
    fs::path checkpoint_path;
    fs::path csv_path;
};

void write_metric_csv(const fs::path& path, const std::vector<EpochRecord>& log,
                      const std::string& val_name);

// Runs the epoch/batch/optimize/validate/checkpoint loop. `train_step` builds
// the loss graph for one batch of sample indices; `validate` scores the held
// out indices (lower is better). The best-validation state is restored into
// the stores before returning and written to checkpoint_dir when set.
template <typename T, typename StoreList>
TrainOutcome run_training(const TrainConfig& cfg, int n_samples,
                          const std::function<StepResult<T>(const std::vector<int>&, Rng&)>& train_step,
                          const std::function<double(const std::vector<int>&)>& validate,
                          StoreList stores, const std::string& checkpoint_name,
                          const std::string& val_name = "val") {
    cfg.validate();
    OCT_REQUIRE(n_samples >= 1, "train: dataset is empty");

    std::vector<int> indices(n_samples);
    for (int i = 0; i < n_samples; ++i) indices[i] = i;
    Rng split_rng(derive_seed(cfg.seed, "split"));
    split_rng.shuffle(indices);
    int n_val = static_cast<int>(std::floor(cfg.val_fraction * n_samples));
    if (n_samples >= 2 && cfg.val_fraction > 0.0) n_val = std::max(n_val, 1);
    n_val = std::min(n_val, n_samples - 1);
    std::vector<int> val_idx(indices.begin(), indices.begin() + n_val);
    std::vector<int> train_idx(indices.begin() + n_val, indices.end());

    Adam<T> opt(Adam<T>::collect(stores), cfg.beta1, cfg.beta2, cfg.adam_eps);
    Rng order_rng(derive_seed(cfg.seed, "order"));
    Rng aug_rng(derive_seed(cfg.seed, "augment"));

    TrainOutcome out;
    double best_val = std::numeric_limits<double>::infinity();
    std::vector<std::map<std::string, ag::Tensor4<T>>> best_states;

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const double lr = lr_at(cfg, epoch);
        order_rng.shuffle(train_idx);

        LossParts sums;
        int n_batches = 0;
        for (size_t b = 0; b < train_idx.size(); b += cfg.batch_size) {
            std::vector<int> batch(train_idx.begin() + b,
                                   train_idx.begin() + std::min(train_idx.size(),
                                                                b + cfg.batch_size));
            opt.zero_grad();
            StepResult<T> step = train_step(batch, aug_rng);
            for (const auto& [name, v] : step.parts)
                if (!std::isfinite(v))
                    throw TrainError("non-finite loss term '" + name + "' at epoch " +
                                     std::to_string(epoch));
            ag::backward(step.loss);
            opt.step(lr);

            if (sums.empty())
                sums = step.parts;
            else
                for (size_t i = 0; i < sums.size(); ++i) sums[i].second += step.parts[i].second;
            ++n_batches;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        for (auto& [name, v] : sums) rec.mean_parts.emplace_back(name, v / std::max(1, n_batches));
        rec.val_metric = n_val > 0 ? validate(val_idx) : validate(train_idx);
        out.log.push_back(rec);

        if (rec.val_metric < best_val) {
            best_val = rec.val_metric;
            out.best_epoch = epoch;
            best_states.clear();
            for (auto* s : stores) best_states.push_back(s->state_dict());
        }
        if (cfg.early_stop_val && rec.val_metric <= *cfg.early_stop_val) break;
    }

    out.best_val = best_val;
    if (!best_states.empty()) {
        size_t i = 0;
        for (auto* s : stores) s->load_state_dict(best_states[i++]);
    }

    if (!cfg.checkpoint_dir.empty()) {
        fs::create_directories(cfg.checkpoint_dir);
        std::map<std::string, ag::Tensor4<T>> merged;
        int si = 0;
        for (auto* s : stores) {
            for (auto& [name, t] : s->state_dict())
                merged["s" + std::to_string(si) + "." + name] = t;
            ++si;
        }
        CheckpointMeta meta;
        meta.epoch = out.best_epoch;
        meta.config_echo = "{}";
        out.checkpoint_path = cfg.checkpoint_dir / (checkpoint_name + ".ckpt");
        save_checkpoint(out.checkpoint_path, merged, meta);
        out.csv_path = cfg.checkpoint_dir / (checkpoint_name + "_log.csv");
        write_metric_csv(out.csv_path, out.log, val_name);
    }
    return out;
}

}  // namespace oct::train
