#pragma once

#include <map>
#include <string>

#include "oct/bionet.hpp"
#include "oct/metrics.hpp"
#include "oct/phantom.hpp"
#include "oct/shadow.hpp"

namespace oct::pipeline {

namespace fs = std::filesystem;

// Flat key=value config with [section] headers; keys become "section.key".
std::map<std::string, std::string> parse_ini(const std::string& text);
std::map<std::string, std::string> load_config(const fs::path& path);

// per-sample segmentation evaluation row
struct SegEval {
    double di = 0, iou = 0, acc = 0, sen = 0;
    double ausde_bm = 0, ausde_csi = 0;
};
SegEval evaluate_segmentation(const RegionMask& pred, const RegionMask& gt);

// dataset directory helpers (layout written by phantom::generate_dataset)
std::vector<bionet::Sample> load_seg_split(const fs::path& split_dir);

struct RunResult {
    fs::path run_dir;
    double vd_original = 0, vd_deshadowed = 0, vd_shadow_excluded = 0;
};

// Orchestrates the full pipeline on one volume: segmentation, en-face
// projection, shadow localization and elimination, vessel maps, VD report,
// and a reproducibility manifest. All stage inputs come from the config.
RunResult run_pipeline(const fs::path& config_path, const fs::path& run_dir);

struct AblationConfig {
    phantom::PhantomConfig phantom;
    train::TrainConfig train_tpl;      // per-run seed is overwritten
    train::TrainConfig biomarker_tpl;  // biomarker pre-training recipe
    bionet::NetConfig net;
    int n_train = 64;
    int n_test = 24;
    std::vector<uint64_t> seeds{1, 2, 3, 4, 5};
    std::vector<bionet::Ablation> variants{bionet::Ablation::Baseline, bionet::Ablation::Gms,
                                           bionet::Ablation::UnetGms, bionet::Ablation::UnetBio,
                                           bionet::Ablation::Full};
};

struct AblationResult {
    struct Row {
        std::string method;
        double iou = 0, ausde = 0, di = 0, acc = 0, sen = 0;  // medians over seeds
    };
    std::vector<Row> rows;
    std::map<std::string, std::vector<double>> per_seed_di;
    fs::path csv_path;
};

// Trains every variant with shared per-seed datasets and initializations and
// writes a CSV with columns method,iou,ausde,di,acc,sen (medians over seeds).
AblationResult ablation_suite(const AblationConfig& cfg, const fs::path& out_csv);

std::string manifest_json(const std::map<std::string, std::string>& config_echo,
                          const std::map<std::string, uint64_t>& checkpoint_hashes,
                          uint64_t master_seed);

}  // namespace oct::pipeline
