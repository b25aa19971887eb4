#include "oct/pipeline.hpp"

#include <algorithm>
#include <sstream>

#include "oct/enface.hpp"
#include "oct/geometry.hpp"
#include "oct/io.hpp"

#include "json.hpp"

namespace oct::pipeline {

std::map<std::string, std::string> parse_ini(const std::string& text) {
    std::map<std::string, std::string> out;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            const auto b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[' && line.back() == ']') {
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        OCT_REQUIRE_CFG(eq != std::string::npos,
                        "config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        OCT_REQUIRE_CFG(!key.empty(), "config line " + std::to_string(lineno) + ": empty key");
        out[(section.empty() ? key : section + "." + key)] = trim(line.substr(eq + 1));
    }
    return out;
}

std::map<std::string, std::string> load_config(const fs::path& path) {
    return parse_ini(io::read_text_file(path));
}

namespace {

std::string get_or(const std::map<std::string, std::string>& cfg, const std::string& key,
                   const std::string& fallback) {
    const auto it = cfg.find(key);
    return it == cfg.end() ? fallback : it->second;
}

double num_or(const std::map<std::string, std::string>& cfg, const std::string& key,
              double fallback) {
    const auto it = cfg.find(key);
    if (it == cfg.end()) return fallback;
    try {
        return std::stod(it->second);
    } catch (...) {
        throw ConfigError("config key '" + key + "': not a number: " + it->second);
    }
}

}  // namespace

SegEval evaluate_segmentation(const RegionMask& pred, const RegionMask& gt) {
    SegEval e;
    const auto s = metrics::seg_scores(pred, gt);
    e.di = s.di;
    e.iou = s.iou;
    e.acc = s.acc;
    e.sen = s.sen;
    const auto [pu, pl] = boundary_from_mask(pred);
    const auto [gu, gl] = boundary_from_mask(gt);
    const double worst = gt.mask.height();
    try {
        e.ausde_bm = metrics::ausde(pu, gu).mean_px;
    } catch (const DataError&) {
        e.ausde_bm = worst;  // no overlapping valid columns: worst-case penalty
    }
    try {
        e.ausde_csi = metrics::ausde(pl, gl).mean_px;
    } catch (const DataError&) {
        e.ausde_csi = worst;
    }
    return e;
}

std::vector<bionet::Sample> load_seg_split(const fs::path& split_dir) {
    std::vector<bionet::Sample> out;
    for (int i = 0;; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "%05d.png", i);
        const fs::path bscan = split_dir / (std::string("bscan_") + name);
        if (!fs::exists(bscan)) break;
        bionet::Sample s;
        s.image = io::read_png_float(bscan);
        s.layers = io::read_layers_png(split_dir / (std::string("layers_") + name));
        s.choroid = io::read_mask_png(split_dir / (std::string("choroid_") + name));
        out.push_back(std::move(s));
    }
    OCT_REQUIRE(!out.empty(), "no samples found in " + split_dir.string());
    return out;
}

std::string manifest_json(const std::map<std::string, std::string>& config_echo,
                          const std::map<std::string, uint64_t>& checkpoint_hashes,
                          uint64_t master_seed) {
    nlohmann::json j;
    j["tool_version"] = kToolVersion;
    j["master_seed"] = master_seed;
    j["config"] = config_echo;
    nlohmann::json hashes;
    for (const auto& [name, h] : checkpoint_hashes) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
        hashes[name] = buf;
    }
    j["checkpoint_hashes"] = hashes;
    return j.dump(2) + "\n";
}

RunResult run_pipeline(const fs::path& config_path, const fs::path& run_dir) {
    const auto cfg = load_config(config_path);
    fs::create_directories(run_dir);

    const uint64_t master_seed =
        static_cast<uint64_t>(num_or(cfg, "pipeline.master_seed", 0));

    // ---- input volume ----
    OctVolume vol;
    if (get_or(cfg, "input.phantom", "false") == "true") {
        phantom::PhantomConfig pc;
        pc.seed = derive_seed(master_seed, "phantom");
        pc.width = static_cast<int>(num_or(cfg, "phantom.width", 192));
        pc.height = static_cast<int>(num_or(cfg, "phantom.height", 192));
        pc.frames = static_cast<int>(num_or(cfg, "phantom.frames", 64));
        // default layer thicknesses are laid out for 192 rows; rescale
        for (auto& t : pc.layer_mean_thicknesses_px) t *= pc.height / 192.0f;
        pc.speckle_contrast = static_cast<float>(num_or(cfg, "phantom.speckle_contrast", 0.15));
        pc.shadow_attenuation =
            static_cast<float>(num_or(cfg, "phantom.shadow_attenuation", 0.35));
        pc.layer_thickness_spread_frac =
            static_cast<float>(num_or(cfg, "phantom.thickness_spread", 0.0));
        pc.vessel_count_min = static_cast<int>(num_or(cfg, "phantom.vessel_count_min", 3));
        pc.vessel_count_max = static_cast<int>(num_or(cfg, "phantom.vessel_count_max", 6));
        pc.vessel_radius_min_px =
            static_cast<float>(num_or(cfg, "phantom.vessel_radius_min", 2.0));
        pc.vessel_radius_max_px =
            static_cast<float>(num_or(cfg, "phantom.vessel_radius_max", 4.0));
        const auto pv = phantom::generate_volume(pc);
        vol = pv.volume;
        io::save_volume(run_dir / "input_volume.raw", vol);
    } else {
        const std::string path = get_or(cfg, "input.volume", "");
        OCT_REQUIRE_CFG(!path.empty(), "config: input.volume missing (or set input.phantom=true)");
        vol = io::load_volume(path);
    }

    // ---- models ----
    std::map<std::string, uint64_t> hashes;
    const std::string bionet_path = get_or(cfg, "models.bionet", "");
    OCT_REQUIRE_CFG(!bionet_path.empty(), "config: models.bionet checkpoint missing");
    OCT_REQUIRE(fs::exists(bionet_path), "missing checkpoint: " + bionet_path);
    hashes["bionet"] = io::hash_file(bionet_path);
    bionet::NetConfig nc;
    nc.levels = static_cast<int>(num_or(cfg, "models.levels", 4));
    nc.global_base = static_cast<int>(num_or(cfg, "models.global_base", 8));
    nc.local_base = static_cast<int>(num_or(cfg, "models.local_base", 8));
    const auto ablation = bionet::ablation_from_string(get_or(cfg, "models.ablation", "full"));
    const auto models = bionet::BioNetModels::load(bionet_path, ablation, nc, nullptr);

    const std::string shadow_path = get_or(cfg, "models.shadow_seg", "");
    OCT_REQUIRE_CFG(!shadow_path.empty(), "config: models.shadow_seg checkpoint missing");
    OCT_REQUIRE(fs::exists(shadow_path), "missing checkpoint: " + shadow_path);
    hashes["shadow_seg"] = io::hash_file(shadow_path);
    const auto segmenter = shadow::ShadowSegmenter::load(shadow_path);

    const std::string deshadow_path = get_or(cfg, "models.deshadow", "");
    OCT_REQUIRE_CFG(!deshadow_path.empty(), "config: models.deshadow checkpoint missing");
    OCT_REQUIRE(fs::exists(deshadow_path), "missing checkpoint: " + deshadow_path);
    hashes["deshadow"] = io::hash_file(deshadow_path);
    const auto deshadow_model = shadow::DeshadowModel::load(deshadow_path);

    // ---- segmentation ----
    fs::create_directories(run_dir / "segmentation");
    std::vector<RegionMask> masks(vol.frames);
    std::vector<LayerMap> layer_maps(vol.frames);
    std::ostringstream thickness_csv;
    thickness_csv << "frame,mean_thickness_um,empty_flag\n";
    for (int f = 0; f < vol.frames; ++f) {
        const auto res = bionet::segment_choroid(vol.frame(f), models);
        masks[f] = res.choroid;
        layer_maps[f] = res.layers;
        char name[32];
        std::snprintf(name, sizeof(name), "%05d.png", f);
        io::write_mask_png(run_dir / "segmentation" / (std::string("choroid_") + name),
                           res.choroid);
        io::write_layers_png(run_dir / "segmentation" / (std::string("layers_") + name),
                             res.layers);
        thickness_csv << f << "," << res.thickness_px.mean * vol.axial_pitch_um << ","
                      << (res.empty_choroid ? 1 : 0) << "\n";
    }
    io::write_text_file(run_dir / "thickness.csv", thickness_csv.str());

    // ---- en-face projection ----
    const auto pair = enface::enface_pair(vol, masks);
    io::write_png(run_dir / "rpe.png", pair.rpe.pixels);
    io::write_png(run_dir / "choroid.png", pair.choroid.pixels);

    // ---- shadow localization ----
    const auto raw_mask = segmenter.segment(pair.rpe.pixels);
    const auto refined = shadow::refine_mask(raw_mask);
    io::write_mask_png(run_dir / "shadow_raw.png", RegionMask{raw_mask.mask});
    io::write_mask_png(run_dir / "shadow_mask.png", RegionMask{refined.mask});

    // ---- shadow elimination ----
    const auto deshadowed = shadow::eliminate_shadows(pair.choroid, refined, deshadow_model);
    io::write_png(run_dir / "deshadowed.png", deshadowed.pixels);

    // ---- vessel maps and VD report ----
    const auto v_orig = metrics::binarize_vessels(pair.choroid);
    const auto v_desh = metrics::binarize_vessels(deshadowed);
    io::write_mask_png(run_dir / "vessel_original.png", RegionMask{v_orig.map});
    io::write_mask_png(run_dir / "vessel_deshadowed.png", RegionMask{v_desh.map});

    RunResult result;
    result.run_dir = run_dir;
    result.vd_original = metrics::vessel_density(v_orig);
    result.vd_deshadowed = metrics::vessel_density(v_desh);
    RegionMask outside_shadow;
    outside_shadow.mask = map_image<uint8_t, uint8_t>(refined.mask,
                                                      [](uint8_t v) { return uint8_t(v ? 0 : 1); });
    result.vd_shadow_excluded = metrics::vessel_density(v_orig, outside_shadow);

    std::ostringstream vd_csv;
    vd_csv << "measure,vd\noriginal," << result.vd_original << "\ndeshadowed,"
           << result.vd_deshadowed << "\nshadow_excluded," << result.vd_shadow_excluded << "\n";
    io::write_text_file(run_dir / "vd_report.csv", vd_csv.str());

    io::write_text_file(run_dir / "manifest.json", manifest_json(cfg, hashes, master_seed));
    return result;
}

AblationResult ablation_suite(const AblationConfig& cfg, const fs::path& out_csv) {
    AblationResult result;
    std::map<std::string, std::vector<SegEval>> evals;  // method -> per-seed mean eval

    for (const uint64_t seed : cfg.seeds) {
        // shared dataset for every variant under this seed
        std::vector<bionet::Sample> train_samples, test_samples;
        for (int i = 0; i < cfg.n_train; ++i) {
            phantom::PhantomConfig pc = cfg.phantom;
            pc.seed = derive_seed(seed, "ablation_train" + std::to_string(i));
            const auto s = phantom::generate_bscan(pc, 0);
            train_samples.push_back({s.bscan.pixels, s.layer_map, s.choroid_mask});
        }
        for (int i = 0; i < cfg.n_test; ++i) {
            phantom::PhantomConfig pc = cfg.phantom;
            pc.seed = derive_seed(seed, "ablation_test" + std::to_string(i));
            const auto s = phantom::generate_bscan(pc, 0);
            test_samples.push_back({s.bscan.pixels, s.layer_map, s.choroid_mask});
        }

        // one frozen biomarker net per seed, shared by Bio variants
        train::TrainConfig bio_cfg = cfg.biomarker_tpl;
        bio_cfg.seed = derive_seed(seed, "biomarker");
        const auto bio = bionet::train_biomarker_net(train_samples, bio_cfg, cfg.net);

        for (const auto variant : cfg.variants) {
            train::TrainConfig tc = cfg.train_tpl;
            tc.seed = derive_seed(seed, "bionet");
            const bool needs_bio =
                variant == bionet::Ablation::UnetBio || variant == bionet::Ablation::Full;
            const auto out = bionet::train_bionet(train_samples, needs_bio ? bio.net : nullptr,
                                                  tc, {}, variant, cfg.net);

            SegEval mean;
            for (const auto& s : test_samples) {
                const auto res = bionet::segment_choroid(s.image, out.models);
                const auto e = evaluate_segmentation(res.choroid, s.choroid);
                mean.di += e.di;
                mean.iou += e.iou;
                mean.acc += e.acc;
                mean.sen += e.sen;
                mean.ausde_bm += e.ausde_bm;
                mean.ausde_csi += e.ausde_csi;
            }
            const double n = test_samples.size();
            mean.di /= n;
            mean.iou /= n;
            mean.acc /= n;
            mean.sen /= n;
            mean.ausde_bm /= n;
            mean.ausde_csi /= n;
            evals[bionet::to_string(variant)].push_back(mean);
        }
    }

    auto median = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        const size_t n = v.size();
        return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    };

    std::ostringstream csv;
    csv << "method,iou,ausde,di,acc,sen\n";
    for (const auto variant : cfg.variants) {
        const std::string name = bionet::to_string(variant);
        const auto& es = evals[name];
        std::vector<double> di, iou, acc, sen, ausde;
        for (const auto& e : es) {
            di.push_back(e.di);
            iou.push_back(e.iou);
            acc.push_back(e.acc);
            sen.push_back(e.sen);
            ausde.push_back(0.5 * (e.ausde_bm + e.ausde_csi));
        }
        AblationResult::Row row{name, median(iou), median(ausde), median(di), median(acc),
                                median(sen)};
        result.rows.push_back(row);
        result.per_seed_di[name] = di;
        csv << name << "," << row.iou << "," << row.ausde << "," << row.di << "," << row.acc
            << "," << row.sen << "\n";
    }
    if (!out_csv.empty()) {
        io::write_text_file(out_csv, csv.str());
        result.csv_path = out_csv;
    }
    return result;
}

}  // namespace oct::pipeline
