// Command-line front end for the OCT choroid analysis pipeline.
#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "oct/enface.hpp"
#include "oct/io.hpp"
#include "oct/pipeline.hpp"

using namespace oct;
namespace fs = std::filesystem;

namespace {

struct PhantomFlags {
    phantom::PhantomConfig cfg;
    void attach(CLI::App* cmd) {
        cmd->add_option("--seed", cfg.seed, "master seed");
        cmd->add_option("--width", cfg.width, "A-lines per B-scan");
        cmd->add_option("--height", cfg.height, "depth rows");
        cmd->add_option("--frames", cfg.frames, "frames per volume");
        cmd->add_option("--speckle", cfg.speckle_contrast, "speckle contrast [0,1)");
        cmd->add_option("--attenuation", cfg.shadow_attenuation, "shadow attenuation (0,1]");
        cmd->add_option("--thickness-spread", cfg.layer_thickness_spread_frac,
                        "per-sample layer thickness spread [0,1)");
        cmd->add_option("--wiggle", cfg.boundary_wiggle_amplitude_px, "boundary wiggle px");
        cmd->add_option("--csi-blur", cfg.csi_blur_sigma_px, "CSI blur sigma px");
    }
};

struct TrainFlags {
    train::TrainConfig cfg;
    void attach(CLI::App* cmd) {
        cmd->add_option("--lr", cfg.initial_lr, "initial learning rate");
        cmd->add_option("--epochs", cfg.max_epochs, "training epochs");
        cmd->add_option("--batch", cfg.batch_size, "batch size");
        cmd->add_option("--train-seed", cfg.seed, "training seed");
        cmd->add_option("--lr-drops", cfg.lr_drop_epochs, "epochs at which lr drops by 10x");
        cmd->add_option("--rotation", cfg.aug_rotation_deg, "augmentation rotation range (deg)");
        cmd->add_flag("!--no-flip", cfg.aug_hflip, "disable horizontal flip augmentation");
    }
};

std::vector<RegionMask> read_mask_dir(const fs::path& dir, const std::string& prefix) {
    std::vector<RegionMask> out;
    for (int i = 0;; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "%05d.png", i);
        const fs::path p = dir / (prefix + name);
        if (!fs::exists(p)) break;
        out.push_back(io::read_mask_png(p));
    }
    OCT_REQUIRE(!out.empty(), "no " + prefix + "*.png files in " + dir.string());
    return out;
}

// clean choroid en-face textures from self-generated phantom volumes
std::vector<ImageF> phantom_textures(int n, uint64_t seed, int frames, int width) {
    std::vector<ImageF> out;
    for (int i = 0; i < n; ++i) {
        phantom::PhantomConfig pc;
        pc.seed = derive_seed(seed, "texture" + std::to_string(i));
        pc.frames = frames;
        pc.width = width;
        const auto pv = phantom::generate_volume(pc);
        const auto clean = phantom::assemble_clean_volume(pv);
        std::vector<RegionMask> masks;
        for (const auto& s : pv.samples) masks.push_back(s.choroid_mask);
        const auto bands = enface::choroid_bands(masks);
        out.push_back(minmax_normalize(enface::project_mean(clean, bands).image.pixels));
    }
    return out;
}

int run(int argc, char** argv) {
    CLI::App app{"OCT choroid segmentation, en-face projection and vessel-shadow removal"};
    app.require_subcommand(1);

    // ---- phantom ----
    auto* c_phantom = app.add_subcommand("phantom", "generate a synthetic dataset or volume");
    PhantomFlags pf;
    pf.attach(c_phantom);
    fs::path ph_out;
    int ph_train = 8, ph_test = 4;
    bool ph_volume = false;
    c_phantom->add_option("--out", ph_out, "output directory (or volume path with --volume)")
        ->required();
    c_phantom->add_option("--train", ph_train, "training samples");
    c_phantom->add_option("--test", ph_test, "test samples");
    c_phantom->add_flag("--volume", ph_volume, "write one volume (raw + sidecar) instead");
    bool ph_paper = false;
    c_phantom->add_flag("--paper-scale", ph_paper,
                        "992 depth x 512 A-lines x 256 frames geometry");

    // ---- train-biomarker ----
    auto* c_bio = app.add_subcommand("train-biomarker", "train the thickness regressor");
    TrainFlags bio_tf;
    bio_tf.attach(c_bio);
    fs::path bio_data, bio_out;
    int bio_base = 8;
    c_bio->add_option("--data", bio_data, "dataset directory (phantom layout)")->required();
    c_bio->add_option("--out", bio_out, "checkpoint directory")->required();
    c_bio->add_option("--bio-base", bio_base, "regressor base width");

    // ---- train-bionet ----
    auto* c_bionet = app.add_subcommand("train-bionet", "train the segmentation network");
    TrainFlags bn_tf;
    bn_tf.attach(c_bionet);
    fs::path bn_data, bn_out, bn_bio;
    std::string bn_ablation = "full";
    bionet::NetConfig bn_nc;
    c_bionet->add_option("--data", bn_data, "dataset directory")->required();
    c_bionet->add_option("--out", bn_out, "checkpoint directory")->required();
    c_bionet->add_option("--bio", bn_bio, "biomarker checkpoint (needed for bio|full)");
    c_bionet->add_option("--ablation", bn_ablation, "baseline|gms|unet-gms|bio|full");
    c_bionet->add_option("--levels", bn_nc.levels, "U-Net levels");
    c_bionet->add_option("--base", bn_nc.global_base, "U-Net base channels");

    // ---- train-shadow-seg ----
    auto* c_sseg = app.add_subcommand("train-shadow-seg", "train the shadow segmenter");
    TrainFlags ss_tf;
    ss_tf.attach(c_sseg);
    fs::path ss_out;
    int ss_phantoms = 5;
    uint64_t ss_seed = 0;
    int ss_steps = 64;
    c_sseg->add_option("--out", ss_out, "checkpoint directory")->required();
    c_sseg->add_option("--phantom", ss_phantoms, "number of phantom volumes to train on");
    c_sseg->add_option("--seed", ss_seed, "phantom seed");
    c_sseg->add_option("--steps", ss_steps, "batches per epoch");

    // ---- train-deshadow ----
    auto* c_dsh = app.add_subcommand("train-deshadow", "train the inpainting cascade");
    fs::path dsh_model, dsh_textures;
    std::string dsh_stage = "edge";
    int dsh_phantoms = 4, dsh_steps = 400;
    uint64_t dsh_seed = 0;
    c_dsh->add_option("--model", dsh_model, "model checkpoint (created at the edge stage)")
        ->required();
    c_dsh->add_option("--stage", dsh_stage, "edge|inpaint|joint")->required();
    c_dsh->add_option("--textures", dsh_textures, "directory of clean texture PNGs");
    c_dsh->add_option("--phantom", dsh_phantoms, "phantom volumes when no --textures given");
    c_dsh->add_option("--steps", dsh_steps, "training steps");
    c_dsh->add_option("--seed", dsh_seed, "seed");

    // ---- segment ----
    auto* c_seg = app.add_subcommand("segment", "segment a volume");
    fs::path seg_in, seg_out, seg_model, seg_bio;
    std::string seg_ablation = "full";
    bionet::NetConfig seg_nc;
    c_seg->add_option("--in", seg_in, "volume (raw + JSON sidecar)")->required();
    c_seg->add_option("--out", seg_out, "output directory")->required();
    c_seg->add_option("--model", seg_model, "bionet checkpoint")->required();
    c_seg->add_option("--ablation", seg_ablation, "model variant");
    c_seg->add_option("--levels", seg_nc.levels, "U-Net levels");
    c_seg->add_option("--base", seg_nc.global_base, "U-Net base channels");

    // ---- enface ----
    auto* c_enf = app.add_subcommand("enface", "project en-face RPE and choroid images");
    fs::path enf_in, enf_seg, enf_out;
    c_enf->add_option("--in", enf_in, "volume")->required();
    c_enf->add_option("--seg", enf_seg, "segmentation directory (choroid_%05d.png)")->required();
    c_enf->add_option("--out", enf_out, "output directory")->required();

    // ---- locate-shadows ----
    auto* c_loc = app.add_subcommand("locate-shadows", "segment + refine the shadow mask");
    fs::path loc_rpe, loc_out, loc_model, loc_raw;
    c_loc->add_option("--rpe", loc_rpe, "en-face RPE image")->required();
    c_loc->add_option("--out", loc_out, "refined mask PNG")->required();
    c_loc->add_option("--model", loc_model, "shadow segmenter checkpoint")->required();
    c_loc->add_option("--raw-out", loc_raw, "also write the unrefined mask");

    // ---- deshadow ----
    auto* c_desh = app.add_subcommand("deshadow", "inpaint the shadow regions");
    fs::path desh_cho, desh_mask, desh_out, desh_model;
    c_desh->add_option("--choroid", desh_cho, "en-face choroid image")->required();
    c_desh->add_option("--mask", desh_mask, "shadow mask PNG")->required();
    c_desh->add_option("--out", desh_out, "output PNG")->required();
    c_desh->add_option("--model", desh_model, "deshadow checkpoint")->required();

    // ---- evaluate-seg ----
    auto* c_eseg = app.add_subcommand("evaluate-seg", "score predicted choroid masks");
    fs::path eseg_pred, eseg_gt, eseg_out;
    c_eseg->add_option("--pred", eseg_pred, "directory of choroid_%05d.png")->required();
    c_eseg->add_option("--gt", eseg_gt, "directory of choroid_%05d.png")->required();
    c_eseg->add_option("--out", eseg_out, "scores CSV")->required();

    // ---- evaluate-inpaint ----
    auto* c_einp = app.add_subcommand("evaluate-inpaint", "image fidelity metrics");
    fs::path einp_test, einp_ref, einp_out;
    c_einp->add_option("--test", einp_test, "directory of test PNGs")->required();
    c_einp->add_option("--ref", einp_ref, "directory of reference PNGs")->required();
    c_einp->add_option("--out", einp_out, "fidelity CSV")->required();

    // ---- pipeline ----
    auto* c_pipe = app.add_subcommand("pipeline", "run the full pipeline from a config");
    fs::path pipe_cfg, pipe_out;
    c_pipe->add_option("--config", pipe_cfg, "key=value config with [sections]")->required();
    c_pipe->add_option("--out", pipe_out, "run directory")->required();

    // ---- ablation ----
    auto* c_abl = app.add_subcommand("ablation", "train and score every model variant");
    fs::path abl_out;
    int abl_seeds = 5, abl_train = 64, abl_test = 24, abl_epochs = 3;
    int abl_size = 96;
    c_abl->add_option("--out", abl_out, "output directory")->required();
    c_abl->add_option("--seeds", abl_seeds, "number of seeds");
    c_abl->add_option("--train", abl_train, "training samples per seed");
    c_abl->add_option("--test", abl_test, "test samples per seed");
    c_abl->add_option("--epochs", abl_epochs, "epochs per run");
    c_abl->add_option("--size", abl_size, "B-scan size (pixels)");

    CLI11_PARSE(app, argc, argv);

    if (*c_phantom) {
        if (ph_paper) {
            pf.cfg.height = 992;
            pf.cfg.width = 512;
            pf.cfg.frames = 256;
        }
        // default layer thicknesses are laid out for 192 rows
        for (auto& t : pf.cfg.layer_mean_thicknesses_px) t *= pf.cfg.height / 192.0f;
        if (ph_volume) {
            const auto pv = phantom::generate_volume(pf.cfg);
            io::save_volume(ph_out, pv.volume);
            std::printf("wrote %s (%d frames)\n", ph_out.c_str(), pv.volume.frames);
        } else {
            phantom::generate_dataset(pf.cfg, ph_train, ph_test, ph_out);
            std::printf("wrote %d train / %d test samples to %s\n", ph_train, ph_test,
                        ph_out.c_str());
        }
    } else if (*c_bio) {
        const auto samples = pipeline::load_seg_split(bio_data / "train");
        bio_tf.cfg.checkpoint_dir = bio_out;
        bionet::NetConfig nc;
        nc.bio_base = bio_base;
        const auto out = bionet::train_biomarker_net(samples, bio_tf.cfg, nc);
        std::printf("val MAE %.3f px (%s)\n", out.val_mae_px,
                    out.converged ? "converged" : "warning: above the 2 px target");
        io::write_text_file(bio_out / "biomarker_manifest.json",
                            std::string("{\"val_mae_px\":") + std::to_string(out.val_mae_px) +
                                ",\"converged\":" + (out.converged ? "true" : "false") + "}\n");
    } else if (*c_bionet) {
        const auto ablation = bionet::ablation_from_string(bn_ablation);
        const auto samples = pipeline::load_seg_split(bn_data / "train");
        std::shared_ptr<nn::BiomarkerNet<bionet::real>> bio;
        if (ablation == bionet::Ablation::UnetBio || ablation == bionet::Ablation::Full) {
            OCT_REQUIRE_CFG(!bn_bio.empty(), "--bio checkpoint required for this ablation");
            bio = bionet::load_biomarker(bn_bio);
        }
        bn_nc.local_base = bn_nc.global_base;
        bn_tf.cfg.checkpoint_dir = bn_out;
        const auto out = bionet::train_bionet(samples, bio, bn_tf.cfg, {}, ablation, bn_nc);
        out.models.save(bn_out / ("bionet_" + bn_ablation + ".ckpt"));
        std::printf("best val 1-DI %.4f at epoch %d\n", out.train.best_val, out.train.best_epoch);
    } else if (*c_sseg) {
        std::vector<shadow::ShadowTrainPair> pairs;
        for (int i = 0; i < ss_phantoms; ++i) {
            phantom::PhantomConfig pc;
            pc.seed = derive_seed(ss_seed, "shadow_train" + std::to_string(i));
            const auto pv = phantom::generate_volume(pc);
            std::vector<RegionMask> masks;
            for (const auto& s : pv.samples) masks.push_back(s.choroid_mask);
            const auto pair = enface::enface_pair(pv.volume, masks);
            pairs.push_back({pair.rpe, ShadowMask{pv.shadow_enface}});
        }
        ss_tf.cfg.checkpoint_dir = ss_out;
        const auto seg = shadow::train_shadow_segmenter(pairs, ss_tf.cfg, 32, ss_steps);
        seg.save(ss_out / "shadow_seg.ckpt");
        std::printf("shadow segmenter saved to %s\n", (ss_out / "shadow_seg.ckpt").c_str());
    } else if (*c_dsh) {
        const auto stage = shadow::stage_from_string(dsh_stage);
        shadow::DeshadowModel model =
            stage == shadow::Stage::Edge ? shadow::DeshadowModel(derive_seed(dsh_seed, "deshadow"))
                                         : shadow::DeshadowModel::load(dsh_model);
        std::vector<ImageF> textures;
        if (!dsh_textures.empty()) {
            for (const auto& e : fs::directory_iterator(dsh_textures))
                if (e.path().extension() == ".png") textures.push_back(io::read_png_float(e.path()));
            OCT_REQUIRE(!textures.empty(), "no PNGs in " + dsh_textures.string());
        } else {
            textures = phantom_textures(dsh_phantoms, dsh_seed, 64, 192);
        }
        shadow::DeshadowTrainConfig cfg;
        cfg.steps = dsh_steps;
        cfg.seed = dsh_seed;
        shadow::train_deshadow_stage(model, textures, cfg, stage);
        model.save(dsh_model);
        std::printf("stage '%s' done; model at %s\n", dsh_stage.c_str(), dsh_model.c_str());
    } else if (*c_seg) {
        const auto vol = io::load_volume(seg_in);
        seg_nc.local_base = seg_nc.global_base;
        const auto models = bionet::BioNetModels::load(
            seg_model, bionet::ablation_from_string(seg_ablation), seg_nc, nullptr);
        fs::create_directories(seg_out);
        std::string csv = "frame,mean_thickness_um,empty_flag\n";
        for (int f = 0; f < vol.frames; ++f) {
            const auto res = bionet::segment_choroid(vol.frame(f), models);
            char name[32];
            std::snprintf(name, sizeof(name), "%05d.png", f);
            io::write_mask_png(seg_out / (std::string("choroid_") + name), res.choroid);
            io::write_layers_png(seg_out / (std::string("layers_") + name), res.layers);
            csv += std::to_string(f) + "," +
                   std::to_string(res.thickness_px.mean * vol.axial_pitch_um) + "," +
                   (res.empty_choroid ? "1" : "0") + "\n";
        }
        io::write_text_file(seg_out / "thickness.csv", csv);
        std::printf("segmented %d frames into %s\n", vol.frames, seg_out.c_str());
    } else if (*c_enf) {
        const auto vol = io::load_volume(enf_in);
        const auto masks = read_mask_dir(enf_seg, "choroid_");
        OCT_REQUIRE(static_cast<int>(masks.size()) == vol.frames,
                    "segmentation frame count does not match the volume");
        const auto pair = enface::enface_pair(vol, masks);
        fs::create_directories(enf_out);
        io::write_png(enf_out / "rpe.png", pair.rpe.pixels);
        io::write_png(enf_out / "choroid.png", pair.choroid.pixels);
        std::printf("wrote %s/{rpe,choroid}.png\n", enf_out.c_str());
    } else if (*c_loc) {
        const auto seg = shadow::ShadowSegmenter::load(loc_model);
        const auto rpe = io::read_png_float(loc_rpe);
        const auto raw = seg.segment(rpe);
        const auto refined = shadow::refine_mask(raw);
        if (!loc_raw.empty()) io::write_mask_png(loc_raw, RegionMask{raw.mask});
        io::write_mask_png(loc_out, RegionMask{refined.mask});
        std::printf("wrote %s\n", loc_out.c_str());
    } else if (*c_desh) {
        const auto model = shadow::DeshadowModel::load(desh_model);
        EnFaceImage cho;
        cho.pixels = io::read_png_float(desh_cho);
        const auto mask = io::read_mask_png(desh_mask);
        const auto out = shadow::eliminate_shadows(cho, ShadowMask{mask.mask}, model);
        io::write_png(desh_out, out.pixels);
        std::printf("wrote %s\n", desh_out.c_str());
    } else if (*c_eseg) {
        const auto pred = read_mask_dir(eseg_pred, "choroid_");
        const auto gt = read_mask_dir(eseg_gt, "choroid_");
        OCT_REQUIRE(pred.size() == gt.size(), "pred/gt sample counts differ");
        std::string csv = "sample,di,iou,ausde_bm,ausde_csi,acc,sen\n";
        for (size_t i = 0; i < pred.size(); ++i) {
            const auto e = pipeline::evaluate_segmentation(pred[i], gt[i]);
            csv += std::to_string(i) + "," + std::to_string(e.di) + "," + std::to_string(e.iou) +
                   "," + std::to_string(e.ausde_bm) + "," + std::to_string(e.ausde_csi) + "," +
                   std::to_string(e.acc) + "," + std::to_string(e.sen) + "\n";
        }
        io::write_text_file(eseg_out, csv);
        std::printf("wrote %s (%zu samples)\n", eseg_out.c_str(), pred.size());
    } else if (*c_einp) {
        std::string csv = "sample,ssim,psnr,mse\n";
        int n = 0;
        for (const auto& e : fs::directory_iterator(einp_test)) {
            if (e.path().extension() != ".png") continue;
            const fs::path ref = einp_ref / e.path().filename();
            OCT_REQUIRE(fs::exists(ref), "missing reference image: " + ref.string());
            const auto f = metrics::image_fidelity(io::read_png_float(e.path()),
                                                   io::read_png_float(ref));
            csv += e.path().filename().string() + "," + std::to_string(f.ssim) + "," +
                   std::to_string(metrics::psnr_for_report(f.psnr)) + "," +
                   std::to_string(f.mse) + "\n";
            ++n;
        }
        OCT_REQUIRE(n > 0, "no PNGs in " + einp_test.string());
        io::write_text_file(einp_out, csv);
        std::printf("wrote %s (%d pairs)\n", einp_out.c_str(), n);
    } else if (*c_pipe) {
        const auto res = pipeline::run_pipeline(pipe_cfg, pipe_out);
        std::printf("run complete: %s\nVD original %.4f | deshadowed %.4f | shadow-excluded %.4f\n",
                    res.run_dir.c_str(), res.vd_original, res.vd_deshadowed,
                    res.vd_shadow_excluded);
    } else if (*c_abl) {
        pipeline::AblationConfig cfg;
        cfg.phantom.width = abl_size;
        cfg.phantom.height = abl_size;
        cfg.phantom.frames = 1;
        cfg.phantom.layer_thickness_spread_frac = 0.3f;
        for (auto& t : cfg.phantom.layer_mean_thicknesses_px) t *= abl_size / 192.0f;
        cfg.n_train = abl_train;
        cfg.n_test = abl_test;
        cfg.seeds.clear();
        for (int s = 1; s <= abl_seeds; ++s) cfg.seeds.push_back(s);
        cfg.net.levels = 3;
        cfg.net.global_base = cfg.net.local_base = 8;
        cfg.net.bio_base = 6;
        cfg.train_tpl.initial_lr = 2e-3;
        cfg.train_tpl.max_epochs = abl_epochs;
        cfg.train_tpl.batch_size = 4;
        cfg.biomarker_tpl.initial_lr = 2e-3;
        cfg.biomarker_tpl.max_epochs = 12;
        cfg.biomarker_tpl.batch_size = 8;
        cfg.biomarker_tpl.aug_rotation_deg = 0.0;
        cfg.biomarker_tpl.early_stop_val = 1.5;
        fs::create_directories(abl_out);
        const auto res = pipeline::ablation_suite(cfg, abl_out / "ablation.csv");
        std::printf("%-10s %8s %8s %8s %8s %8s\n", "method", "IOU", "AUSDE", "DI", "Acc", "Sen");
        for (const auto& r : res.rows)
            std::printf("%-10s %8.4f %8.3f %8.4f %8.4f %8.4f\n", r.method.c_str(), r.iou, r.ausde,
                        r.di, r.acc, r.sen);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const TrainError& e) {
        std::fprintf(stderr, "training error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
