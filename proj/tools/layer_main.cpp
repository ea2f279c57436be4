// Command-line front end for the LAYER pipeline: phantom generation, CARN
// training, occlusion explainability, faithfulness benchmarking, the
// model-randomization sanity check, and the directional association test.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "layer/aggregate.hpp"
#include "layer/carn.hpp"
#include "layer/dataset.hpp"
#include "layer/faithfulness.hpp"
#include "layer/manifest.hpp"
#include "layer/phantom.hpp"
#include "layer/saliency.hpp"
#include "layer/sanity.hpp"
#include "layer/stats.hpp"
#include "layer/svg.hpp"
#include "layer/util.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

json provenance(std::uint64_t seed, const json& config) {
    return json{{"artifact", layer::kArtifactName},
                {"version", layer::kArtifactVersion},
                {"seed", seed},
                {"config", config}};
}

void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw layer::io_error("cannot write " + path.string());
    out << j.dump(2) << "\n";
    if (!out) throw layer::io_error("write failed for " + path.string());
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw layer::io_error("cannot write " + path.string());
    out << text;
    if (!out) throw layer::io_error("write failed for " + path.string());
}

struct CommonArgs {
    std::string data_dir;
    std::string model_path;
    std::string scenario = "side-mp";
    std::string modality = "bmode";
    std::uint64_t seed = 42;
    int threads = 1;
};

layer::Scenario scenario_of(const CommonArgs& a) {
    auto s = layer::parse_scenario(a.scenario);
    if (!s) throw layer::config_error("unknown scenario '" + a.scenario + "'");
    return *s;
}

layer::ModalitySet modality_of(const CommonArgs& a) {
    auto m = layer::parse_modality_set(a.modality);
    if (!m) throw layer::config_error("unknown modality set '" + a.modality + "'");
    return *m;
}

std::vector<layer::ScanUnit> load_data(const CommonArgs& a, layer::CohortManifest& manifest) {
    if (a.data_dir.empty()) throw layer::config_error("--data is required");
    manifest = layer::read_manifest(fs::path(a.data_dir) / "manifest.json");
    manifest.validate_files(a.data_dir);
    return layer::load_units(a.data_dir, manifest, scenario_of(a), modality_of(a));
}

layer::CarnModel load_model(const CommonArgs& a) {
    if (a.model_path.empty())
        throw layer::config_error("--model is required for this subcommand");
    return layer::load_checkpoint(a.model_path);
}

std::string error_kind(const std::exception& e) {
    if (dynamic_cast<const layer::format_error*>(&e)) return "format";
    if (dynamic_cast<const layer::shape_error*>(&e)) return "shape";
    if (dynamic_cast<const layer::config_error*>(&e)) return "config";
    if (dynamic_cast<const layer::capability_error*>(&e)) return "capability";
    if (dynamic_cast<const layer::training_error*>(&e)) return "training";
    if (dynamic_cast<const layer::separation_error*>(&e)) return "separation";
    if (dynamic_cast<const layer::rank_error*>(&e)) return "rank";
    if (dynamic_cast<const layer::structural_error*>(&e)) return "structural";
    if (dynamic_cast<const layer::io_error*>(&e)) return "io";
    if (dynamic_cast<const layer::domain_error*>(&e)) return "domain";
    return "internal";
}

void add_common(CLI::App* cmd, CommonArgs& a, bool with_model) {
    cmd->add_option("--data", a.data_dir, "cohort directory containing manifest.json");
    if (with_model) cmd->add_option("--model", a.model_path, "trained checkpoint path");
    cmd->add_option("--scenario", a.scenario,
                    "visit-mp | side-mp | side-trigger (default side-mp)");
    cmd->add_option("--modality", a.modality, "bmode | swe | both (default bmode)");
    cmd->add_option("--seed", a.seed, "RNG seed")->envname("LAYER_SEED");
    cmd->add_option("--threads", a.threads, "worker threads, 0 = auto (default 1)");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"LAYER: tissue-layer occlusion explainability pipeline"};
    app.require_subcommand(1);

    // --- phantom ---------------------------------------------------------
    CommonArgs ph_common;
    std::string ph_out;
    int ph_patients = 8, ph_nx = 64, ph_ny = 64, ph_nz = 32, ph_planted = 5;
    double ph_delta = 2.0, ph_sigma = 0.1, ph_jitter = 0.2;
    auto* ph = app.add_subcommand("phantom", "generate a synthetic layered cohort");
    ph->add_option("--out", ph_out, "output directory")->required();
    ph->add_option("--patients", ph_patients, "patient count (default 8)");
    ph->add_option("--nx", ph_nx, "grid x (default 64)");
    ph->add_option("--ny", ph_ny, "grid y (default 64)");
    ph->add_option("--nz", ph_nz, "grid z (default 32)");
    ph->add_option("--delta", ph_delta, "planted effect size in sigmas (default 2)");
    ph->add_option("--sigma", ph_sigma, "noise level (default 0.1)");
    ph->add_option("--planted-layer", ph_planted, "layer code 1..6 (default 5 = DFM)");
    ph->add_option("--jitter", ph_jitter, "boundary jitter fraction (default 0.2)");
    ph->add_option("--seed", ph_common.seed, "RNG seed")->envname("LAYER_SEED");

    // --- train -----------------------------------------------------------
    CommonArgs tr_common;
    std::string tr_out = "model.ckpt", tr_log;
    layer::TrainConfig tr_cfg;
    auto* tr = app.add_subcommand("train", "train the CARN classifier");
    add_common(tr, tr_common, false);
    tr->add_option("--epochs", tr_cfg.epochs, "training epochs (default 30)");
    tr->add_option("--batch", tr_cfg.batch_size, "minibatch size (default 32)");
    tr->add_option("--lr", tr_cfg.lr, "Adam learning rate (default 1e-4)");
    tr->add_option("--folds", tr_cfg.folds, "fold count (default 5)");
    tr->add_option("--val-fold", tr_cfg.val_fold, "validation fold (default folds-1)");
    tr->add_flag("--curriculum,!--no-curriculum", tr_cfg.curriculum,
                 "self-paced curriculum (default on)");
    tr->add_flag("--air,!--no-air", tr_cfg.air, "adaptive intensity re-weighting (default on)");
    tr->add_flag("--standardize,!--no-standardize", tr_cfg.standardize,
                 "per-scan standardization (default on)");
    tr->add_option("--out", tr_out, "checkpoint output path (default model.ckpt)");
    tr->add_option("--log", tr_log, "training log CSV path");

    // --- explain ---------------------------------------------------------
    CommonArgs ex_common;
    std::string ex_out = "saliency.json", ex_csv, ex_svg;
    bool ex_pairs = true;
    int ex_bootstrap = 1000;
    auto* ex = app.add_subcommand("explain", "layer-wise occlusion analysis");
    add_common(ex, ex_common, true);
    ex->add_flag("--pairs,!--no-pairs", ex_pairs, "pairwise occlusion + OIS (default on)");
    ex->add_option("--bootstrap", ex_bootstrap, "bootstrap resamples (default 1000)");
    ex->add_option("--out", ex_out, "report JSON path (default saliency.json)");
    ex->add_option("--csv", ex_csv, "CSV prefix: writes <prefix>_layers.csv, <prefix>_pairs.csv");
    ex->add_option("--svg", ex_svg,
                   "SVG prefix: writes <prefix>_annulus.svg, <prefix>_chord_{rho,ois}.svg");

    // --- faithfulness ----------------------------------------------------
    CommonArgs fa_common;
    std::string fa_out = "faithfulness.json", fa_csv, fa_methods = "LAYER,IG,SmoothGrad,Random";
    auto* fa = app.add_subcommand("faithfulness", "insertion/deletion benchmark of rankings");
    add_common(fa, fa_common, true);
    fa->add_option("--methods", fa_methods,
                   "comma-separated: LAYER,IG,SmoothGrad,Random (default all)");
    fa->add_option("--out", fa_out, "summary JSON path (default faithfulness.json)");
    fa->add_option("--csv", fa_csv, "per-scan metrics CSV path");

    // --- sanity ----------------------------------------------------------
    CommonArgs sa_common;
    std::string sa_out = "sanity.json";
    int sa_bootstrap = 200;
    auto* sa = app.add_subcommand("sanity", "model-randomization sanity check");
    add_common(sa, sa_common, true);
    sa->add_option("--bootstrap", sa_bootstrap, "bootstrap resamples (default 200)");
    sa->add_option("--out", sa_out, "result JSON path (default sanity.json)");

    // --- associate -------------------------------------------------------
    CommonArgs as_common;
    std::string as_out = "association.json", as_csv;
    auto* as = app.add_subcommand("associate",
                                  "directional saliency vs side-label association test");
    add_common(as, as_common, true);
    as->add_option("--out", as_out, "result JSON path (default association.json)");
    as->add_option("--csv", as_csv, "association table CSV path");

    // --- report ----------------------------------------------------------
    std::string rp_in, rp_svg = "report";
    auto* rp = app.add_subcommand("report", "render SVG annuli from a saliency report JSON");
    rp->add_option("--in", rp_in, "saliency report JSON (explain output)")->required();
    rp->add_option("--svg", rp_svg, "SVG output prefix (default 'report')");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*ph) {
            layer::PhantomConfig cfg;
            cfg.dims = {ph_nx, ph_ny, ph_nz};
            cfg.slabs = layer::default_slabs(ph_nz);
            cfg.patients = ph_patients;
            cfg.delta = ph_delta;
            cfg.sigma = ph_sigma;
            cfg.planted_layer = ph_planted;
            cfg.boundary_jitter = ph_jitter;
            cfg.seed = ph_common.seed;
            const auto manifest = layer::generate_cohort(cfg, ph_out);
            json config{{"patients", ph_patients},
                        {"dims", {ph_nx, ph_ny, ph_nz}},
                        {"delta", ph_delta},
                        {"sigma", ph_sigma},
                        {"planted_layer", ph_planted},
                        {"jitter", ph_jitter},
                        {"out", ph_out}};
            json summary = provenance(cfg.seed, config);
            summary["records"] = manifest.records.size();
            std::cout << summary.dump(2) << "\n";
        } else if (*tr) {
            layer::CohortManifest manifest;
            const auto units = load_data(tr_common, manifest);
            tr_cfg.scenario = scenario_of(tr_common);
            tr_cfg.modality = modality_of(tr_common);
            tr_cfg.seed = tr_common.seed;
            tr_cfg.threads = tr_common.threads;
            const auto result = layer::train_carn(units, manifest, tr_cfg);
            layer::save_checkpoint(tr_out, *result.model);
            if (!tr_log.empty()) layer::write_training_log(tr_log, result.log);
            json config{{"scenario", tr_common.scenario},
                        {"modality", tr_common.modality},
                        {"epochs", tr_cfg.epochs},
                        {"batch", tr_cfg.batch_size},
                        {"lr", tr_cfg.lr},
                        {"curriculum", tr_cfg.curriculum},
                        {"air", tr_cfg.air},
                        {"standardize", tr_cfg.standardize},
                        {"folds", tr_cfg.folds}};
            json summary = provenance(tr_cfg.seed, config);
            summary["checkpoint"] = tr_out;
            summary["final_train_loss"] = result.log.back().mean_loss;
            summary["final_val_auc"] = result.log.back().val_auc;
            std::cout << summary.dump(2) << "\n";
        } else if (*ex) {
            layer::CohortManifest manifest;
            const auto units = load_data(ex_common, manifest);
            const auto model = load_model(ex_common);
            layer::AnalysisOptions opts;
            opts.pairs = ex_pairs;
            opts.bootstrap_b = ex_bootstrap;
            opts.seed = ex_common.seed;
            opts.threads = ex_common.threads;
            const auto res = layer::run_layer_analysis(model, units, opts);
            json config{{"scenario", ex_common.scenario},
                        {"modality", ex_common.modality},
                        {"pairs", ex_pairs},
                        {"bootstrap", ex_bootstrap},
                        {"model", ex_common.model_path}};
            json out = provenance(ex_common.seed, config);
            out["saliency"] = layer::to_json(res.report);
            out["interactions"] = layer::to_json(res.interactions);
            write_json(ex_out, out);
            if (!ex_csv.empty()) {
                layer::write_saliency_csv(ex_csv + "_layers.csv", res.report);
                layer::write_interaction_csv(ex_csv + "_pairs.csv", res.interactions);
            }
            if (!ex_svg.empty()) {
                write_text(ex_svg + "_annulus.svg",
                           layer::svg::render_annulus(res.report, "Layer saliency"));
                write_text(ex_svg + "_chord_rho.svg",
                           layer::svg::render_chord_annulus(
                               res.interactions, layer::svg::ChordValue::Rho,
                               "Saliency correlation"));
                write_text(ex_svg + "_chord_ois.svg",
                           layer::svg::render_chord_annulus(
                               res.interactions, layer::svg::ChordValue::Ois,
                               "Occlusion interaction"));
            }
            std::cout << "wrote " << ex_out << "\n";
        } else if (*fa) {
            layer::CohortManifest manifest;
            const auto units = load_data(fa_common, manifest);
            const auto model = load_model(fa_common);
            std::vector<layer::AttributionMethod> methods;
            std::stringstream ss(fa_methods);
            std::string tok;
            while (std::getline(ss, tok, ',')) {
                auto m = layer::parse_method(tok);
                if (!m) throw layer::config_error("unknown method '" + tok + "'");
                methods.push_back(*m);
            }
            layer::CompareOptions opts;
            opts.threads = fa_common.threads;
            const auto table =
                layer::compare_methods(model, units, methods, fa_common.seed, opts);
            json config{{"scenario", fa_common.scenario},
                        {"modality", fa_common.modality},
                        {"methods", fa_methods},
                        {"model", fa_common.model_path}};
            json out = provenance(fa_common.seed, config);
            out["comparison"] = layer::to_json(table);
            write_json(fa_out, out);
            if (!fa_csv.empty()) layer::write_comparison_csv(fa_csv, table);
            std::cout << "wrote " << fa_out << "\n";
        } else if (*sa) {
            layer::CohortManifest manifest;
            const auto units = load_data(sa_common, manifest);
            const auto model = load_model(sa_common);
            layer::AnalysisOptions opts;
            opts.pairs = false;
            opts.bootstrap_b = sa_bootstrap;
            opts.seed = sa_common.seed;
            opts.threads = sa_common.threads;
            const auto res = layer::sanity_randomization(model, units, sa_common.seed, opts);
            json config{{"scenario", sa_common.scenario},
                        {"modality", sa_common.modality},
                        {"model", sa_common.model_path}};
            json out = provenance(sa_common.seed, config);
            out["sanity"] = layer::to_json(res);
            write_json(sa_out, out);
            std::cout << "wrote " << sa_out << "\n";
        } else if (*as) {
            layer::CohortManifest manifest;
            const auto units = load_data(as_common, manifest);
            const auto model = load_model(as_common);
            layer::AnalysisOptions opts;
            opts.pairs = false;
            opts.bootstrap_b = 50; // CIs unused here, keep the pass cheap
            opts.seed = as_common.seed;
            opts.threads = as_common.threads;
            const auto res = layer::run_layer_analysis(model, units, opts);
            const auto sides = layer::side_directional_scores(units, res.per_scan);
            const auto rows = layer::associate_sides(sides);
            json config{{"scenario", as_common.scenario},
                        {"modality", as_common.modality},
                        {"model", as_common.model_path}};
            json out = provenance(as_common.seed, config);
            json jrows = json::array();
            for (const auto& r : rows)
                jrows.push_back({{"layer", r.layer},
                                 {"kind", layer::score_kind_name(r.kind)},
                                 {"beta1", r.beta1},
                                 {"ci_low", r.ci_low},
                                 {"ci_high", r.ci_high},
                                 {"p", r.p_value},
                                 {"auc", r.auc},
                                 {"pass", r.pass},
                                 {"status", r.status}});
            out["association"] = jrows;
            out["sides"] = sides.size();
            write_json(as_out, out);
            if (!as_csv.empty()) layer::write_association_csv(as_csv, rows);
            std::cout << "wrote " << as_out << "\n";
        } else if (*rp) {
            std::ifstream in(rp_in);
            if (!in) throw layer::io_error("cannot open " + rp_in);
            json j;
            in >> j;
            const json& body = j.contains("saliency") ? j.at("saliency") : j;
            const auto report = layer::saliency_report_from_json(body);
            write_text(rp_svg + "_annulus.svg",
                       layer::svg::render_annulus(report, "Layer saliency"));
            if (j.contains("interactions")) {
                const auto inter = layer::interaction_report_from_json(j.at("interactions"));
                write_text(rp_svg + "_chord_rho.svg",
                           layer::svg::render_chord_annulus(
                               inter, layer::svg::ChordValue::Rho, "Saliency correlation"));
                write_text(rp_svg + "_chord_ois.svg",
                           layer::svg::render_chord_annulus(
                               inter, layer::svg::ChordValue::Ois, "Occlusion interaction"));
            }
            std::cout << "wrote " << rp_svg << "_annulus.svg\n";
        }
    } catch (const std::exception& e) {
        json err{{"error", {{"type", error_kind(e)}, {"message", e.what()}}}};
        std::cerr << err.dump() << "\n";
        return 1;
    }
    return 0;
}
