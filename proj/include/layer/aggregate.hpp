#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "layer/errors.hpp"
#include "layer/manifest.hpp"
#include "layer/rng.hpp"

namespace layer {

/// Arithmetic-mean aggregation of child probabilities.
inline double aggregate(std::span<const double> probabilities) {
    if (probabilities.empty()) throw domain_error("aggregate: empty probability set");
    double s = 0.0;
    for (double p : probabilities) {
        if (p < 0.0 || p > 1.0) throw domain_error("aggregate: probability out of [0,1]");
        s += p;
    }
    return s / static_cast<double>(probabilities.size());
}

enum class AggLevel : std::uint8_t { Scan = 0, Repetition, Site, Side, Visit, Patient };

inline const char* agg_level_name(AggLevel l) {
    switch (l) {
        case AggLevel::Scan: return "scan";
        case AggLevel::Repetition: return "repetition";
        case AggLevel::Site: return "site";
        case AggLevel::Side: return "side";
        case AggLevel::Visit: return "visit";
        default: return "patient";
    }
}

/// One node of the prediction-aggregation hierarchy. Leaves are scans; a
/// node's probability is the mean of its children, computed over present
/// children only (missing scans set the `incomplete` flag).
struct AggregationNode {
    AggLevel level = AggLevel::Scan;
    std::string key;
    int positive = 0;                // scenario label of this node
    std::string scan_key;            // leaves only
    std::vector<AggregationNode> children;
    bool incomplete = false;
};

/// Result of evaluating a tree against per-scan probabilities.
struct AggregatedPrediction {
    std::string key;
    int positive = 0;
    double probability = 0.5;
    bool incomplete = false;
};

namespace detail {

inline std::string visit_key(int patient, int visit) {
    return "p" + std::to_string(patient) + "_v" + std::to_string(visit);
}

} // namespace detail

/// Builds the scenario's aggregation trees from the manifest.
///
/// visit-mp: one tree per (patient, visit); scans grouped by repetition
/// index first, then averaged across repetitions.
/// side-mp / side-trigger: one tree per (patient, visit, side) with scans
/// grouped by site.
inline std::vector<AggregationNode> build_hierarchy(const CohortManifest& manifest,
                                                    Scenario scenario,
                                                    Modality modality) {
    manifest.validate();
    std::vector<const ScanRecord*> recs;
    for (const auto& r : manifest.records)
        if (r.modality == modality) recs.push_back(&r);
    if (recs.empty()) throw structural_error("build_hierarchy: no scans for modality");

    auto scan_key = [](const ScanRecord& r) {
        return "p" + std::to_string(r.patient) + "_v" + std::to_string(r.visit) + "_" +
               side_name(r.side) + "_" + site_name(r.site) + "_r" + std::to_string(r.rep);
    };
    auto leaf = [&](const ScanRecord& r) {
        AggregationNode n;
        n.level = AggLevel::Scan;
        n.key = scan_key(r);
        n.scan_key = n.key;
        n.positive = scenario_positive(r.label, scenario) ? 1 : 0;
        return n;
    };

    std::vector<AggregationNode> roots;
    if (scenario == Scenario::VisitMp) {
        std::map<std::pair<int, int>, std::map<int, std::vector<const ScanRecord*>>> by_visit;
        for (const auto* r : recs) by_visit[{r->patient, r->visit}][r->rep].push_back(r);
        for (const auto& [vk, reps] : by_visit) {
            AggregationNode root;
            root.level = AggLevel::Visit;
            root.key = detail::visit_key(vk.first, vk.second);
            int positive = 0;
            for (const auto& [rep, scans] : reps) {
                AggregationNode rnode;
                rnode.level = AggLevel::Repetition;
                rnode.key = root.key + "_r" + std::to_string(rep);
                for (const auto* s : scans) {
                    rnode.children.push_back(leaf(*s));
                    positive |= rnode.children.back().positive;
                }
                rnode.positive = 0;
                for (const auto& c : rnode.children) rnode.positive |= c.positive;
                root.children.push_back(std::move(rnode));
            }
            root.positive = positive;
            roots.push_back(std::move(root));
        }
    } else {
        std::map<std::tuple<int, int, Side>, std::map<Site, std::vector<const ScanRecord*>>>
            by_side;
        for (const auto* r : recs) by_side[{r->patient, r->visit, r->side}][r->site].push_back(r);
        for (const auto& [sk, sites] : by_side) {
            AggregationNode root;
            root.level = AggLevel::Side;
            root.key = detail::visit_key(std::get<0>(sk), std::get<1>(sk)) + "_" +
                       side_name(std::get<2>(sk));
            for (const auto& [site, scans] : sites) {
                AggregationNode snode;
                snode.level = AggLevel::Site;
                snode.key = root.key + "_" + site_name(site);
                for (const auto* s : scans) {
                    snode.children.push_back(leaf(*s));
                    snode.positive |= snode.children.back().positive;
                }
                root.children.push_back(std::move(snode));
            }
            for (const auto& c : root.children) root.positive |= c.positive;
            roots.push_back(std::move(root));
        }
    }
    return roots;
}

/// Mean-reduces a tree against per-scan probabilities. Scans missing from
/// the map are skipped and flag the node as incomplete; a node with no
/// present children at all is a structural error.
inline AggregatedPrediction evaluate_tree(const AggregationNode& node,
                                          const std::map<std::string, double>& scan_probs) {
    AggregatedPrediction out;
    out.key = node.key;
    out.positive = node.positive;
    if (node.level == AggLevel::Scan) {
        auto it = scan_probs.find(node.scan_key);
        if (it == scan_probs.end())
            throw structural_error("evaluate_tree: missing probability for " + node.scan_key);
        out.probability = it->second;
        return out;
    }
    std::vector<double> child_probs;
    for (const auto& c : node.children) {
        try {
            AggregatedPrediction cp = evaluate_tree(c, scan_probs);
            out.incomplete = out.incomplete || cp.incomplete;
            child_probs.push_back(cp.probability);
        } catch (const structural_error&) {
            out.incomplete = true;
        }
    }
    if (child_probs.empty())
        throw structural_error("evaluate_tree: no predictions under node " + node.key);
    out.probability = aggregate(child_probs);
    return out;
}

// ---------------------------------------------------------------------------
// Patient-level cross-validation folds.

struct FoldAssignment {
    int k = 6; // 5 CV folds + 1 held-out test by default
    std::uint64_t seed = 0;
    std::map<int, int> patient_fold;

    int fold_of(int patient) const {
        auto it = patient_fold.find(patient);
        if (it == patient_fold.end())
            throw domain_error("fold_of: unknown patient " + std::to_string(patient));
        return it->second;
    }
};

/// Seeded fold assignment, stratified by patient-level MP status so class
/// balance carries into every fold. Every scan of a patient lands in exactly
/// one fold by construction.
inline FoldAssignment make_folds(const CohortManifest& manifest, int k, std::uint64_t seed) {
    if (k < 2) throw config_error("make_folds: k must be >= 2");
    std::set<int> patient_set;
    for (const auto& r : manifest.records) patient_set.insert(r.patient);
    if (static_cast<int>(patient_set.size()) < k)
        throw config_error("make_folds: fewer patients than folds");

    std::vector<int> mp, control;
    for (int p : patient_set)
        (mp_positive(patient_label(manifest, p)) ? mp : control).push_back(p);

    FoldAssignment out;
    out.k = k;
    out.seed = seed;
    Rng rng(mix_seed(seed, 0xF01d5u));
    int next_fold = 0;
    for (auto* stratum : {&mp, &control}) {
        rng.shuffle(*stratum);
        for (int p : *stratum) {
            out.patient_fold[p] = next_fold;
            next_fold = (next_fold + 1) % k;
        }
    }
    return out;
}

/// No (train, validation) pair may share a patient: trivially true for a
/// patient->fold map, but verified against the manifest's scans.
inline void check_leakage(const CohortManifest& manifest, const FoldAssignment& folds) {
    std::map<int, std::set<int>> folds_per_patient;
    for (const auto& r : manifest.records)
        folds_per_patient[r.patient].insert(folds.fold_of(r.patient));
    for (const auto& [p, fs] : folds_per_patient)
        if (fs.size() != 1)
            throw structural_error("fold leakage: patient " + std::to_string(p) +
                                   " spans multiple folds");
}

inline void write_folds(const std::filesystem::path& path, const FoldAssignment& f) {
    nlohmann::json j;
    j["seed"] = f.seed;
    j["k"] = f.k;
    nlohmann::json m = nlohmann::json::object();
    for (const auto& [p, fold] : f.patient_fold) m[std::to_string(p)] = fold;
    j["patient_fold"] = m;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

inline FoldAssignment read_folds(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw format_error("folds: " + std::string(e.what()), e.byte);
    }
    FoldAssignment f;
    f.seed = j.at("seed").get<std::uint64_t>();
    f.k = j.at("k").get<int>();
    for (const auto& [key, val] : j.at("patient_fold").items())
        f.patient_fold[std::stoi(key)] = val.get<int>();
    return f;
}

} // namespace layer
