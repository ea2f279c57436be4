#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "layer/dataset.hpp"
#include "layer/errors.hpp"
#include "layer/scorer.hpp"
#include "layer/stats.hpp"
#include "layer/util.hpp"
#include "layer/volume.hpp"

namespace layer {

/// Occlusion saliency for one layer: delta is the signed logit change from
/// zeroing the layer, SS its magnitude.
struct SaliencyValue {
    double delta = 0.0;
    double ss = 0.0;
};

inline SaliencyValue saliency_score(const Scorer& scorer, const MultiVolume& volume,
                                    const LayerMaskSet& masks, int layer) {
    if (!valid_layer_code(layer))
        throw domain_error("saliency_score: unknown layer code " + std::to_string(layer));
    const double full = scorer.score(volume);
    const int codes[1] = {layer};
    const double occluded = scorer.score(occlude(volume, masks, std::span<const int>(codes)));
    SaliencyValue v;
    v.delta = full - occluded;
    v.ss = std::fabs(v.delta);
    return v;
}

/// Joint occlusion of a layer pair, same logit-difference rule.
inline SaliencyValue multi_layer_saliency(const Scorer& scorer, const MultiVolume& volume,
                                          const LayerMaskSet& masks, int layer_i,
                                          int layer_j) {
    if (layer_i == layer_j)
        throw domain_error("multi_layer_saliency: layers must be distinct");
    if (!valid_layer_code(layer_i) || !valid_layer_code(layer_j))
        throw domain_error("multi_layer_saliency: unknown layer code");
    const double full = scorer.score(volume);
    const int codes[2] = {layer_i, layer_j};
    const double occluded = scorer.score(occlude(volume, masks, std::span<const int>(codes)));
    SaliencyValue v;
    v.delta = full - occluded;
    v.ss = std::fabs(v.delta);
    return v;
}

/// Occlusion-interaction score: positive means synergy, negative redundancy.
inline double ois(double ss_i, double ss_j, double ss_ij, double eps = 1e-6) {
    if (eps <= 0.0) throw domain_error("ois: eps must be positive");
    const double base = ss_i + ss_j;
    return (ss_ij - base) / std::max(base, eps);
}

struct DirectionalSummary {
    double pdss = 0.0;
    double ndss = 0.0;
};

/// Mean positive part and sign-flipped mean negative part of per-scan deltas.
inline DirectionalSummary directional_summary(std::span<const double> deltas) {
    if (deltas.empty()) throw domain_error("directional_summary: empty delta list");
    DirectionalSummary s;
    for (double d : deltas) {
        s.pdss += std::max(d, 0.0);
        s.ndss -= std::min(d, 0.0);
    }
    const double n = static_cast<double>(deltas.size());
    s.pdss /= n;
    s.ndss /= n;
    return s;
}

/// SS normalized by layer voxel count.
inline double volume_adjust(double ss, std::size_t layer_voxels) {
    if (layer_voxels == 0) throw domain_error("volume_adjust: zero-volume layer");
    return ss / static_cast<double>(layer_voxels);
}

/// Pearson correlation of two per-scan saliency series; empty if either
/// series is constant.
inline std::optional<double> saliency_correlation(std::span<const double> ss_i,
                                                  std::span<const double> ss_j) {
    return pearson(ss_i, ss_j);
}

// ---------------------------------------------------------------------------
// Cohort-level reports.

struct CiInterval {
    double low = 0.0;
    double high = 0.0;
};

struct LayerSaliencyRow {
    int layer = 0;
    std::size_t n = 0;
    double ss_mean = 0.0;
    CiInterval ss_ci;
    double delta_mean = 0.0;
    CiInterval delta_ci;
    double pdss = 0.0;
    CiInterval pdss_ci;
    double ndss = 0.0;
    CiInterval ndss_ci;
    double va_ss = 0.0;
    CiInterval va_ss_ci;
    double va_pdss = 0.0;
    CiInterval va_pdss_ci;
    double va_ndss = 0.0;
    CiInterval va_ndss_ci;
    double mean_layer_volume = 0.0;
    std::size_t zero_volume_excluded = 0; // scans dropped from adjusted averages
};

struct SaliencyReport {
    std::array<LayerSaliencyRow, kLayerCount> rows{};
    std::size_t scan_count = 0;
    int bootstrap_b = 1000;
    std::uint64_t seed = 0;

    const LayerSaliencyRow& row(int layer) const {
        if (!valid_layer_code(layer)) throw domain_error("report: unknown layer code");
        return rows[static_cast<std::size_t>(layer - 1)];
    }
};

struct InteractionReport {
    // symmetric 6x6 tables indexed by layer code - 1
    std::array<std::array<std::optional<double>, kLayerCount>, kLayerCount> rho{};
    std::array<std::array<double, kLayerCount>, kLayerCount> mean_ois{};
    std::array<std::array<std::size_t, kLayerCount>, kLayerCount> pair_count{};
    double eps = 1e-6;
};

/// Per-scan saliency table kept alongside the aggregate report; useful for
/// faithfulness comparisons and the association test.
struct PerScanSaliency {
    std::vector<std::string> keys;                      // scan key per row
    std::vector<std::array<double, kLayerCount>> delta; // signed logit change
    std::vector<std::array<double, kLayerCount>> ss;
    std::vector<std::array<std::size_t, kLayerCount>> volumes;
};

struct AnalysisOptions {
    bool pairs = true;
    int bootstrap_b = 1000;
    std::uint64_t seed = 0;
    double eps = 1e-6;
    int threads = 1;
};

struct AnalysisResult {
    SaliencyReport report;
    InteractionReport interactions;
    PerScanSaliency per_scan;
};

/// Full layer-wise occlusion analysis over a set of scan units: per-layer
/// SS/delta/PDSS/NDSS with volume-adjusted variants and percentile-bootstrap
/// CIs, plus pairwise correlation and interaction tables when enabled.
inline AnalysisResult run_layer_analysis(const Scorer& scorer,
                                         const std::vector<ScanUnit>& units,
                                         const AnalysisOptions& options = {}) {
    if (units.empty()) throw domain_error("run_layer_analysis: no eligible scans");
    const std::size_t n = units.size();

    AnalysisResult out;
    out.per_scan.keys.resize(n);
    out.per_scan.delta.resize(n);
    out.per_scan.ss.resize(n);
    out.per_scan.volumes.resize(n);

    std::vector<std::array<std::array<double, kLayerCount>, kLayerCount>> pair_ss;
    if (options.pairs) pair_ss.resize(n);

    parallel_for(n, options.threads, [&](std::size_t i) {
        const auto& u = units[i];
        out.per_scan.keys[i] = u.key;
        const double full = scorer.score(u.volume);
        for (int code = 1; code <= kLayerCount; ++code) {
            const int idx = code - 1;
            const int codes[1] = {code};
            const double occluded =
                scorer.score(occlude(u.volume, *u.mask, std::span<const int>(codes)));
            const double delta = full - occluded;
            out.per_scan.delta[i][idx] = delta;
            out.per_scan.ss[i][idx] = std::fabs(delta);
            out.per_scan.volumes[i][idx] = u.mask->layer_volume(code);
        }
        if (options.pairs) {
            for (int a = 1; a <= kLayerCount; ++a)
                for (int b = a + 1; b <= kLayerCount; ++b) {
                    const int codes[2] = {a, b};
                    const double occluded = scorer.score(
                        occlude(u.volume, *u.mask, std::span<const int>(codes)));
                    const double ss = std::fabs(full - occluded);
                    pair_ss[i][a - 1][b - 1] = ss;
                    pair_ss[i][b - 1][a - 1] = ss;
                }
        }
    });

    out.report.scan_count = n;
    out.report.bootstrap_b = options.bootstrap_b;
    out.report.seed = options.seed;

    for (int code = 1; code <= kLayerCount; ++code) {
        const int idx = code - 1;
        LayerSaliencyRow& row = out.report.rows[static_cast<std::size_t>(idx)];
        row.layer = code;
        row.n = n;

        std::vector<double> ss(n), delta(n), pos(n), neg(n);
        std::vector<double> va_ss, va_pos, va_neg;
        va_ss.reserve(n);
        va_pos.reserve(n);
        va_neg.reserve(n);
        double vol_sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            ss[i] = out.per_scan.ss[i][idx];
            delta[i] = out.per_scan.delta[i][idx];
            pos[i] = std::max(delta[i], 0.0);
            neg[i] = -std::min(delta[i], 0.0);
            const auto vol = out.per_scan.volumes[i][idx];
            vol_sum += static_cast<double>(vol);
            if (vol == 0) {
                ++row.zero_volume_excluded;
                continue;
            }
            const double v = static_cast<double>(vol);
            va_ss.push_back(ss[i] / v);
            va_pos.push_back(pos[i] / v);
            va_neg.push_back(neg[i] / v);
        }

        auto summarize = [&](std::span<const double> xs, double& mean, CiInterval& ci,
                             std::uint64_t tag) {
            if (xs.empty()) {
                mean = 0.0;
                ci = {0.0, 0.0};
                return;
            }
            mean = mean_of(xs);
            const auto [lo, hi] = bootstrap_ci(
                xs, mix_seed(options.seed, static_cast<std::uint64_t>(code), tag),
                options.bootstrap_b);
            ci = {lo, hi};
        };
        summarize(ss, row.ss_mean, row.ss_ci, 1);
        summarize(delta, row.delta_mean, row.delta_ci, 2);
        summarize(pos, row.pdss, row.pdss_ci, 3);
        summarize(neg, row.ndss, row.ndss_ci, 4);
        summarize(va_ss, row.va_ss, row.va_ss_ci, 5);
        summarize(va_pos, row.va_pdss, row.va_pdss_ci, 6);
        summarize(va_neg, row.va_ndss, row.va_ndss_ci, 7);
        row.mean_layer_volume = vol_sum / static_cast<double>(n);
    }

    out.interactions.eps = options.eps;
    for (int a = 0; a < kLayerCount; ++a) {
        std::vector<double> sa(n);
        for (std::size_t i = 0; i < n; ++i) sa[i] = out.per_scan.ss[i][a];
        for (int b = 0; b < kLayerCount; ++b) {
            std::vector<double> sb(n);
            for (std::size_t i = 0; i < n; ++i) sb[i] = out.per_scan.ss[i][b];
            out.interactions.rho[a][b] = n >= 2 ? pearson(sa, sb) : std::nullopt;
        }
    }
    if (options.pairs) {
        for (int a = 0; a < kLayerCount; ++a)
            for (int b = 0; b < kLayerCount; ++b) {
                if (a == b) continue;
                double sum = 0.0;
                for (std::size_t i = 0; i < n; ++i)
                    sum += ois(out.per_scan.ss[i][a], out.per_scan.ss[i][b],
                               pair_ss[i][a][b], options.eps);
                out.interactions.mean_ois[a][b] = sum / static_cast<double>(n);
                out.interactions.pair_count[a][b] = n;
            }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Per-side directional scores for the association test.

struct SideDirectionalScores {
    int patient = 0;
    int visit = 1;
    Side side = Side::Left;
    bool positive = false;
    std::array<double, kLayerCount> pdss{};
    std::array<double, kLayerCount> ndss{};
};

inline std::vector<SideDirectionalScores> side_directional_scores(
    const std::vector<ScanUnit>& units, const PerScanSaliency& per_scan) {
    if (units.size() != per_scan.delta.size())
        throw shape_error("side_directional_scores: unit/saliency size mismatch");
    std::vector<SideDirectionalScores> out;
    for (const auto& g : group_by_side(units)) {
        SideDirectionalScores s;
        s.patient = g.patient;
        s.visit = g.visit;
        s.side = g.side;
        s.positive = g.positive;
        for (int idx = 0; idx < kLayerCount; ++idx) {
            std::vector<double> deltas;
            deltas.reserve(g.unit_ids.size());
            for (int id : g.unit_ids)
                deltas.push_back(per_scan.delta[static_cast<std::size_t>(id)][idx]);
            const auto d = directional_summary(deltas);
            s.pdss[static_cast<std::size_t>(idx)] = d.pdss;
            s.ndss[static_cast<std::size_t>(idx)] = d.ndss;
        }
        out.push_back(s);
    }
    return out;
}

/// One univariate logistic fit per (layer, PDSS/NDSS) against side labels.
inline std::vector<AssociationResult> associate_sides(
    const std::vector<SideDirectionalScores>& sides) {
    if (sides.empty()) throw domain_error("associate_sides: no sides");
    std::vector<AssociationRow> rows;
    for (int code = 1; code <= kLayerCount; ++code)
        for (ScoreKind kind : {ScoreKind::Pdss, ScoreKind::Ndss}) {
            AssociationRow row;
            row.layer = code;
            row.kind = kind;
            for (const auto& s : sides) {
                row.x.push_back(kind == ScoreKind::Pdss
                                    ? s.pdss[static_cast<std::size_t>(code - 1)]
                                    : s.ndss[static_cast<std::size_t>(code - 1)]);
                row.y.push_back(s.positive ? 1 : 0);
            }
            rows.push_back(std::move(row));
        }
    return run_association(rows);
}

// ---------------------------------------------------------------------------
// Serialization.

inline nlohmann::json ci_json(const CiInterval& ci) {
    return nlohmann::json{{"low", ci.low}, {"high", ci.high}};
}

inline nlohmann::json to_json(const SaliencyReport& r) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : r.rows) {
        rows.push_back({{"layer", row.layer},
                        {"name", layer_name(row.layer)},
                        {"n", row.n},
                        {"ss_mean", row.ss_mean},
                        {"ss_ci", ci_json(row.ss_ci)},
                        {"delta_mean", row.delta_mean},
                        {"delta_ci", ci_json(row.delta_ci)},
                        {"pdss", row.pdss},
                        {"pdss_ci", ci_json(row.pdss_ci)},
                        {"ndss", row.ndss},
                        {"ndss_ci", ci_json(row.ndss_ci)},
                        {"va_ss", row.va_ss},
                        {"va_ss_ci", ci_json(row.va_ss_ci)},
                        {"va_pdss", row.va_pdss},
                        {"va_pdss_ci", ci_json(row.va_pdss_ci)},
                        {"va_ndss", row.va_ndss},
                        {"va_ndss_ci", ci_json(row.va_ndss_ci)},
                        {"mean_layer_volume", row.mean_layer_volume},
                        {"zero_volume_excluded", row.zero_volume_excluded}});
    }
    return nlohmann::json{{"scan_count", r.scan_count},
                          {"bootstrap_b", r.bootstrap_b},
                          {"seed", r.seed},
                          {"layers", rows}};
}

inline nlohmann::json to_json(const InteractionReport& r) {
    auto table = [&](auto getter) {
        nlohmann::json t = nlohmann::json::array();
        for (int a = 0; a < kLayerCount; ++a) {
            nlohmann::json row = nlohmann::json::array();
            for (int b = 0; b < kLayerCount; ++b) row.push_back(getter(a, b));
            t.push_back(row);
        }
        return t;
    };
    return nlohmann::json{
        {"eps", r.eps},
        {"rho", table([&](int a, int b) -> nlohmann::json {
             if (!r.rho[a][b]) return nullptr;
             return *r.rho[a][b];
         })},
        {"mean_ois", table([&](int a, int b) -> nlohmann::json { return r.mean_ois[a][b]; })},
        {"pair_count",
         table([&](int a, int b) -> nlohmann::json { return r.pair_count[a][b]; })}};
}

inline SaliencyReport saliency_report_from_json(const nlohmann::json& j) {
    SaliencyReport r;
    r.scan_count = j.at("scan_count").get<std::size_t>();
    r.bootstrap_b = j.at("bootstrap_b").get<int>();
    r.seed = j.at("seed").get<std::uint64_t>();
    auto ci = [](const nlohmann::json& c) {
        return CiInterval{c.at("low").get<double>(), c.at("high").get<double>()};
    };
    for (const auto& row : j.at("layers")) {
        const int code = row.at("layer").get<int>();
        if (!valid_layer_code(code)) throw domain_error("report: bad layer code");
        LayerSaliencyRow& out = r.rows[static_cast<std::size_t>(code - 1)];
        out.layer = code;
        out.n = row.at("n").get<std::size_t>();
        out.ss_mean = row.at("ss_mean").get<double>();
        out.ss_ci = ci(row.at("ss_ci"));
        out.delta_mean = row.at("delta_mean").get<double>();
        out.delta_ci = ci(row.at("delta_ci"));
        out.pdss = row.at("pdss").get<double>();
        out.pdss_ci = ci(row.at("pdss_ci"));
        out.ndss = row.at("ndss").get<double>();
        out.ndss_ci = ci(row.at("ndss_ci"));
        out.va_ss = row.at("va_ss").get<double>();
        out.va_ss_ci = ci(row.at("va_ss_ci"));
        out.va_pdss = row.at("va_pdss").get<double>();
        out.va_pdss_ci = ci(row.at("va_pdss_ci"));
        out.va_ndss = row.at("va_ndss").get<double>();
        out.va_ndss_ci = ci(row.at("va_ndss_ci"));
        out.mean_layer_volume = row.at("mean_layer_volume").get<double>();
        out.zero_volume_excluded = row.at("zero_volume_excluded").get<std::size_t>();
    }
    return r;
}

inline InteractionReport interaction_report_from_json(const nlohmann::json& j) {
    InteractionReport r;
    r.eps = j.at("eps").get<double>();
    for (int a = 0; a < kLayerCount; ++a)
        for (int b = 0; b < kLayerCount; ++b) {
            const auto& rho = j.at("rho").at(a).at(b);
            r.rho[a][b] = rho.is_null() ? std::nullopt
                                        : std::optional<double>(rho.get<double>());
            r.mean_ois[a][b] = j.at("mean_ois").at(a).at(b).get<double>();
            r.pair_count[a][b] = j.at("pair_count").at(a).at(b).get<std::size_t>();
        }
    return r;
}

inline void write_saliency_csv(const std::filesystem::path& path, const SaliencyReport& r) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("cannot write " + path.string());
    out << "layer,name,n,ss_mean,ss_lo,ss_hi,delta_mean,pdss,ndss,va_ss,va_pdss,va_ndss,"
           "mean_layer_volume,zero_volume_excluded\n";
    for (const auto& row : r.rows) {
        out << row.layer << ',' << layer_name(row.layer) << ',' << row.n << ','
            << fmt_double(row.ss_mean) << ',' << fmt_double(row.ss_ci.low) << ','
            << fmt_double(row.ss_ci.high) << ',' << fmt_double(row.delta_mean) << ','
            << fmt_double(row.pdss) << ',' << fmt_double(row.ndss) << ','
            << fmt_double(row.va_ss) << ',' << fmt_double(row.va_pdss) << ','
            << fmt_double(row.va_ndss) << ',' << fmt_double(row.mean_layer_volume) << ','
            << row.zero_volume_excluded << "\n";
    }
}

inline void write_interaction_csv(const std::filesystem::path& path,
                                  const InteractionReport& r) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("cannot write " + path.string());
    out << "layer_i,layer_j,rho,mean_ois,pair_count\n";
    for (int a = 0; a < kLayerCount; ++a)
        for (int b = a + 1; b < kLayerCount; ++b) {
            out << (a + 1) << ',' << (b + 1) << ',';
            if (r.rho[a][b]) out << fmt_double(*r.rho[a][b]);
            out << ',' << fmt_double(r.mean_ois[a][b]) << ',' << r.pair_count[a][b] << "\n";
        }
}

inline void write_association_csv(const std::filesystem::path& path,
                                  const std::vector<AssociationResult>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("cannot write " + path.string());
    out << "layer,kind,beta1,ci_low,ci_high,p,auc,pass,status\n";
    for (const auto& r : rows) {
        out << r.layer << ',' << score_kind_name(r.kind) << ',' << fmt_double(r.beta1) << ','
            << fmt_double(r.ci_low) << ',' << fmt_double(r.ci_high) << ','
            << fmt_double(r.p_value) << ',' << fmt_double(r.auc) << ','
            << (r.pass ? 1 : 0) << ',' << r.status << "\n";
    }
}

} // namespace layer
