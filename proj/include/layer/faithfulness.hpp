#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "layer/dataset.hpp"
#include "layer/errors.hpp"
#include "layer/rng.hpp"
#include "layer/saliency.hpp"
#include "layer/scorer.hpp"
#include "layer/stats.hpp"
#include "layer/util.hpp"

namespace layer {

enum class AttributionMethod : std::uint8_t { Layer = 0, IG = 1, SmoothGrad = 2, Random = 3 };

inline const char* method_name(AttributionMethod m) {
    switch (m) {
        case AttributionMethod::Layer: return "LAYER";
        case AttributionMethod::IG: return "IG";
        case AttributionMethod::SmoothGrad: return "SmoothGrad";
        default: return "Random";
    }
}

inline std::optional<AttributionMethod> parse_method(const std::string& s) {
    if (s == "LAYER" || s == "layer") return AttributionMethod::Layer;
    if (s == "IG" || s == "ig") return AttributionMethod::IG;
    if (s == "SmoothGrad" || s == "smoothgrad") return AttributionMethod::SmoothGrad;
    if (s == "Random" || s == "random") return AttributionMethod::Random;
    return std::nullopt;
}

/// Permutation of the six layer codes, descending attribution.
struct RankedLayers {
    std::array<int, kLayerCount> order{};
    AttributionMethod method = AttributionMethod::Layer;

    void validate() const {
        std::array<bool, kLayerCount + 1> seen{};
        for (int code : order) {
            if (!valid_layer_code(code) || seen[static_cast<std::size_t>(code)])
                throw domain_error("RankedLayers: not a permutation of layer codes");
            seen[static_cast<std::size_t>(code)] = true;
        }
    }
};

/// Descending-score ranking with ties broken by ascending layer code.
inline RankedLayers rank_from_scores(const std::array<double, kLayerCount>& scores,
                                     AttributionMethod method) {
    RankedLayers r;
    r.method = method;
    std::iota(r.order.begin(), r.order.end(), 1);
    std::stable_sort(r.order.begin(), r.order.end(), [&](int a, int b) {
        return scores[static_cast<std::size_t>(a - 1)] > scores[static_cast<std::size_t>(b - 1)];
    });
    return r;
}

// ---------------------------------------------------------------------------
// Insertion / deletion curves and the four metrics.

struct Curves {
    std::vector<double> insertion; // i_0 .. i_K
    std::vector<double> deletion;  // d_0 .. d_K
};

/// Insertion starts from the layer-empty volume (all six layers zeroed,
/// background intact) and restores layers in rank order; deletion starts from
/// the full volume and zeroes them in the same order. Curves record the raw
/// model logit after each step.
inline Curves insertion_deletion_curves(const Scorer& scorer, const MultiVolume& volume,
                                        const LayerMaskSet& masks, const RankedLayers& ranking) {
    ranking.validate();
    Curves c;
    c.insertion.reserve(kLayerCount + 1);
    c.deletion.reserve(kLayerCount + 1);
    std::vector<int> absent(ranking.order.begin(), ranking.order.end());
    // insertion step k keeps the top-k layers: occlude the other 6-k
    for (int k = 0; k <= kLayerCount; ++k) {
        std::vector<int> to_occlude(ranking.order.begin() + k, ranking.order.end());
        c.insertion.push_back(scorer.score(occlude(volume, masks, to_occlude)));
    }
    for (int k = 0; k <= kLayerCount; ++k) {
        std::vector<int> to_occlude(ranking.order.begin(), ranking.order.begin() + k);
        c.deletion.push_back(scorer.score(occlude(volume, masks, to_occlude)));
    }
    return c;
}

/// Trapezoid mean (1/K) * sum over steps of (x_{k-1} + x_k)/2.
inline double curve_auc(std::span<const double> curve) {
    if (curve.size() < 2) throw domain_error("curve_auc: needs K >= 1 steps");
    double s = 0.0;
    for (std::size_t k = 1; k < curve.size(); ++k) s += 0.5 * (curve[k - 1] + curve[k]);
    return s / static_cast<double>(curve.size() - 1);
}

inline double auc_insertion(const Curves& c) { return curve_auc(c.insertion); }
inline double auc_deletion(const Curves& c) { return curve_auc(c.deletion); }
inline double auc_delta(const Curves& c) { return auc_insertion(c) - auc_deletion(c); }

/// max_k i_k / (min_k d_k + eps). Logit curves can cross zero, making the
/// ratio unstable; callers should check irof_unstable.
inline double irof(const Curves& c, double eps = 1e-6) {
    if (eps <= 0.0) throw domain_error("irof: eps must be positive");
    const double num = *std::max_element(c.insertion.begin(), c.insertion.end());
    const double den = *std::min_element(c.deletion.begin(), c.deletion.end()) + eps;
    return num / den;
}

inline bool irof_unstable(const Curves& c, double eps = 1e-6) {
    return *std::min_element(c.deletion.begin(), c.deletion.end()) + eps <= 0.0;
}

// ---------------------------------------------------------------------------
// Layer rankings from the baseline attribution methods.

/// Occlusion ranking: descending per-scan SS.
inline RankedLayers rank_layers_occlusion(const Scorer& scorer, const MultiVolume& volume,
                                          const LayerMaskSet& masks) {
    std::array<double, kLayerCount> scores{};
    const double full = scorer.score(volume);
    for (int code = 1; code <= kLayerCount; ++code) {
        const int codes[1] = {code};
        scores[static_cast<std::size_t>(code - 1)] =
            std::fabs(full - scorer.score(occlude(volume, masks, std::span<const int>(codes))));
    }
    return rank_from_scores(scores, AttributionMethod::Layer);
}

/// Integrated gradients from the zero baseline, midpoint Riemann rule.
/// Per-layer score: sum of |attribution| over the layer's voxels across all
/// modalities.
inline RankedLayers rank_layers_ig(const Scorer& scorer, const MultiVolume& volume,
                                   const LayerMaskSet& masks, int steps = 32) {
    if (!scorer.has_input_gradient())
        throw capability_error("IG requires input gradients");
    if (steps < 1) throw domain_error("IG: steps must be >= 1");

    const std::size_t n_mod = volume.modalities.size();
    std::vector<std::vector<double>> attribution(n_mod);
    for (std::size_t m = 0; m < n_mod; ++m)
        attribution[m].assign(volume.modalities[m].voxels().size(), 0.0);

    for (int s = 1; s <= steps; ++s) {
        const double alpha = (static_cast<double>(s) - 0.5) / static_cast<double>(steps);
        MultiVolume scaled;
        for (const auto& grid : volume.modalities) {
            std::vector<float> vox(grid.voxels().size());
            for (std::size_t i = 0; i < vox.size(); ++i)
                vox[i] = static_cast<float>(alpha * static_cast<double>(grid.voxels()[i]));
            scaled.modalities.emplace_back(grid.dims(), grid.modality(), std::move(vox));
        }
        const GradientField g = scorer.input_gradient(scaled);
        for (std::size_t m = 0; m < n_mod; ++m)
            for (std::size_t i = 0; i < attribution[m].size(); ++i)
                attribution[m][i] += g.modalities[m].values[i];
    }
    for (std::size_t m = 0; m < n_mod; ++m)
        for (std::size_t i = 0; i < attribution[m].size(); ++i)
            attribution[m][i] *= static_cast<double>(volume.modalities[m].voxels()[i]) /
                                 static_cast<double>(steps);

    std::array<double, kLayerCount> scores{};
    const auto& lab = masks.labels();
    for (std::size_t m = 0; m < n_mod; ++m)
        for (std::size_t i = 0; i < attribution[m].size(); ++i)
            if (lab[i] != 0)
                scores[static_cast<std::size_t>(lab[i] - 1)] += std::fabs(attribution[m][i]);
    return rank_from_scores(scores, AttributionMethod::IG);
}

/// Sum over the path of per-voxel attributions; completeness diagnostics.
inline double ig_attribution_sum(const Scorer& scorer, const MultiVolume& volume,
                                 int steps = 32) {
    if (!scorer.has_input_gradient())
        throw capability_error("IG requires input gradients");
    double total = 0.0;
    for (int s = 1; s <= steps; ++s) {
        const double alpha = (static_cast<double>(s) - 0.5) / static_cast<double>(steps);
        MultiVolume scaled;
        for (const auto& grid : volume.modalities) {
            std::vector<float> vox(grid.voxels().size());
            for (std::size_t i = 0; i < vox.size(); ++i)
                vox[i] = static_cast<float>(alpha * static_cast<double>(grid.voxels()[i]));
            scaled.modalities.emplace_back(grid.dims(), grid.modality(), std::move(vox));
        }
        const GradientField g = scorer.input_gradient(scaled);
        for (std::size_t m = 0; m < volume.modalities.size(); ++m) {
            const auto& vox = volume.modalities[m].voxels();
            for (std::size_t i = 0; i < vox.size(); ++i)
                total += g.modalities[m].values[i] * static_cast<double>(vox[i]);
        }
    }
    return total / static_cast<double>(steps);
}

/// SmoothGrad: mean |input gradient| over n noisy copies (additive Gaussian,
/// sigma = sigma_rel * per-modality value range), summed per layer.
inline RankedLayers rank_layers_smoothgrad(const Scorer& scorer, const MultiVolume& volume,
                                           const LayerMaskSet& masks, Rng rng, int n = 25,
                                           double sigma_rel = 0.1) {
    if (!scorer.has_input_gradient())
        throw capability_error("SmoothGrad requires input gradients");
    if (n < 1) throw domain_error("SmoothGrad: n must be >= 1");
    if (sigma_rel < 0.0) throw domain_error("SmoothGrad: sigma_rel must be >= 0");

    const std::size_t n_mod = volume.modalities.size();
    std::vector<double> sigma(n_mod, 0.0);
    for (std::size_t m = 0; m < n_mod; ++m) {
        const auto& vox = volume.modalities[m].voxels();
        const auto [lo, hi] = std::minmax_element(vox.begin(), vox.end());
        sigma[m] = sigma_rel * static_cast<double>(*hi - *lo);
    }

    std::vector<std::vector<double>> mean_abs(n_mod);
    for (std::size_t m = 0; m < n_mod; ++m)
        mean_abs[m].assign(volume.modalities[m].voxels().size(), 0.0);

    for (int rep = 0; rep < n; ++rep) {
        MultiVolume noisy;
        for (std::size_t m = 0; m < n_mod; ++m) {
            const auto& grid = volume.modalities[m];
            std::vector<float> vox(grid.voxels().size());
            for (std::size_t i = 0; i < vox.size(); ++i) {
                double v = static_cast<double>(grid.voxels()[i]);
                if (sigma[m] > 0.0) v += sigma[m] * rng.normal();
                if (grid.modality() == Modality::Swe && v < 0.0) v = 0.0;
                vox[i] = static_cast<float>(v);
            }
            noisy.modalities.emplace_back(grid.dims(), grid.modality(), std::move(vox));
        }
        const GradientField g = scorer.input_gradient(noisy);
        for (std::size_t m = 0; m < n_mod; ++m)
            for (std::size_t i = 0; i < mean_abs[m].size(); ++i)
                mean_abs[m][i] += std::fabs(g.modalities[m].values[i]);
    }

    std::array<double, kLayerCount> scores{};
    const auto& lab = masks.labels();
    for (std::size_t m = 0; m < n_mod; ++m)
        for (std::size_t i = 0; i < mean_abs[m].size(); ++i)
            if (lab[i] != 0)
                scores[static_cast<std::size_t>(lab[i] - 1)] +=
                    mean_abs[m][i] / static_cast<double>(n);
    return rank_from_scores(scores, AttributionMethod::SmoothGrad);
}

inline RankedLayers rank_layers_random(Rng rng) {
    RankedLayers r;
    r.method = AttributionMethod::Random;
    std::iota(r.order.begin(), r.order.end(), 1);
    std::vector<int> v(r.order.begin(), r.order.end());
    rng.shuffle(v);
    std::copy(v.begin(), v.end(), r.order.begin());
    return r;
}

// ---------------------------------------------------------------------------
// Method comparison across a cohort.

struct ScanMetrics {
    std::string scan_key;
    AttributionMethod method = AttributionMethod::Layer;
    double auc_ins = 0.0;
    double auc_del = 0.0;
    double auc_delta = 0.0;
    double irof = 0.0;
    bool irof_flag = false;
};

struct MethodPairTest {
    AttributionMethod method_a = AttributionMethod::Layer;
    AttributionMethod method_b = AttributionMethod::Random;
    std::string metric;
    PairedTResult test;
};

struct ComparisonTable {
    std::vector<ScanMetrics> per_scan; // grouped by method, scan order preserved
    std::map<std::string, std::array<double, 4>> method_means; // ins, del, delta, irof
    std::vector<MethodPairTest> tests;
    std::uint64_t seed = 0;
    double eps = 1e-6;
};

struct CompareOptions {
    int ig_steps = 32;
    int smoothgrad_n = 25;
    double smoothgrad_sigma_rel = 0.1;
    double eps = 1e-6;
    int threads = 1;
};

/// Per-scan faithfulness metrics per method, plus paired t-tests on the
/// per-scan differences for every method pair and metric. Metrics are
/// computed on the target-class logit (the raw logit for positive scans,
/// its negation for controls) so a faithful ranking rises on both classes;
/// stored curves remain raw.
inline ComparisonTable compare_methods(const Scorer& scorer,
                                       const std::vector<ScanUnit>& units,
                                       const std::vector<AttributionMethod>& methods,
                                       std::uint64_t seed, const CompareOptions& options = {}) {
    if (units.size() < 2) throw domain_error("compare_methods: needs at least 2 scans");
    if (methods.size() < 2) throw domain_error("compare_methods: needs at least 2 methods");

    ComparisonTable table;
    table.seed = seed;
    table.eps = options.eps;

    const std::size_t n = units.size();
    std::vector<std::vector<ScanMetrics>> rows(methods.size(),
                                               std::vector<ScanMetrics>(n));
    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
        parallel_for(n, options.threads, [&, mi](std::size_t i) {
            const auto& u = units[i];
            RankedLayers ranking;
            switch (methods[mi]) {
                case AttributionMethod::Layer:
                    ranking = rank_layers_occlusion(scorer, u.volume, *u.mask);
                    break;
                case AttributionMethod::IG:
                    ranking = rank_layers_ig(scorer, u.volume, *u.mask, options.ig_steps);
                    break;
                case AttributionMethod::SmoothGrad:
                    ranking = rank_layers_smoothgrad(
                        scorer, u.volume, *u.mask,
                        Rng(mix_seed(seed, 0x56, static_cast<std::uint64_t>(u.id))),
                        options.smoothgrad_n, options.smoothgrad_sigma_rel);
                    break;
                case AttributionMethod::Random:
                    ranking = rank_layers_random(
                        Rng(mix_seed(seed, 0xAD, static_cast<std::uint64_t>(u.id))));
                    break;
            }
            Curves c = insertion_deletion_curves(scorer, u.volume, *u.mask, ranking);
            ScanMetrics& row = rows[mi][i];
            row.scan_key = u.key;
            row.method = methods[mi];
            row.irof_flag = irof_unstable(c, options.eps);
            if (!u.positive) {
                for (auto& v : c.insertion) v = -v;
                for (auto& v : c.deletion) v = -v;
            }
            row.auc_ins = auc_insertion(c);
            row.auc_del = auc_deletion(c);
            row.auc_delta = row.auc_ins - row.auc_del;
            row.irof = irof(c, options.eps);
        });
    }

    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
        std::array<double, 4> means{};
        for (const auto& row : rows[mi]) {
            means[0] += row.auc_ins;
            means[1] += row.auc_del;
            means[2] += row.auc_delta;
            means[3] += row.irof;
        }
        for (auto& m : means) m /= static_cast<double>(n);
        table.method_means[method_name(methods[mi])] = means;
    }

    const std::array<const char*, 4> metric_names{"auc_ins", "auc_del", "auc_delta", "irof"};
    auto metric_of = [](const ScanMetrics& r, std::size_t k) {
        switch (k) {
            case 0: return r.auc_ins;
            case 1: return r.auc_del;
            case 2: return r.auc_delta;
            default: return r.irof;
        }
    };
    for (std::size_t a = 0; a < methods.size(); ++a)
        for (std::size_t b = a + 1; b < methods.size(); ++b)
            for (std::size_t k = 0; k < 4; ++k) {
                std::vector<double> xa(n), xb(n);
                for (std::size_t i = 0; i < n; ++i) {
                    xa[i] = metric_of(rows[a][i], k);
                    xb[i] = metric_of(rows[b][i], k);
                }
                MethodPairTest t;
                t.method_a = methods[a];
                t.method_b = methods[b];
                t.metric = metric_names[k];
                t.test = paired_t_test(xa, xb);
                table.tests.push_back(std::move(t));
            }

    for (auto& mrows : rows)
        for (auto& row : mrows) table.per_scan.push_back(std::move(row));
    return table;
}

inline void write_comparison_csv(const std::filesystem::path& path,
                                 const ComparisonTable& table) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("cannot write " + path.string());
    out << "scan,method,auc_ins,auc_del,auc_delta,irof,irof_flag\n";
    for (const auto& r : table.per_scan)
        out << r.scan_key << ',' << method_name(r.method) << ',' << fmt_double(r.auc_ins)
            << ',' << fmt_double(r.auc_del) << ',' << fmt_double(r.auc_delta) << ','
            << fmt_double(r.irof) << ',' << (r.irof_flag ? 1 : 0) << "\n";
}

inline nlohmann::json to_json(const ComparisonTable& table) {
    nlohmann::json means = nlohmann::json::object();
    for (const auto& [name, m] : table.method_means)
        means[name] = {{"auc_ins", m[0]}, {"auc_del", m[1]}, {"auc_delta", m[2]},
                       {"irof", m[3]}};
    nlohmann::json tests = nlohmann::json::array();
    for (const auto& t : table.tests)
        tests.push_back({{"method_a", method_name(t.method_a)},
                         {"method_b", method_name(t.method_b)},
                         {"metric", t.metric},
                         {"mean_diff", t.test.mean_diff},
                         {"t", t.test.t},
                         {"df", t.test.df},
                         {"p", t.test.p},
                         {"degenerate", t.test.degenerate}});
    return nlohmann::json{{"seed", table.seed},
                          {"eps", table.eps},
                          {"metrics_on", "target_logit"},
                          {"method_means", means},
                          {"paired_t_tests", tests}};
}

} // namespace layer
