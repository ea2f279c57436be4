#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include <json.hpp>

#include "layer/carn.hpp"
#include "layer/dataset.hpp"
#include "layer/saliency.hpp"

namespace layer {

/// Model-randomization sanity check: recompute the saliency report under a
/// freshly re-initialized copy of the trained model and compare magnitudes.
struct SanityResult {
    std::array<double, kLayerCount> trained_ss{};
    std::array<double, kLayerCount> randomized_ss{};
    double mean_trained = 0.0;
    double mean_randomized = 0.0;
    std::optional<double> collapse_ratio; // trained / randomized; empty when undefined
    std::uint64_t seed = 0;
    SaliencyReport trained_report;
    SaliencyReport randomized_report;
};

inline SanityResult sanity_randomization(const CarnModel& trained,
                                         const std::vector<ScanUnit>& units,
                                         std::uint64_t seed,
                                         const AnalysisOptions& options = {}) {
    SanityResult out;
    out.seed = seed;

    const AnalysisResult base = run_layer_analysis(trained, units, options);
    CarnModel randomized = trained;
    randomized.randomize(mix_seed(seed, 0x5a17u));
    const AnalysisResult rand = run_layer_analysis(randomized, units, options);

    out.trained_report = base.report;
    out.randomized_report = rand.report;
    double t_sum = 0.0, r_sum = 0.0;
    for (int idx = 0; idx < kLayerCount; ++idx) {
        out.trained_ss[static_cast<std::size_t>(idx)] = base.report.rows[idx].ss_mean;
        out.randomized_ss[static_cast<std::size_t>(idx)] = rand.report.rows[idx].ss_mean;
        t_sum += base.report.rows[idx].ss_mean;
        r_sum += rand.report.rows[idx].ss_mean;
    }
    out.mean_trained = t_sum / kLayerCount;
    out.mean_randomized = r_sum / kLayerCount;
    if (out.mean_randomized > 0.0)
        out.collapse_ratio = out.mean_trained / out.mean_randomized;
    return out;
}

inline nlohmann::json to_json(const SanityResult& r) {
    nlohmann::json layers = nlohmann::json::array();
    for (int idx = 0; idx < kLayerCount; ++idx)
        layers.push_back({{"layer", idx + 1},
                          {"name", layer_name(idx + 1)},
                          {"trained_ss", r.trained_ss[static_cast<std::size_t>(idx)]},
                          {"randomized_ss", r.randomized_ss[static_cast<std::size_t>(idx)]}});
    nlohmann::json j{{"seed", r.seed},
                     {"mean_trained_ss", r.mean_trained},
                     {"mean_randomized_ss", r.mean_randomized},
                     {"layers", layers}};
    if (r.collapse_ratio) j["collapse_ratio"] = *r.collapse_ratio;
    else j["collapse_ratio"] = nullptr;
    return j;
}

} // namespace layer
