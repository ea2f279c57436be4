#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "layer/errors.hpp"
#include "layer/io.hpp"
#include "layer/manifest.hpp"
#include "layer/volume.hpp"

namespace layer {

enum class ModalitySet : std::uint8_t { BMode = 0, Swe = 1, Both = 2 };

inline const char* modality_set_name(ModalitySet m) {
    switch (m) {
        case ModalitySet::BMode: return "bmode";
        case ModalitySet::Swe: return "swe";
        default: return "both";
    }
}

inline std::optional<ModalitySet> parse_modality_set(const std::string& s) {
    if (s == "bmode") return ModalitySet::BMode;
    if (s == "swe") return ModalitySet::Swe;
    if (s == "both") return ModalitySet::Both;
    return std::nullopt;
}

inline std::vector<Modality> modalities_of(ModalitySet set) {
    switch (set) {
        case ModalitySet::BMode: return {Modality::BMode};
        case ModalitySet::Swe: return {Modality::Swe};
        default: return {Modality::BMode, Modality::Swe};
    }
}

/// One evaluation unit: a single scan, or a co-registered B-mode/SWE pair
/// when the modality set is "both".
struct ScanUnit {
    int id = 0;
    int patient = 0;
    int visit = 1;
    Side side = Side::Left;
    Site site = Site::MF;
    int rep = 1;
    ScanLabel label = ScanLabel::Control;
    bool positive = false; // under the loading scenario
    std::string key;       // stable identifier for outputs
    MultiVolume volume;
    std::shared_ptr<const LayerMaskSet> mask;
};

/// Loads every eligible scan unit for a scenario/modality set, sorted by
/// (patient, visit, side, site, rep). For "both", each B-mode repetition is
/// paired with the co-registered SWE repetition of the same index, clamped to
/// the last available SWE repetition when B-mode has more.
inline std::vector<ScanUnit> load_units(const std::filesystem::path& data_dir,
                                        const CohortManifest& manifest,
                                        Scenario scenario, ModalitySet set) {
    manifest.validate();

    std::map<std::string, std::shared_ptr<const LayerMaskSet>> mask_cache;
    auto get_mask = [&](const std::string& file) {
        auto it = mask_cache.find(file);
        if (it != mask_cache.end()) return it->second;
        auto m = std::make_shared<const LayerMaskSet>(read_mask(data_dir / file));
        mask_cache.emplace(file, m);
        return m;
    };

    using GroupKey = std::tuple<int, int, Side, Site>;
    std::map<GroupKey, std::vector<const ScanRecord*>> bmode, swe;
    for (const auto& r : manifest.records) {
        auto& bucket = r.modality == Modality::BMode ? bmode : swe;
        bucket[{r.patient, r.visit, r.side, r.site}].push_back(&r);
    }
    for (auto* groups : {&bmode, &swe})
        for (auto& [k, v] : *groups)
            std::sort(v.begin(), v.end(),
                      [](const ScanRecord* a, const ScanRecord* b) { return a->rep < b->rep; });

    std::vector<ScanUnit> units;
    auto emit = [&](const ScanRecord& primary, const ScanRecord* partner) {
        ScanUnit u;
        u.patient = primary.patient;
        u.visit = primary.visit;
        u.side = primary.side;
        u.site = primary.site;
        u.rep = primary.rep;
        u.label = primary.label;
        u.positive = scenario_positive(primary.label, scenario);
        u.key = "p" + std::to_string(primary.patient) + "_v" + std::to_string(primary.visit) +
                "_" + side_name(primary.side) + "_" + site_name(primary.site) + "_r" +
                std::to_string(primary.rep);
        u.volume.modalities.push_back(read_volume(data_dir / primary.volume_file));
        if (partner)
            u.volume.modalities.push_back(read_volume(data_dir / partner->volume_file));
        u.mask = get_mask(primary.mask_file);
        for (const auto& g : u.volume.modalities)
            if (g.dims() != u.mask->dims())
                throw shape_error("dataset: volume/mask dims mismatch for " + u.key);
        units.push_back(std::move(u));
    };

    if (set == ModalitySet::BMode || set == ModalitySet::Swe) {
        const auto& groups = set == ModalitySet::BMode ? bmode : swe;
        for (const auto& [k, recs] : groups)
            for (const auto* r : recs) emit(*r, nullptr);
    } else {
        for (const auto& [k, brecs] : bmode) {
            auto it = swe.find(k);
            if (it == swe.end() || it->second.empty()) continue;
            const auto& srecs = it->second;
            for (std::size_t i = 0; i < brecs.size(); ++i) {
                const auto* partner = srecs[std::min(i, srecs.size() - 1)];
                emit(*brecs[i], partner);
            }
        }
    }

    if (units.empty()) throw domain_error("dataset: no eligible scans for scenario");
    for (std::size_t i = 0; i < units.size(); ++i) units[i].id = static_cast<int>(i);
    return units;
}

/// Per-(patient, visit, side) grouping, preserving unit order.
struct SideGroup {
    int patient = 0;
    int visit = 1;
    Side side = Side::Left;
    bool positive = false;
    std::vector<int> unit_ids;
};

inline std::vector<SideGroup> group_by_side(const std::vector<ScanUnit>& units) {
    std::map<std::tuple<int, int, Side>, SideGroup> groups;
    for (const auto& u : units) {
        auto& g = groups[{u.patient, u.visit, u.side}];
        g.patient = u.patient;
        g.visit = u.visit;
        g.side = u.side;
        g.positive = g.positive || u.positive;
        g.unit_ids.push_back(u.id);
    }
    std::vector<SideGroup> out;
    out.reserve(groups.size());
    for (auto& [k, g] : groups) out.push_back(std::move(g));
    return out;
}

} // namespace layer
