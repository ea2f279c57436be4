#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "layer/errors.hpp"
#include "layer/volume.hpp"

namespace layer {

enum class Side : std::uint8_t { Left = 0, Right = 1 };
enum class Site : std::uint8_t { MF = 0, ES = 1 };

/// Scan-level clinical label taxonomy: trigger implies MP-positive,
/// tender implies MP-positive without trigger points.
enum class ScanLabel : std::uint8_t { Control = 0, TenderMP = 1, TriggerMP = 2 };

inline const char* side_name(Side s) { return s == Side::Left ? "left" : "right"; }
inline const char* site_name(Site s) { return s == Site::MF ? "MF" : "ES"; }
inline const char* label_name(ScanLabel l) {
    switch (l) {
        case ScanLabel::Control: return "control";
        case ScanLabel::TenderMP: return "tenderMP";
        default: return "triggerMP";
    }
}

inline bool mp_positive(ScanLabel l) { return l != ScanLabel::Control; }

/// The three evaluation scenarios. Visit/side MP treat tender and trigger
/// scans as positive; side-trigger treats tender scans as negative.
enum class Scenario : std::uint8_t { VisitMp = 0, SideMp = 1, SideTrigger = 2 };

inline const char* scenario_name(Scenario s) {
    switch (s) {
        case Scenario::VisitMp: return "visit-mp";
        case Scenario::SideMp: return "side-mp";
        default: return "side-trigger";
    }
}

inline std::optional<Scenario> parse_scenario(const std::string& s) {
    if (s == "visit-mp") return Scenario::VisitMp;
    if (s == "side-mp") return Scenario::SideMp;
    if (s == "side-trigger") return Scenario::SideTrigger;
    return std::nullopt;
}

inline bool scenario_positive(ScanLabel label, Scenario scenario) {
    if (scenario == Scenario::SideTrigger) return label == ScanLabel::TriggerMP;
    return mp_positive(label);
}

struct ScanRecord {
    int patient = 0;
    int visit = 1; // 1..2
    Side side = Side::Left;
    Site site = Site::MF;
    int rep = 1;
    Modality modality = Modality::BMode;
    ScanLabel label = ScanLabel::Control;
    std::string volume_file;
    std::string mask_file;

    auto key() const { return std::tie(patient, visit, side, site, rep, modality); }
    bool operator==(const ScanRecord&) const = default;
};

/// Phantom ground-truth parameters carried alongside generated cohorts.
struct PlantedInfo {
    int layer = 0;
    double delta = 0.0;
    double sigma = 0.0;
    double jitter = 0.0;
    bool operator==(const PlantedInfo&) const = default;
};

struct CohortManifest {
    std::uint64_t seed = 0;
    Dims dims;
    std::optional<PlantedInfo> planted;
    std::vector<ScanRecord> records;

    /// Scan tuples must be unique and visits in range.
    void validate() const {
        std::set<std::tuple<int, int, Side, Site, int, Modality>> seen;
        for (const auto& r : records) {
            if (r.visit < 1 || r.visit > 2)
                throw domain_error("manifest: visit index out of range");
            if (r.rep < 1) throw domain_error("manifest: repetition index must be >= 1");
            if (!seen.insert(r.key()).second)
                throw domain_error("manifest: duplicate scan tuple for patient " +
                                   std::to_string(r.patient));
        }
    }

    /// Additionally checks that every referenced file exists under base_dir.
    void validate_files(const std::filesystem::path& base_dir) const {
        validate();
        for (const auto& r : records) {
            if (!std::filesystem::exists(base_dir / r.volume_file))
                throw domain_error("manifest: missing volume file " + r.volume_file);
            if (!std::filesystem::exists(base_dir / r.mask_file))
                throw domain_error("manifest: missing mask file " + r.mask_file);
        }
    }

    bool operator==(const CohortManifest&) const = default;
};

// Side-level and visit-level labels follow the clinical aggregation rule:
// positive when at least one scan in the group is tender or trigger, and the
// group is a trigger side/visit when any scan carries a trigger label.

inline ScanLabel combine_labels(ScanLabel a, ScanLabel b) {
    return static_cast<ScanLabel>(std::max(static_cast<int>(a), static_cast<int>(b)));
}

inline ScanLabel side_label(const CohortManifest& m, int patient, int visit, Side side) {
    ScanLabel out = ScanLabel::Control;
    bool found = false;
    for (const auto& r : m.records)
        if (r.patient == patient && r.visit == visit && r.side == side) {
            out = combine_labels(out, r.label);
            found = true;
        }
    if (!found) throw domain_error("side_label: no scans for requested side");
    return out;
}

inline ScanLabel visit_label(const CohortManifest& m, int patient, int visit) {
    ScanLabel out = ScanLabel::Control;
    bool found = false;
    for (const auto& r : m.records)
        if (r.patient == patient && r.visit == visit) {
            out = combine_labels(out, r.label);
            found = true;
        }
    if (!found) throw domain_error("visit_label: no scans for requested visit");
    return out;
}

inline ScanLabel patient_label(const CohortManifest& m, int patient) {
    ScanLabel out = ScanLabel::Control;
    bool found = false;
    for (const auto& r : m.records)
        if (r.patient == patient) {
            out = combine_labels(out, r.label);
            found = true;
        }
    if (!found) throw domain_error("patient_label: unknown patient");
    return out;
}

inline void to_json(nlohmann::json& j, const ScanRecord& r) {
    j = nlohmann::json{{"patient", r.patient},
                       {"visit", r.visit},
                       {"side", side_name(r.side)},
                       {"site", site_name(r.site)},
                       {"rep", r.rep},
                       {"modality", modality_name(r.modality)},
                       {"label", label_name(r.label)},
                       {"volume_file", r.volume_file},
                       {"mask_file", r.mask_file}};
}

inline void from_json(const nlohmann::json& j, ScanRecord& r) {
    r.patient = j.at("patient").get<int>();
    r.visit = j.at("visit").get<int>();
    const auto side = j.at("side").get<std::string>();
    if (side == "left") r.side = Side::Left;
    else if (side == "right") r.side = Side::Right;
    else throw domain_error("manifest: bad side '" + side + "'");
    const auto site = j.at("site").get<std::string>();
    if (site == "MF") r.site = Site::MF;
    else if (site == "ES") r.site = Site::ES;
    else throw domain_error("manifest: bad site '" + site + "'");
    r.rep = j.at("rep").get<int>();
    const auto mod = j.at("modality").get<std::string>();
    if (mod == "bmode") r.modality = Modality::BMode;
    else if (mod == "swe") r.modality = Modality::Swe;
    else throw domain_error("manifest: bad modality '" + mod + "'");
    const auto lab = j.at("label").get<std::string>();
    if (lab == "control") r.label = ScanLabel::Control;
    else if (lab == "tenderMP") r.label = ScanLabel::TenderMP;
    else if (lab == "triggerMP") r.label = ScanLabel::TriggerMP;
    else throw domain_error("manifest: bad label '" + lab + "'");
    r.volume_file = j.at("volume_file").get<std::string>();
    r.mask_file = j.at("mask_file").get<std::string>();
}

inline void to_json(nlohmann::json& j, const CohortManifest& m) {
    j = nlohmann::json{{"seed", m.seed},
                       {"dims", {m.dims.nx, m.dims.ny, m.dims.nz}},
                       {"records", m.records}};
    if (m.planted) {
        j["planted"] = {{"layer", m.planted->layer},
                        {"delta", m.planted->delta},
                        {"sigma", m.planted->sigma},
                        {"jitter", m.planted->jitter}};
    }
}

inline void from_json(const nlohmann::json& j, CohortManifest& m) {
    m.seed = j.at("seed").get<std::uint64_t>();
    const auto d = j.at("dims");
    m.dims = Dims{d.at(0).get<int>(), d.at(1).get<int>(), d.at(2).get<int>()};
    if (j.contains("planted")) {
        PlantedInfo p;
        p.layer = j["planted"].at("layer").get<int>();
        p.delta = j["planted"].at("delta").get<double>();
        p.sigma = j["planted"].at("sigma").get<double>();
        p.jitter = j["planted"].at("jitter").get<double>();
        m.planted = p;
    } else {
        m.planted.reset();
    }
    m.records = j.at("records").get<std::vector<ScanRecord>>();
}

inline void write_manifest(const std::filesystem::path& path, const CohortManifest& m) {
    m.validate();
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("cannot write " + path.string());
    nlohmann::json j = m;
    out << j.dump(2) << "\n";
    if (!out) throw io_error("write failed for " + path.string());
}

inline CohortManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw format_error("manifest: " + std::string(e.what()), e.byte);
    }
    CohortManifest m;
    try {
        m = j.get<CohortManifest>();
    } catch (const nlohmann::json::exception& e) {
        throw domain_error("manifest: " + std::string(e.what()));
    }
    m.validate();
    return m;
}

} // namespace layer
