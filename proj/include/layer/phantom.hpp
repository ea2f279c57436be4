#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "layer/errors.hpp"
#include "layer/io.hpp"
#include "layer/manifest.hpp"
#include "layer/rng.hpp"
#include "layer/volume.hpp"

namespace layer {

/// Synthetic layered cohort parameters. Layers are depth-ordered slabs
/// (dermis at the top, muscle deepest) whose thicknesses must sum to nz.
struct PhantomConfig {
    Dims dims{64, 64, 32};
    std::array<int, kLayerCount> slabs{2, 4, 4, 6, 6, 10};
    int patients = 8;
    int visits = 2;
    int sides = 2;
    int sites = 2;
    int bmode_reps = 3;
    int swe_reps = 2;
    int planted_layer = 5; // DFM
    double delta = 2.0;    // mean shift in multiples of sigma
    double sigma = 0.1;
    double boundary_jitter = 0.2; // fraction of adjacent slab thickness
    std::uint64_t seed = 0;

    void validate() const {
        if (dims.nx <= 0 || dims.ny <= 0 || dims.nz <= 0)
            throw config_error("phantom: dims must be positive");
        int total = 0;
        for (int t : slabs) {
            if (t < 1) throw config_error("phantom: every slab needs thickness >= 1");
            total += t;
        }
        if (total != dims.nz)
            throw config_error("phantom: slab thicknesses sum to " + std::to_string(total) +
                               ", expected nz = " + std::to_string(dims.nz));
        if (!valid_layer_code(planted_layer))
            throw config_error("phantom: planted layer code out of range");
        if (delta < 0.0) throw config_error("phantom: delta must be >= 0");
        if (sigma <= 0.0) throw config_error("phantom: sigma must be > 0");
        if (patients < 1 || visits < 1 || sides < 1 || sides > 2 || sites < 1 || sites > 2)
            throw config_error("phantom: invalid cohort shape");
        if (bmode_reps < 1 || swe_reps < 1)
            throw config_error("phantom: repetition counts must be >= 1");
        if (boundary_jitter < 0.0 || boundary_jitter >= 0.5)
            throw config_error("phantom: boundary jitter must be in [0, 0.5)");
    }
};

/// Default slab split for an arbitrary depth, proportional to the 32-slice
/// reference split {2,4,4,6,6,10}.
inline std::array<int, kLayerCount> default_slabs(int nz) {
    if (nz < kLayerCount) throw config_error("phantom: nz too small for six slabs");
    const std::array<int, kLayerCount> ref{2, 4, 4, 6, 6, 10};
    std::array<int, kLayerCount> out{};
    int assigned = 0;
    for (int i = 0; i < kLayerCount; ++i) {
        out[i] = std::max(1, (nz * ref[i]) / 32);
        assigned += out[i];
    }
    // distribute the remainder into the thickest slabs, or trim from them
    int idx = kLayerCount - 1;
    while (assigned < nz) { ++out[idx], ++assigned; idx = (idx + 5) % kLayerCount; }
    idx = kLayerCount - 1;
    while (assigned > nz) {
        if (out[idx] > 1) { --out[idx]; --assigned; }
        idx = (idx + 5) % kLayerCount;
    }
    return out;
}

/// μ = ρc² with ρ = 1000 kg/m³.
inline double shear_speed_to_modulus(double c) {
    if (c < 0.0) throw domain_error("shear speed must be non-negative");
    return 1000.0 * c * c;
}

namespace detail {

// Base tissue appearance per layer code 1..6. B-mode is arbitrary intensity,
// SWE is shear speed in m/s.
inline double bmode_base(int code) {
    static constexpr std::array<double, kLayerCount> v{0.80, 0.50, 0.70, 0.40, 0.75, 0.55};
    return v[static_cast<std::size_t>(code - 1)];
}

inline double swe_base(int code) {
    static constexpr std::array<double, kLayerCount> v{2.5, 2.0, 3.0, 1.8, 3.5, 3.0};
    return v[static_cast<std::size_t>(code - 1)];
}

/// Depth-ordered slab mask with jittered interior boundaries. Boundaries stay
/// strictly ordered, every slab keeps thickness >= 1.
inline LayerMaskSet make_slab_mask(const PhantomConfig& cfg, Rng& rng) {
    std::array<int, kLayerCount + 1> bounds{}; // cumulative z, bounds[6] == nz
    bounds[0] = 0;
    for (int i = 0; i < kLayerCount; ++i) bounds[i + 1] = bounds[i] + cfg.slabs[i];
    for (int i = 1; i < kLayerCount; ++i) {
        const int room = std::min(cfg.slabs[i - 1], cfg.slabs[i]);
        const double amp = cfg.boundary_jitter * room;
        int offset = static_cast<int>(std::lround(rng.uniform(-1.0, 1.0) * amp));
        const int lo = bounds[i - 1] + 1; // keep slab i-1 non-empty
        const int hi = bounds[i + 1] - 1; // keep slab i non-empty (refined below)
        int b = bounds[i] + offset;
        if (b < lo) b = lo;
        if (b > hi) b = hi;
        bounds[i] = b;
    }
    // forward fix-up in case two jittered boundaries collided
    for (int i = 1; i <= kLayerCount; ++i)
        if (bounds[i] <= bounds[i - 1]) bounds[i] = bounds[i - 1] + 1;
    if (bounds[kLayerCount] > cfg.dims.nz)
        throw config_error("phantom: jitter produced infeasible boundaries");
    bounds[kLayerCount] = cfg.dims.nz;

    std::vector<std::uint8_t> labels(cfg.dims.count());
    std::size_t idx = 0;
    for (int z = 0; z < cfg.dims.nz; ++z) {
        std::uint8_t code = 1;
        while (code < kLayerCount && z >= bounds[code]) ++code;
        for (int y = 0; y < cfg.dims.ny; ++y)
            for (int x = 0; x < cfg.dims.nx; ++x) labels[idx++] = code;
    }
    return LayerMaskSet(cfg.dims, std::move(labels));
}

inline VolumeGrid make_phantom_volume(const PhantomConfig& cfg, const LayerMaskSet& mask,
                                      Modality modality, bool mp_side, Rng& rng) {
    std::vector<float> voxels(cfg.dims.count());
    const auto& lab = mask.labels();
    const double shift = mp_side ? cfg.delta * cfg.sigma : 0.0;
    for (std::size_t i = 0; i < voxels.size(); ++i) {
        const int code = lab[i];
        double base = modality == Modality::BMode ? bmode_base(code) : swe_base(code);
        if (code == cfg.planted_layer) base += shift;
        double v = base + cfg.sigma * rng.normal();
        if (modality == Modality::Swe && v < 0.0) v = 0.0;
        voxels[i] = static_cast<float>(v);
    }
    return VolumeGrid(cfg.dims, modality, std::move(voxels));
}

inline std::string scan_stem(int patient, int visit, Side side, Site site, int rep,
                             Modality modality) {
    return "p" + std::to_string(patient) + "_v" + std::to_string(visit) + "_" +
           side_name(side) + "_" + site_name(site) + "_r" + std::to_string(rep) + "_" +
           modality_name(modality);
}

inline std::string mask_stem(int patient, Side side, Site site) {
    return "p" + std::to_string(patient) + "_" + side_name(side) + "_" + site_name(site);
}

} // namespace detail

/// Generates the cohort and writes volume/mask files plus manifest.json under
/// out_dir. Deterministic in cfg.seed: per-patient substreams make the output
/// independent of generation order.
///
/// MP status is drawn per (patient, side) and held fixed across visits; on MP
/// sides the planted layer's mean is shifted by delta*sigma in both
/// modalities. Anatomy (jittered slab boundaries) is drawn per
/// (patient, side, site) and shared by all co-registered scans of that site.
inline CohortManifest generate_cohort(const PhantomConfig& cfg,
                                      const std::filesystem::path& out_dir) {
    cfg.validate();
    namespace fs = std::filesystem;
    fs::create_directories(out_dir / "vol");
    fs::create_directories(out_dir / "mask");

    CohortManifest manifest;
    manifest.seed = cfg.seed;
    manifest.dims = cfg.dims;
    manifest.planted =
        PlantedInfo{cfg.planted_layer, cfg.delta, cfg.sigma, cfg.boundary_jitter};

    Rng root(cfg.seed);
    for (int p = 0; p < cfg.patients; ++p) {
        Rng patient_rng = root.child(static_cast<std::uint64_t>(p) + 1);
        for (int s = 0; s < cfg.sides; ++s) {
            const Side side = static_cast<Side>(s);
            Rng status_rng = patient_rng.child(mix_seed(0xA0, s));
            const bool mp = status_rng.bernoulli(0.5);
            const ScanLabel label = !mp ? ScanLabel::Control
                                  : status_rng.bernoulli(0.5) ? ScanLabel::TriggerMP
                                                              : ScanLabel::TenderMP;
            for (int t = 0; t < cfg.sites; ++t) {
                const Site site = static_cast<Site>(t);
                Rng anat_rng = patient_rng.child(mix_seed(0xB0, s, t));
                const LayerMaskSet mask = detail::make_slab_mask(cfg, anat_rng);
                const std::string mask_file =
                    "mask/" + detail::mask_stem(p, side, site) + ".lmsk";
                write_mask(out_dir / mask_file, mask);

                for (int v = 1; v <= cfg.visits; ++v) {
                    for (Modality modality : {Modality::BMode, Modality::Swe}) {
                        const int reps =
                            modality == Modality::BMode ? cfg.bmode_reps : cfg.swe_reps;
                        for (int r = 1; r <= reps; ++r) {
                            Rng noise_rng = patient_rng.child(mix_seed(
                                0xC0, s, t, v, r, static_cast<int>(modality)));
                            const VolumeGrid vol = detail::make_phantom_volume(
                                cfg, mask, modality, mp, noise_rng);
                            const std::string vol_file =
                                "vol/" + detail::scan_stem(p, v, side, site, r, modality) +
                                ".lvol";
                            write_volume(out_dir / vol_file, vol);
                            ScanRecord rec;
                            rec.patient = p;
                            rec.visit = v;
                            rec.side = side;
                            rec.site = site;
                            rec.rep = r;
                            rec.modality = modality;
                            rec.label = label;
                            rec.volume_file = vol_file;
                            rec.mask_file = mask_file;
                            manifest.records.push_back(rec);
                        }
                    }
                }
            }
        }
    }
    write_manifest(out_dir / "manifest.json", manifest);
    return manifest;
}

} // namespace layer
