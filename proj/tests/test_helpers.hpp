#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "layer/phantom.hpp"
#include "layer/rng.hpp"
#include "layer/volume.hpp"

namespace testutil {

/// Scratch directory under the system temp root, wiped on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() /
                ("layer_test_" + tag + "_" + std::to_string(counter_++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }
    const std::filesystem::path& path() const { return path_; }

private:
    static inline int counter_ = 0;
    std::filesystem::path path_;
};

inline layer::VolumeGrid random_volume(layer::Dims dims, layer::Rng& rng,
                                       layer::Modality modality = layer::Modality::BMode,
                                       double lo = 0.0, double hi = 1.0) {
    std::vector<float> vox(dims.count());
    for (auto& v : vox) v = static_cast<float>(rng.uniform(lo, hi));
    return layer::VolumeGrid(dims, modality, std::move(vox));
}

/// Random label field over codes 0..6.
inline layer::LayerMaskSet random_mask(layer::Dims dims, layer::Rng& rng) {
    std::vector<std::uint8_t> lab(dims.count());
    for (auto& l : lab) l = static_cast<std::uint8_t>(rng.below(7));
    return layer::LayerMaskSet(dims, std::move(lab));
}

/// Depth-slab mask: six z-slabs of the given thicknesses, no background.
inline layer::LayerMaskSet slab_mask(layer::Dims dims,
                                     const std::array<int, 6>& slabs) {
    std::vector<std::uint8_t> lab(dims.count());
    std::size_t idx = 0;
    int zb = 0;
    std::array<int, 6> bounds{};
    for (int i = 0; i < 6; ++i) {
        zb += slabs[static_cast<std::size_t>(i)];
        bounds[static_cast<std::size_t>(i)] = zb;
    }
    for (int z = 0; z < dims.nz; ++z) {
        std::uint8_t code = 1;
        while (code < 6 && z >= bounds[static_cast<std::size_t>(code - 1)]) ++code;
        for (int y = 0; y < dims.ny; ++y)
            for (int x = 0; x < dims.nx; ++x) lab[idx++] = code;
    }
    return layer::LayerMaskSet(dims, std::move(lab));
}

/// Small phantom config that generates in well under a second.
inline layer::PhantomConfig small_phantom(int patients, std::uint64_t seed,
                                          double delta = 2.0) {
    layer::PhantomConfig cfg;
    cfg.dims = {12, 12, 16};
    cfg.slabs = {1, 2, 2, 3, 3, 5};
    cfg.patients = patients;
    cfg.delta = delta;
    cfg.seed = seed;
    return cfg;
}

} // namespace testutil
