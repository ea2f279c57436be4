#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "layer/errors.hpp"

namespace layer {

inline constexpr int kLayerCount = 6;
inline constexpr std::uint8_t kBackground = 0;

/// Layer codes 1..6, ordered by depth.
inline const char* layer_name(int code) {
    switch (code) {
        case 1: return "dermis";
        case 2: return "SFL";
        case 3: return "SFM";
        case 4: return "deep_fat";
        case 5: return "DFM";
        case 6: return "muscle";
        default: throw domain_error("unknown layer code " + std::to_string(code));
    }
}

inline bool valid_layer_code(int code) { return code >= 1 && code <= kLayerCount; }

enum class Modality : std::uint8_t { BMode = 0, Swe = 1 };

inline const char* modality_name(Modality m) {
    return m == Modality::BMode ? "bmode" : "swe";
}

struct Dims {
    int nx = 0, ny = 0, nz = 0;

    std::size_t count() const {
        return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) *
               static_cast<std::size_t>(nz);
    }
    bool operator==(const Dims&) const = default;
};

/// One 3-D voxel field of a single modality. Storage is x-fastest.
/// Immutable after construction; operations return new grids.
class VolumeGrid {
public:
    VolumeGrid(Dims dims, Modality modality, std::vector<float> voxels)
        : dims_(dims), modality_(modality), voxels_(std::move(voxels)) {
        if (dims_.nx <= 0 || dims_.ny <= 0 || dims_.nz <= 0)
            throw shape_error("volume dims must be positive");
        if (voxels_.size() != dims_.count())
            throw shape_error("voxel count " + std::to_string(voxels_.size()) +
                              " does not match dims");
        for (float v : voxels_) {
            if (!std::isfinite(v)) throw domain_error("volume contains non-finite voxel");
            if (modality_ == Modality::Swe && v < 0.0f)
                throw domain_error("SWE voxels must be non-negative");
        }
    }

    const Dims& dims() const { return dims_; }
    Modality modality() const { return modality_; }
    const std::vector<float>& voxels() const { return voxels_; }

    std::size_t index(int x, int y, int z) const {
        return static_cast<std::size_t>(x) +
               static_cast<std::size_t>(dims_.nx) *
                   (static_cast<std::size_t>(y) +
                    static_cast<std::size_t>(dims_.ny) * static_cast<std::size_t>(z));
    }
    float at(int x, int y, int z) const { return voxels_[index(x, y, z)]; }

    bool operator==(const VolumeGrid&) const = default;

private:
    Dims dims_;
    Modality modality_;
    std::vector<float> voxels_;
};

/// Six disjoint layer labels plus background, one code per voxel.
class LayerMaskSet {
public:
    LayerMaskSet(Dims dims, std::vector<std::uint8_t> labels)
        : dims_(dims), labels_(std::move(labels)) {
        if (dims_.nx <= 0 || dims_.ny <= 0 || dims_.nz <= 0)
            throw shape_error("mask dims must be positive");
        if (labels_.size() != dims_.count())
            throw shape_error("label count does not match dims");
        counts_.fill(0);
        for (std::uint8_t c : labels_) {
            if (c > kLayerCount)
                throw domain_error("mask label " + std::to_string(int(c)) + " out of range");
            ++counts_[c];
        }
    }

    const Dims& dims() const { return dims_; }
    const std::vector<std::uint8_t>& labels() const { return labels_; }

    /// Exact voxel tally for a layer code 1..6.
    std::size_t layer_volume(int code) const {
        if (!valid_layer_code(code))
            throw domain_error("layer_volume: unknown layer code " + std::to_string(code));
        return counts_[static_cast<std::size_t>(code)];
    }

    std::size_t background_volume() const { return counts_[0]; }

    bool operator==(const LayerMaskSet&) const = default;

private:
    Dims dims_;
    std::vector<std::uint8_t> labels_;
    std::array<std::size_t, kLayerCount + 1> counts_{};
};

/// A scan's co-registered volumes, one per modality (1 or 2 entries).
struct MultiVolume {
    std::vector<VolumeGrid> modalities;

    const Dims& dims() const {
        if (modalities.empty()) throw shape_error("empty MultiVolume");
        return modalities.front().dims();
    }

    const VolumeGrid* find(Modality m) const {
        for (const auto& g : modalities)
            if (g.modality() == m) return &g;
        return nullptr;
    }
};

namespace detail {

inline std::array<bool, kLayerCount + 1> layer_selector(std::span<const int> layers) {
    std::array<bool, kLayerCount + 1> sel{};
    for (int code : layers) {
        if (!valid_layer_code(code))
            throw domain_error("occlude: unknown layer code " + std::to_string(code));
        sel[static_cast<std::size_t>(code)] = true;
    }
    return sel;
}

} // namespace detail

/// I ⊙ (1 − M): voxels of the selected layers are zeroed, everything else
/// passes through unchanged. The fill value is zero by contract.
inline VolumeGrid occlude(const VolumeGrid& volume, const LayerMaskSet& masks,
                          std::span<const int> layers) {
    if (volume.dims() != masks.dims())
        throw shape_error("occlude: volume/mask dims mismatch");
    const auto sel = detail::layer_selector(layers);
    std::vector<float> out = volume.voxels();
    const auto& lab = masks.labels();
    for (std::size_t i = 0; i < out.size(); ++i)
        if (sel[lab[i]]) out[i] = 0.0f;
    return VolumeGrid(volume.dims(), volume.modality(), std::move(out));
}

inline VolumeGrid occlude(const VolumeGrid& volume, const LayerMaskSet& masks,
                          std::initializer_list<int> layers) {
    return occlude(volume, masks, std::span<const int>(layers.begin(), layers.size()));
}

/// Occlusion applied to every modality of a scan.
inline MultiVolume occlude(const MultiVolume& volume, const LayerMaskSet& masks,
                           std::span<const int> layers) {
    MultiVolume out;
    out.modalities.reserve(volume.modalities.size());
    for (const auto& g : volume.modalities) out.modalities.push_back(occlude(g, masks, layers));
    return out;
}

inline MultiVolume occlude(const MultiVolume& volume, const LayerMaskSet& masks,
                           std::initializer_list<int> layers) {
    return occlude(volume, masks, std::span<const int>(layers.begin(), layers.size()));
}

/// Free-function form of LayerMaskSet::layer_volume.
inline std::size_t layer_volume(const LayerMaskSet& masks, int code) {
    return masks.layer_volume(code);
}

} // namespace layer
