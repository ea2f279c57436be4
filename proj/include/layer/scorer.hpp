#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "layer/errors.hpp"
#include "layer/rng.hpp"
#include "layer/util.hpp"
#include "layer/volume.hpp"

namespace layer {

/// Real-valued gradient grid, one per modality. Deliberately not a
/// VolumeGrid: gradients may be negative regardless of modality.
struct VoxelField {
    Dims dims;
    std::vector<double> values;
};

struct GradientField {
    std::vector<VoxelField> modalities;
};

/// Classifier contract: a pure function from a (possibly multimodal) volume
/// to a raw logit. Implementations must be deterministic and stateless per
/// call, so inference is safe under arbitrary parallelism.
class Scorer {
public:
    virtual ~Scorer() = default;

    virtual double score(const MultiVolume& v) const = 0;

    double probability(const MultiVolume& v) const { return sigmoid(score(v)); }

    virtual bool has_input_gradient() const { return false; }

    /// Gradient of the logit w.r.t. every input voxel.
    virtual GradientField input_gradient(const MultiVolume&) const {
        throw capability_error("scorer does not provide input gradients");
    }
};

/// Closed-form oracle: logit = bias + sum_i w_i * mean(V over layer i), with
/// the mean over an empty layer defined as 0. Multimodal inputs pool the
/// layer's voxels across all modalities.
class AnalyticScorer : public Scorer {
public:
    AnalyticScorer(std::array<double, kLayerCount> weights, double bias,
                   std::shared_ptr<const LayerMaskSet> masks)
        : weights_(weights), bias_(bias), masks_(std::move(masks)) {
        if (!masks_) throw domain_error("AnalyticScorer needs a bound mask set");
    }

    double score(const MultiVolume& v) const override {
        check_dims(v);
        std::array<double, kLayerCount + 1> sums{};
        const auto& lab = masks_->labels();
        for (const auto& grid : v.modalities) {
            const auto& vox = grid.voxels();
            for (std::size_t i = 0; i < vox.size(); ++i)
                sums[lab[i]] += static_cast<double>(vox[i]);
        }
        const double nmod = static_cast<double>(v.modalities.size());
        double out = bias_;
        for (int code = 1; code <= kLayerCount; ++code) {
            const auto count = masks_->layer_volume(code);
            if (count == 0) continue;
            out += weights_[static_cast<std::size_t>(code - 1)] * sums[code] /
                   (nmod * static_cast<double>(count));
        }
        return out;
    }

    bool has_input_gradient() const override { return true; }

    GradientField input_gradient(const MultiVolume& v) const override {
        check_dims(v);
        const double nmod = static_cast<double>(v.modalities.size());
        const auto& lab = masks_->labels();
        GradientField g;
        for (const auto& grid : v.modalities) {
            VoxelField f{grid.dims(), std::vector<double>(grid.voxels().size(), 0.0)};
            for (std::size_t i = 0; i < f.values.size(); ++i) {
                const int code = lab[i];
                if (code == 0) continue;
                const auto count = masks_->layer_volume(code);
                f.values[i] = weights_[static_cast<std::size_t>(code - 1)] /
                              (nmod * static_cast<double>(count));
            }
            g.modalities.push_back(std::move(f));
        }
        return g;
    }

    const std::array<double, kLayerCount>& weights() const { return weights_; }
    double bias() const { return bias_; }

private:
    void check_dims(const MultiVolume& v) const {
        if (v.modalities.empty()) throw shape_error("AnalyticScorer: empty input");
        for (const auto& grid : v.modalities)
            if (grid.dims() != masks_->dims())
                throw shape_error("AnalyticScorer: volume/mask dims mismatch");
    }

    std::array<double, kLayerCount> weights_{};
    double bias_ = 0.0;
    std::shared_ptr<const LayerMaskSet> masks_;
};

/// Adam with bias correction. Moments share the parameter shape.
struct AdamState {
    std::vector<double> m, v;
    long long t = 0;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    explicit AdamState(std::size_t n, double learning_rate = 1e-4)
        : m(n, 0.0), v(n, 0.0), lr(learning_rate) {}
};

inline void adam_step(std::span<double> params, std::span<const double> grads,
                      AdamState& state) {
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw shape_error("adam_step: parameter/gradient/state shapes disagree");
    for (double g : grads)
        if (!std::isfinite(g)) throw training_error("adam_step: non-finite gradient");
    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        params[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
}

/// Desk-scale trainable classifier: per-modality average-pool to a fixed
/// 8x8x8 grid (optionally standardizing each modality to zero mean / unit
/// variance per scan first), channel concatenation, then a one-hidden-layer
/// dense net with a smooth rectifier. All math runs in double so analytic
/// gradients survive central-difference checks.
class TrainableScorer : public Scorer {
public:
    struct Config {
        Dims dims;
        std::vector<Modality> modalities{Modality::BMode};
        int pool = 8;
        int hidden = 64;
        bool standardize = true;
    };

    struct Forward {
        std::vector<std::vector<double>> voxels; // per modality, post any reweighting
        std::vector<double> mu, sigma;           // per modality; sigma already guarded
        std::vector<bool> sigma_clamped;
        std::vector<double> x;  // pooled features, length feature_count()
        std::vector<double> z1; // hidden pre-activation
        std::vector<double> h;  // hidden activation
        double logit = 0.0;
    };

    explicit TrainableScorer(Config cfg, std::uint64_t init_seed = 0)
        : cfg_(std::move(cfg)) {
        if (cfg_.dims.nx <= 0 || cfg_.dims.ny <= 0 || cfg_.dims.nz <= 0)
            throw config_error("TrainableScorer: dims must be positive");
        if (cfg_.modalities.empty())
            throw config_error("TrainableScorer: needs at least one modality");
        if (cfg_.pool < 1 || cfg_.hidden < 1)
            throw config_error("TrainableScorer: pool/hidden must be >= 1");
        build_pooling();
        params_.assign(param_count(), 0.0);
        randomize(init_seed);
    }

    const Config& config() const { return cfg_; }

    std::size_t cells_per_modality() const {
        return static_cast<std::size_t>(cfg_.pool) * cfg_.pool * cfg_.pool;
    }
    std::size_t feature_count() const {
        return cells_per_modality() * cfg_.modalities.size();
    }
    std::size_t param_count() const {
        const std::size_t h = static_cast<std::size_t>(cfg_.hidden);
        return h * feature_count() + h + h + 1;
    }

    std::span<double> params() { return params_; }
    std::span<const double> params() const { return params_; }

    /// Fresh Glorot-uniform dense weights, zero biases; deterministic per seed.
    void randomize(std::uint64_t seed) {
        Rng rng(mix_seed(seed, 0x7453u));
        const std::size_t D = feature_count();
        const std::size_t H = static_cast<std::size_t>(cfg_.hidden);
        const double lim1 = std::sqrt(6.0 / (static_cast<double>(D) + H));
        const double lim2 = std::sqrt(6.0 / (static_cast<double>(H) + 1.0));
        double* w1 = params_.data();
        for (std::size_t i = 0; i < H * D; ++i) w1[i] = rng.uniform(-lim1, lim1);
        double* b1 = w1 + H * D;
        for (std::size_t i = 0; i < H; ++i) b1[i] = 0.0;
        double* w2 = b1 + H;
        for (std::size_t i = 0; i < H; ++i) w2[i] = rng.uniform(-lim2, lim2);
        w2[H] = 0.0; // output bias
    }

    double score(const MultiVolume& v) const override {
        return forward(to_double(v)).logit;
    }

    bool has_input_gradient() const override { return true; }

    GradientField input_gradient(const MultiVolume& v) const override {
        const Forward f = forward(to_double(v));
        std::vector<double> scratch(param_count(), 0.0);
        auto dvox = backward(f, 1.0, scratch);
        GradientField g;
        for (auto& dv : dvox) g.modalities.push_back(VoxelField{cfg_.dims, std::move(dv)});
        return g;
    }

    /// Validates modality order/dims and converts voxels to double.
    std::vector<std::vector<double>> to_double(const MultiVolume& v) const {
        if (v.modalities.size() != cfg_.modalities.size())
            throw shape_error("TrainableScorer: modality count mismatch");
        std::vector<std::vector<double>> out;
        out.reserve(v.modalities.size());
        for (std::size_t m = 0; m < cfg_.modalities.size(); ++m) {
            const VolumeGrid* grid = v.find(cfg_.modalities[m]);
            if (!grid) throw shape_error("TrainableScorer: missing modality input");
            if (grid->dims() != cfg_.dims)
                throw shape_error("TrainableScorer: input dims mismatch");
            out.emplace_back(grid->voxels().begin(), grid->voxels().end());
        }
        return out;
    }

    Forward forward(std::vector<std::vector<double>> voxels) const {
        const std::size_t n = cfg_.dims.count();
        for (const auto& m : voxels)
            if (m.size() != n) throw shape_error("TrainableScorer: voxel count mismatch");

        Forward f;
        f.voxels = std::move(voxels);
        const std::size_t cells = cells_per_modality();
        f.x.assign(feature_count(), 0.0);
        for (std::size_t m = 0; m < f.voxels.size(); ++m) {
            const auto& vox = f.voxels[m];
            double mu = 0.0, ss = 0.0;
            for (double v : vox) mu += v;
            mu /= static_cast<double>(n);
            for (double v : vox) ss += (v - mu) * (v - mu);
            double sigma = std::sqrt(ss / static_cast<double>(n));
            bool clamped = false;
            if (!cfg_.standardize) {
                mu = 0.0;
                sigma = 1.0;
            } else if (sigma < 1e-12) {
                sigma = 1.0;
                clamped = true;
            }
            f.mu.push_back(mu);
            f.sigma.push_back(sigma);
            f.sigma_clamped.push_back(clamped);

            double* xm = f.x.data() + m * cells;
            for (std::size_t i = 0; i < n; ++i)
                xm[cell_of_[i]] += (vox[i] - mu) / sigma;
            for (std::size_t c = 0; c < cells; ++c)
                if (cell_size_[c] > 0) xm[c] /= static_cast<double>(cell_size_[c]);
        }

        const std::size_t D = feature_count();
        const std::size_t H = static_cast<std::size_t>(cfg_.hidden);
        const double* w1 = params_.data();
        const double* b1 = w1 + H * D;
        const double* w2 = b1 + H;
        const double b2 = w2[H];
        f.z1.resize(H);
        f.h.resize(H);
        double logit = b2;
        for (std::size_t j = 0; j < H; ++j) {
            double z = b1[j];
            const double* row = w1 + j * D;
            for (std::size_t k = 0; k < D; ++k) z += row[k] * f.x[k];
            f.z1[j] = z;
            f.h[j] = softplus(z);
            logit += w2[j] * f.h[j];
        }
        f.logit = logit;
        return f;
    }

    /// Accumulates d(logit*dz)/dparams into param_grads and returns the
    /// gradient w.r.t. the (post-reweighting) input voxels, chained through
    /// pooling and the per-scan standardization.
    std::vector<std::vector<double>> backward(const Forward& f, double dz,
                                              std::span<double> param_grads) const {
        if (param_grads.size() != param_count())
            throw shape_error("TrainableScorer: bad gradient buffer");
        const std::size_t D = feature_count();
        const std::size_t H = static_cast<std::size_t>(cfg_.hidden);
        const double* w1 = params_.data();
        const double* w2 = params_.data() + H * D + H;
        double* gw1 = param_grads.data();
        double* gb1 = gw1 + H * D;
        double* gw2 = gb1 + H;

        std::vector<double> dx(D, 0.0);
        gw2[H] += dz; // output bias
        for (std::size_t j = 0; j < H; ++j) {
            gw2[j] += dz * f.h[j];
            const double dz1 = dz * w2[j] * sigmoid(f.z1[j]);
            gb1[j] += dz1;
            double* grow = gw1 + j * D;
            const double* row = w1 + j * D;
            for (std::size_t k = 0; k < D; ++k) {
                grow[k] += dz1 * f.x[k];
                dx[k] += dz1 * row[k];
            }
        }

        const std::size_t n = cfg_.dims.count();
        const std::size_t cells = cells_per_modality();
        std::vector<std::vector<double>> dvox;
        dvox.reserve(f.voxels.size());
        for (std::size_t m = 0; m < f.voxels.size(); ++m) {
            const double* dxm = dx.data() + m * cells;
            const auto& vox = f.voxels[m];
            std::vector<double> g(n, 0.0);
            const double mu = f.mu[m], sigma = f.sigma[m];
            // ghat_v = dxm[cell]/|cell| is the gradient w.r.t. the
            // standardized voxel; chain through mu/sigma unless clamped.
            double ghat_mean = 0.0, ghat_xhat_mean = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double ghat = dxm[cell_of_[i]] / static_cast<double>(cell_size_[cell_of_[i]]);
                g[i] = ghat;
                ghat_mean += ghat;
                ghat_xhat_mean += ghat * (vox[i] - mu) / sigma;
            }
            ghat_mean /= static_cast<double>(n);
            ghat_xhat_mean /= static_cast<double>(n);
            if (!cfg_.standardize) {
                dvox.push_back(std::move(g));
                continue;
            }
            const bool clamped = f.sigma_clamped[m];
            for (std::size_t i = 0; i < n; ++i) {
                const double xhat = (vox[i] - mu) / sigma;
                double gi = g[i] - ghat_mean;
                if (!clamped) gi -= xhat * ghat_xhat_mean;
                g[i] = gi / sigma;
            }
            dvox.push_back(std::move(g));
        }
        return dvox;
    }

private:
    void build_pooling() {
        const std::size_t n = cfg_.dims.count();
        cell_of_.resize(n);
        cell_size_.assign(cells_per_modality(), 0);
        const int p = cfg_.pool;
        std::size_t idx = 0;
        for (int z = 0; z < cfg_.dims.nz; ++z) {
            const int cz = static_cast<int>((static_cast<long long>(z) * p) / cfg_.dims.nz);
            for (int y = 0; y < cfg_.dims.ny; ++y) {
                const int cy = static_cast<int>((static_cast<long long>(y) * p) / cfg_.dims.ny);
                for (int x = 0; x < cfg_.dims.nx; ++x, ++idx) {
                    const int cx = static_cast<int>((static_cast<long long>(x) * p) / cfg_.dims.nx);
                    const std::size_t c = static_cast<std::size_t>(cx) +
                                          static_cast<std::size_t>(p) *
                                              (static_cast<std::size_t>(cy) +
                                               static_cast<std::size_t>(p) *
                                                   static_cast<std::size_t>(cz));
                    cell_of_[idx] = c;
                    ++cell_size_[c];
                }
            }
        }
    }

    Config cfg_;
    std::vector<double> params_;
    std::vector<std::size_t> cell_of_;
    std::vector<std::size_t> cell_size_;
};

} // namespace layer
