#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "layer/aggregate.hpp"
#include "layer/dataset.hpp"
#include "layer/errors.hpp"
#include "layer/manifest.hpp"
#include "layer/rng.hpp"
#include "layer/scorer.hpp"
#include "layer/stats.hpp"
#include "layer/util.hpp"

namespace layer {

/// Exponentially smoothed per-sample difficulty: L = beta*L_prev + (1-beta)*l.
class DifficultyTracker {
public:
    explicit DifficultyTracker(double beta = 0.9) : beta_(beta) {
        if (beta < 0.0 || beta > 1.0) throw config_error("EMA momentum must be in [0,1]");
    }

    void init(int sample_id, double initial_loss) { scores_[sample_id] = initial_loss; }

    void update(int sample_id, double instantaneous_loss) {
        if (!std::isfinite(instantaneous_loss))
            throw training_error("difficulty update with non-finite loss");
        auto it = scores_.find(sample_id);
        if (it == scores_.end())
            throw domain_error("unknown sample id " + std::to_string(sample_id));
        it->second = beta_ * it->second + (1.0 - beta_) * instantaneous_loss;
    }

    double score(int sample_id) const {
        auto it = scores_.find(sample_id);
        if (it == scores_.end())
            throw domain_error("unknown sample id " + std::to_string(sample_id));
        return it->second;
    }

    std::size_t size() const { return scores_.size(); }
    double beta() const { return beta_; }
    const std::map<int, double>& scores() const { return scores_; }

private:
    double beta_;
    std::map<int, double> scores_;
};

/// Exposure schedule: f_e = f_min + (1 - f_min) * e / (E - 1), with the
/// endpoints pinned exactly (f_0 = f_min, f_{E-1} = 1; E = 1 trains on the
/// full set immediately). Pool sizes floor to at least one sample.
struct CurriculumSchedule {
    int total_epochs = 30;
    std::size_t dataset_size = 0;
    double f_min = 0.2;

    double fraction(int e) const {
        if (e < 0 || e >= total_epochs) throw domain_error("epoch out of range");
        if (total_epochs == 1 || e == total_epochs - 1) return 1.0;
        return f_min + (1.0 - f_min) * static_cast<double>(e) /
                           static_cast<double>(total_epochs - 1);
    }

    std::size_t pool_size(int e) const {
        const double f = fraction(e);
        const auto n = static_cast<std::size_t>(
            std::floor(f * static_cast<double>(dataset_size)));
        return std::max<std::size_t>(1, std::min(n, dataset_size));
    }
};

/// The easiest N_e samples by difficulty, ties broken by ascending id.
inline std::vector<int> select_epoch_samples(const DifficultyTracker& tracker,
                                             const CurriculumSchedule& schedule, int e) {
    if (tracker.size() != schedule.dataset_size)
        throw shape_error("select_epoch_samples: tracker/schedule size mismatch");
    const std::size_t n_e = schedule.pool_size(e);
    std::vector<std::pair<double, int>> order;
    order.reserve(tracker.size());
    for (const auto& [id, L] : tracker.scores()) order.emplace_back(L, id);
    std::sort(order.begin(), order.end());
    std::vector<int> out;
    out.reserve(n_e);
    for (std::size_t i = 0; i < n_e; ++i) out.push_back(order[i].second);
    return out;
}

/// Learnable coarse weight grid, trilinearly upsampled to the input dims and
/// squashed through a sigmoid, so every voxel multiplier lies in (0,1).
class AirWeightGenerator {
public:
    AirWeightGenerator(Dims target, int modality_count, int coarse = 4)
        : target_(target), coarse_(coarse) {
        if (coarse < 1) throw config_error("AIR coarse grid must be >= 1");
        if (modality_count < 1) throw config_error("AIR needs at least one modality");
        params_.assign(static_cast<std::size_t>(modality_count) * cells(), 0.0);
        build_axis(target_.nx, ax_);
        build_axis(target_.ny, ay_);
        build_axis(target_.nz, az_);
    }

    std::size_t cells() const {
        return static_cast<std::size_t>(coarse_) * coarse_ * coarse_;
    }
    int modality_count() const {
        return static_cast<int>(params_.size() / cells());
    }

    std::span<double> params() { return params_; }
    std::span<const double> params() const { return params_; }

    /// Voxel multipliers for one modality.
    std::vector<double> weight_map(int modality) const {
        const double* p = params_.data() + static_cast<std::size_t>(modality) * cells();
        std::vector<double> w(target_.count());
        std::size_t idx = 0;
        for (int z = 0; z < target_.nz; ++z)
            for (int y = 0; y < target_.ny; ++y)
                for (int x = 0; x < target_.nx; ++x, ++idx)
                    w[idx] = sigmoid(upsample_at(p, x, y, z));
        return w;
    }

    /// Scatters voxel-multiplier gradients back to the coarse grid.
    /// dmap is d(objective)/d(multiplier); wmap the forward multipliers.
    void backward(int modality, std::span<const double> dmap, std::span<const double> wmap,
                  std::span<double> param_grads) const {
        if (param_grads.size() != params_.size())
            throw shape_error("AIR backward: bad gradient buffer");
        double* g = param_grads.data() + static_cast<std::size_t>(modality) * cells();
        std::size_t idx = 0;
        for (int z = 0; z < target_.nz; ++z)
            for (int y = 0; y < target_.ny; ++y)
                for (int x = 0; x < target_.nx; ++x, ++idx) {
                    const double du = dmap[idx] * wmap[idx] * (1.0 - wmap[idx]);
                    scatter_at(g, x, y, z, du);
                }
    }

private:
    struct AxisMap {
        std::vector<int> i0, i1;
        std::vector<double> frac; // weight of i1
    };

    void build_axis(int n, AxisMap& m) const {
        m.i0.resize(n);
        m.i1.resize(n);
        m.frac.resize(n);
        for (int i = 0; i < n; ++i) {
            const double u = (static_cast<double>(i) + 0.5) / static_cast<double>(n) *
                                 static_cast<double>(coarse_) -
                             0.5;
            if (u <= 0.0) {
                m.i0[i] = m.i1[i] = 0;
                m.frac[i] = 0.0;
            } else if (u >= static_cast<double>(coarse_ - 1)) {
                m.i0[i] = m.i1[i] = coarse_ - 1;
                m.frac[i] = 0.0;
            } else {
                const int lo = static_cast<int>(std::floor(u));
                m.i0[i] = lo;
                m.i1[i] = lo + 1;
                m.frac[i] = u - static_cast<double>(lo);
            }
        }
    }

    std::size_t cidx(int x, int y, int z) const {
        return static_cast<std::size_t>(x) +
               static_cast<std::size_t>(coarse_) *
                   (static_cast<std::size_t>(y) +
                    static_cast<std::size_t>(coarse_) * static_cast<std::size_t>(z));
    }

    double upsample_at(const double* p, int x, int y, int z) const {
        const double fx = ax_.frac[x], fy = ay_.frac[y], fz = az_.frac[z];
        double acc = 0.0;
        for (int cz = 0; cz < 2; ++cz) {
            const int iz = cz ? az_.i1[z] : az_.i0[z];
            const double wz = cz ? fz : 1.0 - fz;
            if (wz == 0.0) continue;
            for (int cy = 0; cy < 2; ++cy) {
                const int iy = cy ? ay_.i1[y] : ay_.i0[y];
                const double wy = cy ? fy : 1.0 - fy;
                if (wy == 0.0) continue;
                for (int cx = 0; cx < 2; ++cx) {
                    const int ix = cx ? ax_.i1[x] : ax_.i0[x];
                    const double wx = cx ? fx : 1.0 - fx;
                    if (wx == 0.0) continue;
                    acc += wz * wy * wx * p[cidx(ix, iy, iz)];
                }
            }
        }
        return acc;
    }

    void scatter_at(double* g, int x, int y, int z, double du) const {
        const double fx = ax_.frac[x], fy = ay_.frac[y], fz = az_.frac[z];
        for (int cz = 0; cz < 2; ++cz) {
            const int iz = cz ? az_.i1[z] : az_.i0[z];
            const double wz = cz ? fz : 1.0 - fz;
            if (wz == 0.0) continue;
            for (int cy = 0; cy < 2; ++cy) {
                const int iy = cy ? ay_.i1[y] : ay_.i0[y];
                const double wy = cy ? fy : 1.0 - fy;
                if (wy == 0.0) continue;
                for (int cx = 0; cx < 2; ++cx) {
                    const int ix = cx ? ax_.i1[x] : ax_.i0[x];
                    const double wx = cx ? fx : 1.0 - fx;
                    if (wx == 0.0) continue;
                    g[cidx(ix, iy, iz)] += du * wz * wy * wx;
                }
            }
        }
    }

    Dims target_;
    int coarse_;
    std::vector<double> params_;
    AxisMap ax_, ay_, az_;
};

/// Element-wise reweighting of a scan by the generator's multipliers.
inline MultiVolume air_forward(const AirWeightGenerator& gen, const MultiVolume& input) {
    if (static_cast<int>(input.modalities.size()) != gen.modality_count())
        throw shape_error("air_forward: modality count mismatch");
    MultiVolume out;
    for (std::size_t m = 0; m < input.modalities.size(); ++m) {
        const auto& grid = input.modalities[m];
        const auto wmap = gen.weight_map(static_cast<int>(m));
        if (wmap.size() != grid.voxels().size())
            throw shape_error("air_forward: dims mismatch");
        std::vector<float> vox(grid.voxels().size());
        for (std::size_t i = 0; i < vox.size(); ++i)
            vox[i] = static_cast<float>(wmap[i] * static_cast<double>(grid.voxels()[i]));
        out.modalities.emplace_back(grid.dims(), grid.modality(), std::move(vox));
    }
    return out;
}

/// The full trained model: optional AIR reweighting in front of the pooled
/// dense classifier. Scoring and input gradients run the composite chain in
/// double precision end to end.
class CarnModel : public Scorer {
public:
    struct Config {
        Dims dims;
        std::vector<Modality> modalities{Modality::BMode};
        bool air = true;
        bool standardize = true;
        int pool = 8;
        int hidden = 64;
        int coarse = 4;
    };

    CarnModel(Config cfg, std::uint64_t init_seed)
        : cfg_(cfg),
          scorer_(TrainableScorer::Config{cfg.dims, cfg.modalities, cfg.pool, cfg.hidden,
                                          cfg.standardize},
                  init_seed),
          air_(cfg.dims, static_cast<int>(cfg.modalities.size()), cfg.coarse),
          init_seed_(init_seed) {}

    const Config& config() const { return cfg_; }
    std::uint64_t init_seed() const { return init_seed_; }
    TrainableScorer& classifier() { return scorer_; }
    const TrainableScorer& classifier() const { return scorer_; }
    AirWeightGenerator& air() { return air_; }
    const AirWeightGenerator& air() const { return air_; }

    /// Fresh parameters for both components; deterministic per seed.
    void randomize(std::uint64_t seed) {
        scorer_.randomize(seed);
        for (auto& p : air_.params()) p = 0.0;
    }

    struct Caches {
        std::vector<std::vector<double>> raw;   // input voxels per modality
        std::vector<std::vector<double>> wmaps; // AIR multipliers (empty if off)
        TrainableScorer::Forward f;
    };

    Caches forward(const MultiVolume& v) const {
        Caches c;
        c.raw = scorer_.to_double(v);
        auto weighted = c.raw;
        if (cfg_.air) {
            for (std::size_t m = 0; m < weighted.size(); ++m) {
                c.wmaps.push_back(air_.weight_map(static_cast<int>(m)));
                const auto& w = c.wmaps.back();
                for (std::size_t i = 0; i < weighted[m].size(); ++i) weighted[m][i] *= w[i];
            }
        }
        c.f = scorer_.forward(std::move(weighted));
        return c;
    }

    /// Joint backward pass: parameter gradients for the classifier and the
    /// weight generator, plus (optionally) the gradient w.r.t. input voxels.
    void backward(const Caches& c, double dz, std::span<double> scorer_grads,
                  std::span<double> air_grads,
                  std::vector<std::vector<double>>* input_grads = nullptr) const {
        auto dvox = scorer_.backward(c.f, dz, scorer_grads);
        if (cfg_.air) {
            for (std::size_t m = 0; m < dvox.size(); ++m) {
                std::vector<double> dmap(dvox[m].size());
                for (std::size_t i = 0; i < dmap.size(); ++i)
                    dmap[i] = dvox[m][i] * c.raw[m][i];
                air_.backward(static_cast<int>(m), dmap, c.wmaps[m], air_grads);
                if (input_grads)
                    for (std::size_t i = 0; i < dvox[m].size(); ++i)
                        dvox[m][i] *= c.wmaps[m][i];
            }
        }
        if (input_grads) *input_grads = std::move(dvox);
    }

    double score(const MultiVolume& v) const override { return forward(v).f.logit; }

    bool has_input_gradient() const override { return true; }

    GradientField input_gradient(const MultiVolume& v) const override {
        const Caches c = forward(v);
        std::vector<double> sg(scorer_.param_count(), 0.0);
        std::vector<double> ag(air_.params().size(), 0.0);
        std::vector<std::vector<double>> dvox;
        backward(c, 1.0, sg, ag, &dvox);
        GradientField g;
        for (auto& dv : dvox) g.modalities.push_back(VoxelField{cfg_.dims, std::move(dv)});
        return g;
    }

private:
    Config cfg_;
    TrainableScorer scorer_;
    AirWeightGenerator air_;
    std::uint64_t init_seed_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoint: u32 header length | JSON header | little-endian float32 blob.

inline void save_checkpoint(const std::filesystem::path& path, const CarnModel& model) {
    nlohmann::json header;
    header["artifact"] = kArtifactName;
    header["version"] = kArtifactVersion;
    header["seed"] = model.init_seed();
    const auto& cfg = model.config();
    header["dims"] = {cfg.dims.nx, cfg.dims.ny, cfg.dims.nz};
    nlohmann::json mods = nlohmann::json::array();
    for (auto m : cfg.modalities) mods.push_back(modality_name(m));
    header["architecture"] = {{"modalities", mods}, {"pool", cfg.pool},
                              {"hidden", cfg.hidden}, {"coarse", cfg.coarse},
                              {"air", cfg.air},       {"standardize", cfg.standardize}};
    const std::size_t n_air = model.air().params().size();
    const std::size_t n_scorer = model.classifier().params().size();
    header["param_count"] = n_air + n_scorer;

    const std::string htext = header.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot write " + path.string());
    const std::uint32_t hlen = static_cast<std::uint32_t>(htext.size());
    char lenb[4];
    for (int i = 0; i < 4; ++i) lenb[i] = static_cast<char>((hlen >> (8 * i)) & 0xff);
    out.write(lenb, 4);
    out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    auto write_params = [&](std::span<const double> ps) {
        for (double p : ps) {
            const float f = static_cast<float>(p);
            std::uint32_t bits = 0;
            std::memcpy(&bits, &f, 4);
            char b[4];
            for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
            out.write(b, 4);
        }
    };
    write_params(model.air().params());
    write_params(model.classifier().params());
    if (!out) throw io_error("write failed for " + path.string());
}

inline CarnModel load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open " + path.string());
    std::vector<char> buf{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    if (buf.size() < 4) throw format_error("checkpoint: truncated header length", 0);
    std::uint32_t hlen = 0;
    for (int i = 0; i < 4; ++i)
        hlen |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[i])) << (8 * i);
    if (buf.size() < 4 + static_cast<std::size_t>(hlen))
        throw format_error("checkpoint: truncated JSON header", 4);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(buf.begin() + 4, buf.begin() + 4 + hlen);
    } catch (const nlohmann::json::parse_error& e) {
        throw format_error("checkpoint: bad JSON header", 4 + e.byte);
    }

    CarnModel::Config cfg;
    const auto d = header.at("dims");
    cfg.dims = Dims{d.at(0).get<int>(), d.at(1).get<int>(), d.at(2).get<int>()};
    const auto arch = header.at("architecture");
    cfg.pool = arch.at("pool").get<int>();
    cfg.hidden = arch.at("hidden").get<int>();
    cfg.coarse = arch.at("coarse").get<int>();
    cfg.air = arch.at("air").get<bool>();
    cfg.standardize = arch.at("standardize").get<bool>();
    cfg.modalities.clear();
    for (const auto& m : arch.at("modalities")) {
        const auto name = m.get<std::string>();
        if (name == "bmode") cfg.modalities.push_back(Modality::BMode);
        else if (name == "swe") cfg.modalities.push_back(Modality::Swe);
        else throw domain_error("checkpoint: bad modality " + name);
    }

    CarnModel model(cfg, header.at("seed").get<std::uint64_t>());
    const std::size_t n_air = model.air().params().size();
    const std::size_t n_scorer = model.classifier().params().size();
    const std::size_t expected = header.at("param_count").get<std::size_t>();
    if (expected != n_air + n_scorer)
        throw format_error("checkpoint: parameter count mismatch", 4 + hlen);
    const std::size_t blob_at = 4 + static_cast<std::size_t>(hlen);
    if (buf.size() != blob_at + 4 * expected)
        throw format_error("checkpoint: truncated parameter blob", buf.size());
    auto read_param = [&](std::size_t i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b)
            bits |= static_cast<std::uint32_t>(
                        static_cast<unsigned char>(buf[blob_at + 4 * i + b]))
                    << (8 * b);
        float f = 0.0f;
        std::memcpy(&f, &bits, 4);
        return static_cast<double>(f);
    };
    for (std::size_t i = 0; i < n_air; ++i) model.air().params()[i] = read_param(i);
    for (std::size_t i = 0; i < n_scorer; ++i)
        model.classifier().params()[i] = read_param(n_air + i);
    return model;
}

// ---------------------------------------------------------------------------
// Training loop.

struct TrainConfig {
    Scenario scenario = Scenario::SideMp;
    ModalitySet modality = ModalitySet::BMode;
    int epochs = 30;
    int batch_size = 32;
    bool curriculum = true;
    bool air = true;
    bool standardize = true;
    double lr = 1e-4;
    double ema_beta = 0.9;
    double f_min = 0.2;
    int folds = 5;
    int val_fold = -1; // defaults to folds - 1
    int pool = 8;
    int hidden = 64;
    int coarse = 4;
    int threads = 1;
    std::uint64_t seed = 0;
};

struct EpochLog {
    int epoch = 0;
    std::size_t pool_size = 0;
    double mean_loss = 0.0;
    double val_auc = std::numeric_limits<double>::quiet_NaN();
    std::uint64_t selected_hash = 0;
};

struct TrainResult {
    std::shared_ptr<CarnModel> model;
    std::vector<EpochLog> log;
    FoldAssignment folds;
    std::vector<int> train_ids; // unit ids used for training
    std::vector<int> val_ids;
};

inline double bce_with_logits(double z, int y) {
    return softplus(z) - static_cast<double>(y) * z;
}

/// Joint CARN optimization: a difficulty-initialization pass, per-epoch
/// easiest-first selection, AIR reweighting, and Adam updates flowing to both
/// the classifier and the weight generator. Deterministic per seed.
inline TrainResult train_carn(const std::vector<ScanUnit>& units,
                              const CohortManifest& manifest, const TrainConfig& cfg) {
    if (cfg.epochs < 1) throw config_error("train: epochs must be >= 1");
    if (cfg.batch_size < 1) throw config_error("train: batch size must be >= 1");
    if (units.empty()) throw config_error("train: no training units");

    TrainResult result;
    result.folds = make_folds(manifest, cfg.folds, cfg.seed);
    check_leakage(manifest, result.folds);
    const int val_fold = cfg.val_fold < 0 ? cfg.folds - 1 : cfg.val_fold;
    if (val_fold < 0 || val_fold >= cfg.folds)
        throw config_error("train: validation fold out of range");

    for (const auto& u : units)
        (result.folds.fold_of(u.patient) == val_fold ? result.val_ids : result.train_ids)
            .push_back(u.id);
    if (result.train_ids.empty()) throw config_error("train: empty training split");

    bool any_pos = false, any_neg = false;
    for (int id : result.train_ids)
        (units[static_cast<std::size_t>(id)].positive ? any_pos : any_neg) = true;
    if (!any_pos || !any_neg)
        throw config_error("train: a class is empty in the training split");

    CarnModel::Config mcfg;
    mcfg.dims = manifest.dims;
    mcfg.modalities = modalities_of(cfg.modality);
    mcfg.air = cfg.air;
    mcfg.standardize = cfg.standardize;
    mcfg.pool = cfg.pool;
    mcfg.hidden = cfg.hidden;
    mcfg.coarse = cfg.coarse;
    result.model = std::make_shared<CarnModel>(mcfg, mix_seed(cfg.seed, 0x1217u));
    CarnModel& model = *result.model;

    // One full no-update forward pass defines every initial difficulty.
    DifficultyTracker tracker(cfg.ema_beta);
    {
        std::vector<double> init_losses(result.train_ids.size(), 0.0);
        parallel_for(result.train_ids.size(), cfg.threads, [&](std::size_t i) {
            const auto& u = units[static_cast<std::size_t>(result.train_ids[i])];
            const double z = model.score(u.volume);
            init_losses[i] = bce_with_logits(z, u.positive ? 1 : 0);
        });
        for (std::size_t i = 0; i < result.train_ids.size(); ++i) {
            if (!std::isfinite(init_losses[i]))
                throw training_error("non-finite loss during difficulty initialization");
            tracker.init(result.train_ids[i], init_losses[i]);
        }
    }

    CurriculumSchedule schedule{cfg.epochs, result.train_ids.size(), cfg.f_min};
    AdamState scorer_state(model.classifier().params().size(), cfg.lr);
    AdamState air_state(model.air().params().size(), cfg.lr);
    std::vector<double> scorer_grads(model.classifier().params().size());
    std::vector<double> air_grads(model.air().params().size());

    Rng root(mix_seed(cfg.seed, 0x7e41u));
    for (int e = 0; e < cfg.epochs; ++e) {
        std::vector<int> selected = cfg.curriculum
                                        ? select_epoch_samples(tracker, schedule, e)
                                        : result.train_ids;
        const std::uint64_t selected_hash = fnv1a_hash(selected);
        Rng epoch_rng = root.child(static_cast<std::uint64_t>(e) + 1);
        epoch_rng.shuffle(selected);

        double loss_sum = 0.0;
        for (std::size_t start = 0; start < selected.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop =
                std::min(selected.size(), start + static_cast<std::size_t>(cfg.batch_size));
            const double inv = 1.0 / static_cast<double>(stop - start);
            std::fill(scorer_grads.begin(), scorer_grads.end(), 0.0);
            std::fill(air_grads.begin(), air_grads.end(), 0.0);
            for (std::size_t i = start; i < stop; ++i) {
                const auto& u = units[static_cast<std::size_t>(selected[i])];
                const int y = u.positive ? 1 : 0;
                const auto caches = model.forward(u.volume);
                const double loss = bce_with_logits(caches.f.logit, y);
                if (!std::isfinite(loss))
                    throw training_error("non-finite loss at epoch " + std::to_string(e) +
                                         ", unit " + u.key);
                loss_sum += loss;
                const double dz = (sigmoid(caches.f.logit) - static_cast<double>(y)) * inv;
                model.backward(caches, dz, scorer_grads, air_grads);
                tracker.update(selected[i], loss);
            }
            adam_step(model.classifier().params(), scorer_grads, scorer_state);
            if (cfg.air) adam_step(model.air().params(), air_grads, air_state);
        }

        EpochLog log;
        log.epoch = e;
        log.pool_size = selected.size();
        log.mean_loss = loss_sum / static_cast<double>(selected.size());
        log.selected_hash = selected_hash;
        if (!result.val_ids.empty()) {
            std::vector<double> probs(result.val_ids.size());
            std::vector<int> ys(result.val_ids.size());
            parallel_for(result.val_ids.size(), cfg.threads, [&](std::size_t i) {
                const auto& u = units[static_cast<std::size_t>(result.val_ids[i])];
                probs[i] = sigmoid(model.score(u.volume));
                ys[i] = u.positive ? 1 : 0;
            });
            try {
                log.val_auc = roc_auc(probs, ys).auc;
            } catch (const domain_error&) {
                // single-class validation split: AUC undefined, stays NaN
            }
        }
        result.log.push_back(log);
    }
    return result;
}

/// Scan-level validation AUC is logged per epoch; aggregated metrics come
/// from the aggregate module after training.
inline void write_training_log(const std::filesystem::path& path,
                               const std::vector<EpochLog>& log) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("cannot write " + path.string());
    out << "epoch,n_e,mean_train_loss,val_auc,selected_hash\n";
    for (const auto& row : log) {
        out << row.epoch << ',' << row.pool_size << ',' << fmt_double(row.mean_loss) << ','
            << fmt_double(row.val_auc) << ',' << row.selected_hash << "\n";
    }
    if (!out) throw io_error("write failed for " + path.string());
}

} // namespace layer
