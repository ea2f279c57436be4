#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <memory>

#include "layer/dataset.hpp"
#include "layer/phantom.hpp"
#include "layer/saliency.hpp"
#include "layer/scorer.hpp"

#include "test_helpers.hpp"

using namespace layer;

namespace {

const Dims kDims{6, 6, 8};
const std::array<int, 6> kSlabs{1, 1, 1, 2, 1, 2};

std::shared_ptr<const LayerMaskSet> make_masks() {
    return std::make_shared<const LayerMaskSet>(testutil::slab_mask(kDims, kSlabs));
}

MultiVolume uniform_volume(float value) {
    std::vector<float> vox(kDims.count(), value);
    MultiVolume v;
    v.modalities.emplace_back(kDims, Modality::BMode, std::move(vox));
    return v;
}

/// Minimum of two layer means; a deliberately non-additive scorer.
class MinScorer : public Scorer {
public:
    MinScorer(int a, int b, std::shared_ptr<const LayerMaskSet> masks)
        : a_(a), b_(b), masks_(std::move(masks)) {}

    double score(const MultiVolume& v) const override {
        return std::min(layer_mean(v, a_), layer_mean(v, b_));
    }

private:
    double layer_mean(const MultiVolume& v, int code) const {
        const auto& lab = masks_->labels();
        double sum = 0.0;
        std::size_t count = 0;
        for (const auto& grid : v.modalities)
            for (std::size_t i = 0; i < lab.size(); ++i)
                if (lab[i] == code) {
                    sum += grid.voxels()[i];
                    ++count;
                }
        return count ? sum / static_cast<double>(count) : 0.0;
    }

    int a_, b_;
    std::shared_ptr<const LayerMaskSet> masks_;
};

std::vector<ScanUnit> phantom_units(const std::filesystem::path& dir, int patients,
                                    std::uint64_t seed, double delta = 2.0) {
    auto cfg = testutil::small_phantom(patients, seed, delta);
    const auto manifest = generate_cohort(cfg, dir);
    return load_units(dir, manifest, Scenario::SideMp, ModalitySet::BMode);
}

} // namespace

TEST_CASE("saliency_score closed-form examples") {
    auto masks = make_masks();
    SECTION("zero-weight layer has zero saliency") {
        AnalyticScorer s({0, 1, 1, 1, 1, 1}, 0.3, masks);
        const auto v = uniform_volume(1.0f);
        const auto r = saliency_score(s, v, *masks, 1);
        REQUIRE(r.delta == 0.0);
        REQUIRE(r.ss == 0.0);
    }
    SECTION("w1 = 2 with unit layer mean drops the logit from 2 to 0") {
        AnalyticScorer s({2, 0, 0, 0, 0, 0}, 0.0, masks);
        const auto v = uniform_volume(1.0f);
        const auto r = saliency_score(s, v, *masks, 1);
        REQUIRE(r.delta == Catch::Approx(2.0).margin(1e-12));
        REQUIRE(r.ss == Catch::Approx(2.0).margin(1e-12));
    }
    SECTION("empty layer: occlusion is the identity") {
        std::vector<std::uint8_t> lab(kDims.count(), 1); // only layer 1 present
        auto sparse = std::make_shared<const LayerMaskSet>(kDims, lab);
        AnalyticScorer s({1, 1, 1, 1, 1, 1}, 0.0, sparse);
        const auto v = uniform_volume(2.0f);
        const auto r = saliency_score(s, v, *sparse, 4);
        REQUIRE(r.ss == 0.0);
    }
    REQUIRE_THROWS_AS(
        saliency_score(AnalyticScorer({0, 0, 0, 0, 0, 0}, 0, masks), uniform_volume(1.0f),
                       *masks, 0),
        domain_error);
}

TEST_CASE("directional_summary hand fixtures") {
    const std::vector<double> deltas{0.5, -0.25};
    const auto r = directional_summary(deltas);
    REQUIRE(r.pdss == Catch::Approx(0.25).margin(1e-15));
    REQUIRE(r.ndss == Catch::Approx(0.125).margin(1e-15));

    const std::vector<double> all_pos{0.1, 0.2, 0.0};
    REQUIRE(directional_summary(all_pos).ndss == 0.0);

    std::vector<double> negated(deltas);
    for (auto& d : negated) d = -d;
    const auto rn = directional_summary(negated);
    REQUIRE(rn.pdss == Catch::Approx(r.ndss).margin(1e-15));
    REQUIRE(rn.ndss == Catch::Approx(r.pdss).margin(1e-15));

    REQUIRE_THROWS_AS(directional_summary(std::vector<double>{}), domain_error);
}

TEST_CASE("volume_adjust division and guards") {
    REQUIRE(volume_adjust(0.42, 1000000) == Catch::Approx(4.2e-7).epsilon(1e-12));
    REQUIRE(volume_adjust(0.0, 12345) == 0.0);
    REQUIRE_THROWS_AS(volume_adjust(1.0, 0), domain_error);
}

TEST_CASE("multi-layer saliency and OIS") {
    auto masks = make_masks();
    SECTION("zero-weight pair has zero joint saliency") {
        AnalyticScorer s({0, 0, 1, 1, 1, 1}, 0.0, masks);
        const auto r = multi_layer_saliency(s, uniform_volume(1.0f), *masks, 1, 2);
        REQUIRE(r.ss == 0.0);
    }
    SECTION("linear logit is additive over disjoint layers") {
        AnalyticScorer s({2, 1, 0, 0, 0, 0}, 0.5, masks);
        const auto v = uniform_volume(1.0f);
        const auto ri = saliency_score(s, v, *masks, 1);
        const auto rj = saliency_score(s, v, *masks, 2);
        const auto rij = multi_layer_saliency(s, v, *masks, 1, 2);
        REQUIRE(ri.delta == Catch::Approx(2.0).margin(1e-12));
        REQUIRE(rj.delta == Catch::Approx(1.0).margin(1e-12));
        REQUIRE(rij.delta == Catch::Approx(ri.delta + rj.delta).margin(1e-12));
        REQUIRE(std::fabs(ois(ri.ss, rj.ss, rij.ss)) < 1e-9);
    }
    SECTION("min scorer shows redundancy of exactly -0.5") {
        auto masks2 = make_masks();
        MinScorer s(1, 2, masks2);
        const auto v = uniform_volume(1.0f);
        const auto ri = saliency_score(s, v, *masks2, 1);
        const auto rj = saliency_score(s, v, *masks2, 2);
        const auto rij = multi_layer_saliency(s, v, *masks2, 1, 2);
        REQUIRE(ri.ss == 1.0);
        REQUIRE(rj.ss == 1.0);
        REQUIRE(rij.ss == 1.0);
        REQUIRE(ois(ri.ss, rj.ss, rij.ss) == Catch::Approx(-0.5).margin(1e-12));
    }
    SECTION("epsilon guards the zero denominator") {
        REQUIRE(ois(0.0, 0.0, 1.0, 1e-6) == Catch::Approx(1e6).epsilon(1e-12));
        REQUIRE_THROWS_AS(ois(1.0, 1.0, 1.0, 0.0), domain_error);
    }
    REQUIRE_THROWS_AS(
        multi_layer_saliency(MinScorer(1, 2, masks), uniform_volume(1.0f), *masks, 3, 3),
        domain_error);
}

TEST_CASE("same-sign pairs under the analytic scorer give |OIS| < 1e-9 on random volumes") {
    auto masks = make_masks();
    Rng rng(202);
    for (int rep = 0; rep < 100; ++rep) {
        std::array<double, 6> w{};
        for (auto& x : w) x = rng.uniform(0.1, 3.0); // positive weights: same-sign deltas
        AnalyticScorer s(w, rng.uniform(-1.0, 1.0), masks);
        MultiVolume v;
        v.modalities.push_back(testutil::random_volume(kDims, rng, Modality::BMode, 0.1, 1.0));
        const int a = 1 + static_cast<int>(rng.below(6));
        int b = 1 + static_cast<int>(rng.below(6));
        if (b == a) b = (b % 6) + 1;
        const auto ri = saliency_score(s, v, *masks, a);
        const auto rj = saliency_score(s, v, *masks, b);
        const auto rij = multi_layer_saliency(s, v, *masks, a, b);
        REQUIRE(std::fabs(ois(ri.ss, rj.ss, rij.ss)) < 1e-9);
    }
}

TEST_CASE("run_layer_analysis: identities, ranking, and interaction tables") {
    testutil::TempDir dir("sal_run");
    const auto units = phantom_units(dir.path(), 6, 77);
    AnalyticScorer scorer({0, 0, 0, 0, 3, 0}, 0.0, units[0].mask);
    AnalysisOptions opts;
    opts.bootstrap_b = 200;
    opts.seed = 5;
    const auto res = run_layer_analysis(scorer, units, opts);

    // the weighted layer dominates
    int top = 0;
    double best = -1.0;
    for (const auto& row : res.report.rows)
        if (row.ss_mean > best) {
            best = row.ss_mean;
            top = row.layer;
        }
    REQUIRE(top == 5);

    for (const auto& row : res.report.rows) {
        REQUIRE(row.ss_mean >= 0.0);
        REQUIRE(row.pdss >= 0.0);
        REQUIRE(row.ndss >= 0.0);
        // PDSS - NDSS identity against the mean delta
        REQUIRE(std::fabs(row.pdss - row.ndss - row.delta_mean) < 1e-12);
        REQUIRE(row.ss_ci.low <= row.ss_mean + 1e-12);
        REQUIRE(row.ss_ci.high >= row.ss_mean - 1e-12);
    }

    // per-scan SS = |delta|
    for (std::size_t i = 0; i < res.per_scan.ss.size(); ++i)
        for (int l = 0; l < kLayerCount; ++l)
            REQUIRE(res.per_scan.ss[i][l] == std::fabs(res.per_scan.delta[i][l]));

    // interaction tables: diagonal rho is 1 where defined, symmetric counts
    for (int a = 0; a < kLayerCount; ++a) {
        if (res.interactions.rho[a][a])
            REQUIRE(*res.interactions.rho[a][a] == Catch::Approx(1.0).margin(1e-12));
        for (int b = 0; b < kLayerCount; ++b) {
            if (res.interactions.rho[a][b]) {
                REQUIRE(*res.interactions.rho[a][b] >= -1.0 - 1e-12);
                REQUIRE(*res.interactions.rho[a][b] <= 1.0 + 1e-12);
                REQUIRE(*res.interactions.rho[a][b] ==
                        Catch::Approx(*res.interactions.rho[b][a]).margin(1e-12));
            }
            if (a != b) REQUIRE(res.interactions.pair_count[a][b] == units.size());
        }
    }

    REQUIRE_THROWS_AS(run_layer_analysis(scorer, std::vector<ScanUnit>{}, opts), domain_error);
}

TEST_CASE("report rows permute when layers are relabeled") {
    testutil::TempDir dir("sal_perm");
    const auto units = phantom_units(dir.path(), 4, 31);

    const std::array<double, 6> w{0.3, 1.2, 0.1, 2.0, 0.7, 0.05};
    AnalyticScorer base(w, 0.0, units[0].mask);
    AnalysisOptions opts;
    opts.pairs = false;
    opts.bootstrap_b = 10;
    const auto res = run_layer_analysis(base, units, opts);

    // swap layer codes 2 and 4 in masks and weights alike
    std::vector<ScanUnit> swapped = units;
    std::map<const LayerMaskSet*, std::shared_ptr<const LayerMaskSet>> cache;
    for (auto& u : swapped) {
        auto it = cache.find(u.mask.get());
        if (it == cache.end()) {
            auto lab = u.mask->labels();
            for (auto& c : lab) {
                if (c == 2) c = 4;
                else if (c == 4) c = 2;
            }
            it = cache.emplace(u.mask.get(),
                               std::make_shared<const LayerMaskSet>(u.mask->dims(), lab))
                     .first;
        }
        u.mask = it->second;
    }
    std::array<double, 6> w2 = w;
    std::swap(w2[1], w2[3]);
    AnalyticScorer permuted(w2, 0.0, swapped[0].mask);
    const auto res2 = run_layer_analysis(permuted, swapped, opts);

    auto expect_same = [](const LayerSaliencyRow& a, const LayerSaliencyRow& b) {
        REQUIRE(a.ss_mean == Catch::Approx(b.ss_mean).margin(1e-12));
        REQUIRE(a.pdss == Catch::Approx(b.pdss).margin(1e-12));
        REQUIRE(a.ndss == Catch::Approx(b.ndss).margin(1e-12));
        REQUIRE(a.va_ss == Catch::Approx(b.va_ss).margin(1e-12));
    };
    expect_same(res2.report.rows[3], res.report.rows[1]);
    expect_same(res2.report.rows[1], res.report.rows[3]);
    expect_same(res2.report.rows[0], res.report.rows[0]);
    expect_same(res2.report.rows[5], res.report.rows[5]);
}

TEST_CASE("volume-adjusted SS halves when the grid is duplicated laterally") {
    // duplicate along y: same layer means (raw SS unchanged), twice the voxels
    const Dims d{5, 4, 8};
    const Dims d2{5, 8, 8};
    Rng rng(99);
    auto vol = testutil::random_volume(d, rng);
    const auto mask = testutil::slab_mask(d, {1, 1, 1, 2, 1, 2});

    std::vector<float> vox2(d2.count());
    std::vector<std::uint8_t> lab2(d2.count());
    for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d2.ny; ++y)
            for (int x = 0; x < d.nx; ++x) {
                const auto src = vol.voxels()[vol.index(x, y % d.ny, z)];
                const std::size_t dst = static_cast<std::size_t>(x) +
                                        static_cast<std::size_t>(d2.nx) *
                                            (static_cast<std::size_t>(y) +
                                             static_cast<std::size_t>(d2.ny) *
                                                 static_cast<std::size_t>(z));
                vox2[dst] = src;
                lab2[dst] = mask.labels()[vol.index(x, y % d.ny, z)];
            }

    auto m1 = std::make_shared<const LayerMaskSet>(mask);
    auto m2 = std::make_shared<const LayerMaskSet>(d2, lab2);
    AnalyticScorer s1({1, 1, 1, 1, 1, 1}, 0.0, m1);
    AnalyticScorer s2({1, 1, 1, 1, 1, 1}, 0.0, m2);

    MultiVolume v1, v2;
    v1.modalities.push_back(vol);
    v2.modalities.emplace_back(d2, Modality::BMode, vox2);

    for (int code = 1; code <= 6; ++code) {
        const auto r1 = saliency_score(s1, v1, *m1, code);
        const auto r2 = saliency_score(s2, v2, *m2, code);
        REQUIRE(r2.ss == Catch::Approx(r1.ss).margin(1e-12));
        REQUIRE(m2->layer_volume(code) == 2 * m1->layer_volume(code));
        const double adj1 = volume_adjust(r1.ss, m1->layer_volume(code));
        const double adj2 = volume_adjust(r2.ss, m2->layer_volume(code));
        REQUIRE(adj2 == Catch::Approx(adj1 / 2.0).margin(1e-12));
    }
}

TEST_CASE("zero-volume layers are excluded from adjusted averages and counted") {
    // masks without any layer-3 voxels
    const Dims d{4, 4, 6};
    std::vector<std::uint8_t> lab(d.count(), 1);
    for (std::size_t i = 0; i < lab.size(); ++i)
        if (i % 3 == 0) lab[i] = 5;
    auto mask = std::make_shared<const LayerMaskSet>(d, lab);
    Rng rng(7);
    std::vector<ScanUnit> units(3);
    for (std::size_t i = 0; i < units.size(); ++i) {
        units[i].id = static_cast<int>(i);
        units[i].key = "u" + std::to_string(i);
        units[i].positive = i % 2 == 0;
        units[i].volume.modalities.push_back(testutil::random_volume(d, rng));
        units[i].mask = mask;
    }
    AnalyticScorer s({1, 1, 1, 1, 1, 1}, 0.0, mask);
    AnalysisOptions opts;
    opts.pairs = false;
    opts.bootstrap_b = 10;
    const auto res = run_layer_analysis(s, units, opts);
    const auto& row3 = res.report.row(3);
    REQUIRE(row3.zero_volume_excluded == units.size());
    REQUIRE(row3.va_ss == 0.0);
    REQUIRE(row3.mean_layer_volume == 0.0);
    REQUIRE(res.report.row(5).zero_volume_excluded == 0);
}

TEST_CASE("volume-adjusted directional averages follow the per-scan form") {
    // two scans with layer-1 deltas +4e-6 and -4e-6 over a 4-voxel layer:
    // per-scan delta/volume = ±1e-6, so adjusted PDSS = NDSS = 5e-7
    const Dims d{2, 2, 2};
    std::vector<std::uint8_t> lab(8, 0);
    lab[0] = lab[1] = lab[2] = lab[3] = 1;
    auto mask = std::make_shared<const LayerMaskSet>(d, lab);
    AnalyticScorer s({1, 0, 0, 0, 0, 0}, 0.0, mask);

    auto mk_unit = [&](int id, float layer_value) {
        ScanUnit u;
        u.id = id;
        u.key = "s" + std::to_string(id);
        std::vector<float> vox(8, 0.0f);
        for (int i = 0; i < 4; ++i) vox[static_cast<std::size_t>(i)] = layer_value;
        u.volume.modalities.emplace_back(d, Modality::BMode, std::move(vox));
        u.mask = mask;
        return u;
    };
    std::vector<ScanUnit> units{mk_unit(0, 4e-6f), mk_unit(1, -4e-6f)};

    AnalysisOptions opts;
    opts.pairs = false;
    opts.bootstrap_b = 10;
    const auto res = run_layer_analysis(s, units, opts);
    const auto& row = res.report.row(1);
    REQUIRE(row.va_pdss == Catch::Approx(5e-7).epsilon(1e-6));
    REQUIRE(row.va_ndss == Catch::Approx(5e-7).epsilon(1e-6));
}

TEST_CASE("saliency report JSON round-trips") {
    testutil::TempDir dir("sal_json");
    const auto units = phantom_units(dir.path(), 3, 13);
    AnalyticScorer scorer({1, 0.5, 0, 0, 2, 0.1}, -0.2, units[0].mask);
    AnalysisOptions opts;
    opts.bootstrap_b = 50;
    opts.seed = 11;
    const auto res = run_layer_analysis(scorer, units, opts);

    const auto j = to_json(res.report);
    const auto back = saliency_report_from_json(j);
    REQUIRE(back.scan_count == res.report.scan_count);
    for (int i = 0; i < kLayerCount; ++i) {
        REQUIRE(back.rows[i].ss_mean == res.report.rows[i].ss_mean);
        REQUIRE(back.rows[i].va_ndss == res.report.rows[i].va_ndss);
        REQUIRE(back.rows[i].ss_ci.low == res.report.rows[i].ss_ci.low);
    }
    const auto ji = to_json(res.interactions);
    const auto backi = interaction_report_from_json(ji);
    for (int a = 0; a < kLayerCount; ++a)
        for (int b = 0; b < kLayerCount; ++b) {
            REQUIRE(backi.rho[a][b].has_value() == res.interactions.rho[a][b].has_value());
            REQUIRE(backi.mean_ois[a][b] == res.interactions.mean_ois[a][b]);
        }
}

TEST_CASE("per-side directional scores aggregate per (patient, visit, side)") {
    testutil::TempDir dir("sal_side");
    // jitter off: every unit shares the scorer's bound mask, so zero-weight
    // layers carry exactly zero delta
    auto cfg = testutil::small_phantom(5, 21);
    cfg.boundary_jitter = 0.0;
    const auto manifest = generate_cohort(cfg, dir.path());
    const auto units = load_units(dir.path(), manifest, Scenario::SideMp, ModalitySet::BMode);
    AnalyticScorer scorer({0, 0, 0, 0, 2, 0}, 0.0, units[0].mask);
    AnalysisOptions opts;
    opts.pairs = false;
    opts.bootstrap_b = 10;
    const auto res = run_layer_analysis(scorer, units, opts);
    const auto sides = side_directional_scores(units, res.per_scan);

    // 5 patients x 2 visits x 2 sides
    REQUIRE(sides.size() == 20);
    for (const auto& s : sides) {
        // per-side PDSS / NDSS from its own scans, verified on a sample
        std::vector<double> deltas;
        for (const auto& u : units)
            if (u.patient == s.patient && u.visit == s.visit && u.side == s.side)
                deltas.push_back(res.per_scan.delta[static_cast<std::size_t>(u.id)][4]);
        const auto expect = directional_summary(deltas);
        REQUIRE(s.pdss[4] == Catch::Approx(expect.pdss).margin(1e-15));
        REQUIRE(s.ndss[4] == Catch::Approx(expect.ndss).margin(1e-15));
    }

    const auto rows = associate_sides(sides);
    REQUIRE(rows.size() == 12);
    // zero-weight layers have constant zero scores: rank deficient rows
    for (const auto& r : rows) {
        if (r.layer == 5) continue;
        REQUIRE(r.status == "rank_deficient");
    }
}
