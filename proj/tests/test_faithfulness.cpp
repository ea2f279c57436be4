#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <memory>

#include "layer/dataset.hpp"
#include "layer/faithfulness.hpp"
#include "layer/phantom.hpp"
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

RankedLayers ranking_of(std::array<int, 6> order) {
    RankedLayers r;
    r.order = order;
    return r;
}

/// Scorer without gradient support, for capability errors.
class BlindScorer : public Scorer {
public:
    double score(const MultiVolume&) const override { return 0.0; }
};

} // namespace

TEST_CASE("curve endpoints are consistent for every ranking") {
    auto masks = make_masks();
    AnalyticScorer s({1.5, -0.7, 0.3, 0.2, -0.1, 0.9}, 0.4, masks);
    Rng rng(17);
    MultiVolume v;
    v.modalities.push_back(testutil::random_volume(kDims, rng));

    const double full = s.score(v);
    const int all[6] = {1, 2, 3, 4, 5, 6};
    const double empty = s.score(occlude(v, *masks, std::span<const int>(all)));

    for (int rep = 0; rep < 10; ++rep) {
        const auto ranking = rank_layers_random(Rng(rep));
        const auto c = insertion_deletion_curves(s, v, *masks, ranking);
        REQUIRE(c.insertion.size() == 7);
        REQUIRE(c.deletion.size() == 7);
        REQUIRE(c.insertion.back() == Catch::Approx(full).margin(1e-12));
        REQUIRE(c.deletion.front() == Catch::Approx(full).margin(1e-12));
        REQUIRE(c.insertion.front() == Catch::Approx(empty).margin(1e-12));
        REQUIRE(c.deletion.back() == Catch::Approx(empty).margin(1e-12));
    }
}

TEST_CASE("single informative layer ranked first: insertion jumps then stays flat") {
    auto masks = make_masks();
    AnalyticScorer s({0, 0, 0, 0, 2, 0}, 0.0, masks);
    const auto v = uniform_volume(1.0f);
    const auto c =
        insertion_deletion_curves(s, v, *masks, ranking_of({5, 1, 2, 3, 4, 6}));
    REQUIRE(c.insertion[0] == 0.0);
    for (int k = 1; k <= 6; ++k)
        REQUIRE(c.insertion[static_cast<std::size_t>(k)] == Catch::Approx(2.0).margin(1e-12));
    REQUIRE(c.deletion[0] == Catch::Approx(2.0).margin(1e-12));
    for (int k = 1; k <= 6; ++k)
        REQUIRE(c.deletion[static_cast<std::size_t>(k)] == 0.0);
}

TEST_CASE("all-zero-weight scorer gives constant curves") {
    auto masks = make_masks();
    AnalyticScorer s({0, 0, 0, 0, 0, 0}, 0.7, masks);
    Rng rng(3);
    MultiVolume v;
    v.modalities.push_back(testutil::random_volume(kDims, rng));
    const auto c = insertion_deletion_curves(s, v, *masks, ranking_of({1, 2, 3, 4, 5, 6}));
    for (double x : c.insertion) REQUIRE(x == 0.7);
    for (double x : c.deletion) REQUIRE(x == 0.7);
}

TEST_CASE("metric fixtures") {
    Curves c;
    c.insertion = {0.0, 1.0, 2.0};
    c.deletion = {2.0, 1.0, 0.5};
    REQUIRE(auc_insertion(c) == 1.0); // (1/2)(0.5 + 1.5) exactly
    REQUIRE(irof(c, 1e-6) == Catch::Approx(3.999992).margin(1e-6));
    REQUIRE_FALSE(irof_unstable(c, 1e-6));

    Curves same;
    same.insertion = {0.3, 0.6, 0.9};
    same.deletion = {0.3, 0.6, 0.9};
    REQUIRE(auc_delta(same) == 0.0);

    Curves crossing;
    crossing.insertion = {0.0, 1.0};
    crossing.deletion = {1.0, -2.0};
    REQUIRE(irof_unstable(crossing, 1e-6));

    REQUIRE_THROWS_AS(curve_auc(std::vector<double>{1.0}), domain_error);
    REQUIRE_THROWS_AS(irof(c, 0.0), domain_error);
}

TEST_CASE("rank_from_scores breaks ties by ascending layer code") {
    const auto r = rank_from_scores({1.0, 1.0, 0.5, 2.0, 0.5, 0.5}, AttributionMethod::Layer);
    REQUIRE(r.order == std::array<int, 6>{4, 1, 2, 3, 5, 6});
    r.validate();
}

TEST_CASE("occlusion ranking puts the informative layer first") {
    auto masks = make_masks();
    AnalyticScorer s({0.1, 0, 0, 0, 3, 0.2}, 0.0, masks);
    const auto r = rank_layers_occlusion(s, uniform_volume(1.0f), *masks);
    REQUIRE(r.order[0] == 5);
    REQUIRE(r.order[1] == 6);
    REQUIRE(r.order[2] == 1);
}

TEST_CASE("IG on the analytic scorer reproduces the closed form") {
    auto masks = make_masks();
    const std::array<double, 6> w{0.5, 2.0, 0.1, 1.0, 0.05, 0.7};
    AnalyticScorer s(w, 0.0, masks);
    const auto v = uniform_volume(1.0f);

    // linear map: attribution of voxel in layer i is I_v * w_i / |M_i|, so
    // per-layer |attribution| sums are exactly |w_i| on a uniform unit volume
    const auto r = rank_layers_ig(s, v, *masks, 32);
    const auto occl = rank_layers_occlusion(s, v, *masks);
    REQUIRE(r.order == occl.order);

    // completeness holds exactly for a linear scorer
    const double total = ig_attribution_sum(s, v, 32);
    const int all[6] = {1, 2, 3, 4, 5, 6};
    const double expected = s.score(v) - s.score(occlude(v, *masks, std::span<const int>(all)));
    REQUIRE(total == Catch::Approx(expected).margin(1e-10));
}

TEST_CASE("IG on a zero volume falls back to layer-code order") {
    auto masks = make_masks();
    AnalyticScorer s({1, 2, 3, 0.5, 0.2, 0.1}, 0.0, masks);
    const auto r = rank_layers_ig(s, uniform_volume(0.0f), *masks);
    REQUIRE(r.order == std::array<int, 6>{1, 2, 3, 4, 5, 6});
}

TEST_CASE("IG completeness within 1% for the trainable scorer") {
    TrainableScorer t({kDims, {Modality::BMode}, 4, 16, false}, 5);
    Rng rng(23);
    MultiVolume v;
    v.modalities.push_back(testutil::random_volume(kDims, rng, Modality::BMode, 0.2, 1.2));
    const double total = ig_attribution_sum(t, v, 32);
    MultiVolume zero;
    zero.modalities.emplace_back(kDims, Modality::BMode,
                                 std::vector<float>(kDims.count(), 0.0f));
    const double expected = t.score(v) - t.score(zero);
    REQUIRE(std::fabs(total - expected) <= 0.01 * std::fabs(expected));
}

TEST_CASE("SmoothGrad with zero noise equals the plain-gradient ranking") {
    TrainableScorer t({kDims, {Modality::BMode}, 4, 16, false}, 9);
    auto masks = make_masks();
    Rng rng(31);
    MultiVolume v;
    v.modalities.push_back(testutil::random_volume(kDims, rng));

    const auto sg = rank_layers_smoothgrad(t, v, *masks, Rng(1), 5, 0.0);
    // plain |gradient| summed per layer
    const auto g = t.input_gradient(v);
    std::array<double, 6> plain{};
    const auto& lab = masks->labels();
    for (std::size_t i = 0; i < lab.size(); ++i)
        if (lab[i] != 0)
            plain[static_cast<std::size_t>(lab[i] - 1)] += std::fabs(g.modalities[0].values[i]);
    REQUIRE(sg.order == rank_from_scores(plain, AttributionMethod::SmoothGrad).order);
}

TEST_CASE("SmoothGrad on the analytic scorer ranks by |w| regardless of noise") {
    auto masks = make_masks();
    AnalyticScorer s({0.5, 3.0, 0.1, 1.5, 0.05, 0.8}, 0.0, masks);
    Rng rng(41);
    MultiVolume v;
    v.modalities.push_back(testutil::random_volume(kDims, rng));
    const auto r = rank_layers_smoothgrad(s, v, *masks, Rng(7), 25, 0.1);
    REQUIRE(r.order == std::array<int, 6>{2, 4, 6, 1, 3, 5});

    const auto r2 = rank_layers_smoothgrad(s, v, *masks, Rng(7), 25, 0.1);
    REQUIRE(r.order == r2.order); // seeded determinism
}

TEST_CASE("random rankings are valid permutations and seeded") {
    const auto a = rank_layers_random(Rng(3));
    const auto b = rank_layers_random(Rng(3));
    const auto c = rank_layers_random(Rng(4));
    a.validate();
    c.validate();
    REQUIRE(a.order == b.order);
    REQUIRE(a.order != c.order);
}

TEST_CASE("gradient methods demand the capability") {
    auto masks = make_masks();
    BlindScorer s;
    const auto v = uniform_volume(1.0f);
    REQUIRE_THROWS_AS(rank_layers_ig(s, v, *masks), capability_error);
    REQUIRE_THROWS_AS(rank_layers_smoothgrad(s, v, *masks, Rng(1)), capability_error);
}

TEST_CASE("permuting zero-weight layers never changes AUC-ins") {
    auto masks = make_masks();
    AnalyticScorer s({3, 0, 0, 0, 0, 0}, 0.0, masks);
    Rng rng(55);
    MultiVolume v;
    v.modalities.push_back(testutil::random_volume(kDims, rng));
    const auto base =
        insertion_deletion_curves(s, v, *masks, ranking_of({1, 2, 3, 4, 5, 6}));
    const auto swapped =
        insertion_deletion_curves(s, v, *masks, ranking_of({1, 6, 4, 2, 3, 5}));
    REQUIRE(auc_insertion(base) == Catch::Approx(auc_insertion(swapped)).margin(1e-12));
}

TEST_CASE("compare_methods: self-comparison is degenerate, LAYER beats Random") {
    testutil::TempDir dir("faith_cmp");
    auto cfg = testutil::small_phantom(5, 61);
    const auto manifest = generate_cohort(cfg, dir.path());
    const auto units = load_units(dir.path(), manifest, Scenario::SideMp, ModalitySet::BMode);
    AnalyticScorer scorer({0, 0, 0, 0, 4, 0}, -3.0, units[0].mask);

    const auto table = compare_methods(
        scorer, units, {AttributionMethod::Layer, AttributionMethod::Layer}, 3);
    for (const auto& t : table.tests) REQUIRE(t.test.degenerate);

    const auto lr = compare_methods(
        scorer, units, {AttributionMethod::Layer, AttributionMethod::Random}, 3);
    REQUIRE(lr.per_scan.size() == 2 * units.size());
    const auto& layer_means = lr.method_means.at("LAYER");
    const auto& random_means = lr.method_means.at("Random");
    REQUIRE(layer_means[0] >= random_means[0]); // auc_ins

    REQUIRE_THROWS_AS(
        compare_methods(scorer, units, {AttributionMethod::Layer}, 3), domain_error);
}

TEST_CASE("comparison metrics use the target-class logit") {
    // one positive and one negative scan with identical volumes: insertion
    // raises the positive scan's metric curve and the mirrored negative one
    auto masks = make_masks();
    AnalyticScorer s({0, 0, 0, 0, 2, 0}, -1.0, masks);
    std::vector<ScanUnit> units(2);
    for (int i = 0; i < 2; ++i) {
        units[i].id = i;
        units[i].key = "k" + std::to_string(i);
        units[i].positive = i == 0;
        units[i].volume = uniform_volume(1.0f);
        units[i].mask = masks;
    }
    const auto table = compare_methods(
        s, units, {AttributionMethod::Layer, AttributionMethod::Random}, 5);
    double pos_ins = 0.0, neg_ins = 0.0;
    for (const auto& r : table.per_scan)
        if (r.method == AttributionMethod::Layer)
            (r.scan_key == "k0" ? pos_ins : neg_ins) = r.auc_ins;
    // positive scan: logit rises from -1 toward 1; target curve is the raw one
    // negative scan: raw logit is identical, target curve is its negation
    REQUIRE(pos_ins == Catch::Approx(-neg_ins).margin(1e-12));
}
