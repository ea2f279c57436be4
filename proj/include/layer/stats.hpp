#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "layer/errors.hpp"
#include "layer/rng.hpp"
#include "layer/util.hpp"

namespace layer {

inline constexpr double kZ975 = 1.959963984540054; // Phi^-1(0.975)

inline double mean_of(std::span<const double> xs) {
    if (xs.empty()) throw domain_error("mean of empty set");
    return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

inline double sample_variance(std::span<const double> xs) {
    if (xs.size() < 2) throw domain_error("variance needs n >= 2");
    const double m = mean_of(xs);
    double ss = 0.0;
    for (double x : xs) ss += (x - m) * (x - m);
    return ss / static_cast<double>(xs.size() - 1);
}

/// Sample Pearson coefficient; empty when either series is constant.
inline std::optional<double> pearson(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw shape_error("pearson: length mismatch");
    if (a.size() < 2) throw domain_error("pearson: needs n >= 2");
    const double ma = mean_of(a), mb = mean_of(b);
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa == 0.0 || sbb == 0.0) return std::nullopt;
    return sab / std::sqrt(saa * sbb);
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

namespace detail {

/// Regularized incomplete beta I_x(a,b) by Lentz continued fraction.
inline double betacf(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 3e-16;
    constexpr double kFpMin = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0, d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kEps) break;
    }
    return h;
}

inline double ibeta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double lnfront = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                           a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(lnfront);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

} // namespace detail

inline double student_t_cdf(double t, double df) {
    if (df < 1.0) throw domain_error("student_t_cdf: df must be >= 1");
    if (t == 0.0) return 0.5;
    const double x = df / (df + t * t);
    const double tail = 0.5 * detail::ibeta(0.5 * df, 0.5, x);
    return t > 0.0 ? 1.0 - tail : tail;
}

// ---------------------------------------------------------------------------
// Logistic regression (one predictor) by IRLS with Wald intervals.

struct LogisticFit {
    double beta0 = 0.0;
    double beta1 = 0.0;
    double se0 = 0.0;
    double se1 = 0.0;
    double p_value = 1.0; // two-sided Wald for beta1
    double ci_low = 0.0;
    double ci_high = 0.0;
    double auc = 0.5; // of the fitted scores
    int iterations = 0;
    double log_likelihood = 0.0;
};

struct RocPoint {
    double threshold = 0.0;
    double fpr = 0.0;
    double tpr = 0.0;
};

struct RocResult {
    double auc = 0.5;
    std::size_t n_pos = 0;
    std::size_t n_neg = 0;
    std::vector<RocPoint> points;
};

/// Mann-Whitney AUC with midrank tie handling.
inline RocResult roc_auc(std::span<const double> scores, std::span<const int> y) {
    if (scores.size() != y.size()) throw shape_error("roc_auc: length mismatch");
    const std::size_t n = scores.size();
    if (n == 0) throw domain_error("roc_auc: empty input");
    RocResult out;
    for (int v : y) {
        if (v != 0 && v != 1) throw domain_error("roc_auc: labels must be 0/1");
        v == 1 ? ++out.n_pos : ++out.n_neg;
    }
    if (out.n_pos == 0 || out.n_neg == 0)
        throw domain_error("roc_auc: both classes must be present");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // midranks
    std::vector<double> rank(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mid;
        i = j + 1;
    }
    double rank_sum_pos = 0.0;
    for (std::size_t k = 0; k < n; ++k)
        if (y[k] == 1) rank_sum_pos += rank[k];
    const double np = static_cast<double>(out.n_pos), nn = static_cast<double>(out.n_neg);
    out.auc = (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);

    // threshold sweep, descending score
    double tp = 0.0, fp = 0.0;
    out.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
    for (std::size_t k = n; k-- > 0;) {
        const std::size_t idx = order[k];
        y[idx] == 1 ? ++tp : ++fp;
        if (k == 0 || scores[order[k - 1]] != scores[idx])
            out.points.push_back({scores[idx], fp / nn, tp / np});
    }
    return out;
}

inline LogisticFit logistic_fit(std::span<const double> x, std::span<const int> y) {
    if (x.size() != y.size()) throw shape_error("logistic_fit: length mismatch");
    const std::size_t n = x.size();
    if (n < 2) throw domain_error("logistic_fit: needs n >= 2");
    bool any0 = false, any1 = false;
    for (int v : y) (v == 1 ? any1 : any0) = true;
    if (!any0 || !any1) throw domain_error("logistic_fit: both classes must be present");
    const double x0 = x[0];
    bool constant = true;
    for (double v : x)
        if (v != x0) { constant = false; break; }
    if (constant) throw rank_error("logistic_fit: constant predictor");

    // Complete separation has no finite MLE. The norm guard below catches
    // slow divergence, but IRLS can also stall at a converged log-likelihood
    // first, so check the exact univariate condition up front.
    {
        double pos_min = std::numeric_limits<double>::infinity(), pos_max = -pos_min;
        double neg_min = pos_min, neg_max = -pos_min;
        for (std::size_t i = 0; i < n; ++i) {
            auto& mn = y[i] == 1 ? pos_min : neg_min;
            auto& mx = y[i] == 1 ? pos_max : neg_max;
            mn = std::min(mn, x[i]);
            mx = std::max(mx, x[i]);
        }
        if (pos_min > neg_max || pos_max < neg_min)
            throw separation_error("logistic_fit: classes completely separated");
    }

    double b0 = 0.0, b1 = 0.0;
    double prev_ll = -std::numeric_limits<double>::infinity();
    int it = 0;
    double ll = 0.0;
    for (it = 1; it <= 100; ++it) {
        double g0 = 0.0, g1 = 0.0, s00 = 0.0, s01 = 0.0, s11 = 0.0;
        ll = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double z = b0 + b1 * x[i];
            const double p = sigmoid(z);
            const double w = p * (1.0 - p);
            const double r = static_cast<double>(y[i]) - p;
            g0 += r;
            g1 += r * x[i];
            s00 += w;
            s01 += w * x[i];
            s11 += w * x[i] * x[i];
            ll += static_cast<double>(y[i]) * z - softplus(z);
        }
        const double det = s00 * s11 - s01 * s01;
        if (det <= 0.0 || !std::isfinite(det))
            throw rank_error("logistic_fit: singular information matrix");
        b0 += (s11 * g0 - s01 * g1) / det;
        b1 += (-s01 * g0 + s00 * g1) / det;
        if (std::hypot(b0, b1) > 1e3)
            throw separation_error("logistic_fit: coefficients diverged (separation)");
        if (std::fabs(ll - prev_ll) < 1e-8) break;
        prev_ll = ll;
    }

    // Wald SEs from the inverse information at the final estimate.
    double s00 = 0.0, s01 = 0.0, s11 = 0.0;
    std::vector<double> fitted(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double z = b0 + b1 * x[i];
        const double p = sigmoid(z);
        const double w = p * (1.0 - p);
        s00 += w;
        s01 += w * x[i];
        s11 += w * x[i] * x[i];
        fitted[i] = p;
    }
    const double det = s00 * s11 - s01 * s01;
    if (det <= 0.0) throw rank_error("logistic_fit: singular information matrix");

    LogisticFit out;
    out.beta0 = b0;
    out.beta1 = b1;
    out.se0 = std::sqrt(s11 / det);
    out.se1 = std::sqrt(s00 / det);
    out.iterations = it;
    out.log_likelihood = ll;
    const double zstat = out.se1 > 0.0 ? b1 / out.se1 : 0.0;
    out.p_value = 2.0 * (1.0 - normal_cdf(std::fabs(zstat)));
    out.ci_low = b1 - kZ975 * out.se1;
    out.ci_high = b1 + kZ975 * out.se1;
    out.auc = roc_auc(fitted, y).auc;
    return out;
}

// ---------------------------------------------------------------------------
// Paired comparisons.

struct DelongResult {
    double auc_a = 0.5;
    double auc_b = 0.5;
    double delta = 0.0;
    double variance = 0.0;
    double z = 0.0;
    double p = 1.0;
    bool degenerate = false;
};

/// DeLong's paired test via per-observation placement components.
inline DelongResult delong_test(std::span<const double> scores_a,
                                std::span<const double> scores_b,
                                std::span<const int> y) {
    if (scores_a.size() != y.size() || scores_b.size() != y.size())
        throw shape_error("delong_test: length mismatch");
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (y[i] != 0 && y[i] != 1) throw domain_error("delong_test: labels must be 0/1");
        (y[i] == 1 ? pos : neg).push_back(i);
    }
    if (pos.empty() || neg.empty())
        throw domain_error("delong_test: both classes must be present");
    const std::size_t m = pos.size(), n = neg.size();

    auto psi = [](double xp, double xn) {
        if (xp > xn) return 1.0;
        if (xp == xn) return 0.5;
        return 0.0;
    };

    // v10[k][i]: placement of positive i under model k; v01[k][j] for negatives
    std::array<std::span<const double>, 2> models{scores_a, scores_b};
    double auc[2];
    std::vector<double> v10[2], v01[2];
    for (int k = 0; k < 2; ++k) {
        v10[k].assign(m, 0.0);
        v01[k].assign(n, 0.0);
        double total = 0.0;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                const double v = psi(models[k][pos[i]], models[k][neg[j]]);
                v10[k][i] += v;
                v01[k][j] += v;
                total += v;
            }
        for (auto& v : v10[k]) v /= static_cast<double>(n);
        for (auto& v : v01[k]) v /= static_cast<double>(m);
        auc[k] = total / (static_cast<double>(m) * static_cast<double>(n));
    }

    auto cov = [](const std::vector<double>& a, const std::vector<double>& b, double ma,
                  double mb) {
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - ma) * (b[i] - mb);
        return a.size() > 1 ? s / static_cast<double>(a.size() - 1) : 0.0;
    };

    DelongResult out;
    out.auc_a = auc[0];
    out.auc_b = auc[1];
    out.delta = auc[0] - auc[1];
    const double s10 = cov(v10[0], v10[0], auc[0], auc[0]) +
                       cov(v10[1], v10[1], auc[1], auc[1]) -
                       2.0 * cov(v10[0], v10[1], auc[0], auc[1]);
    const double s01 = cov(v01[0], v01[0], auc[0], auc[0]) +
                       cov(v01[1], v01[1], auc[1], auc[1]) -
                       2.0 * cov(v01[0], v01[1], auc[0], auc[1]);
    out.variance = s10 / static_cast<double>(m) + s01 / static_cast<double>(n);
    if (out.variance <= 0.0) {
        if (out.delta == 0.0) {
            out.p = 1.0;
        } else {
            out.degenerate = true;
            out.p = 0.0;
        }
        return out;
    }
    out.z = out.delta / std::sqrt(out.variance);
    out.p = 2.0 * (1.0 - normal_cdf(std::fabs(out.z)));
    return out;
}

struct PairedTResult {
    double t = 0.0;
    double df = 0.0;
    double p = 1.0;
    double mean_diff = 0.0;
    bool degenerate = false;
};

inline PairedTResult paired_t_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw shape_error("paired_t_test: length mismatch");
    const std::size_t n = a.size();
    if (n < 2) throw domain_error("paired_t_test: needs n >= 2");
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
    PairedTResult out;
    out.mean_diff = mean_of(d);
    const double var = sample_variance(d);
    out.df = static_cast<double>(n - 1);
    if (var <= 0.0) {
        out.degenerate = true;
        return out;
    }
    out.t = out.mean_diff / std::sqrt(var / static_cast<double>(n));
    out.p = 2.0 * (1.0 - student_t_cdf(std::fabs(out.t), out.df));
    return out;
}

/// Percentile bootstrap interval for the mean; seeded and deterministic.
inline std::pair<double, double> bootstrap_ci(std::span<const double> samples,
                                              std::uint64_t seed, int B = 1000,
                                              double level = 0.95) {
    if (samples.empty()) throw domain_error("bootstrap_ci: empty sample");
    if (B < 1) throw domain_error("bootstrap_ci: B must be >= 1");
    Rng rng(mix_seed(seed, 0xB007u));
    const std::size_t n = samples.size();
    std::vector<double> means(static_cast<std::size_t>(B));
    for (auto& m : means) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            s += samples[rng.below(n)];
        m = s / static_cast<double>(n);
    }
    std::sort(means.begin(), means.end());
    const double alpha = 1.0 - level;
    auto pick = [&](double q) {
        const double idx = q * static_cast<double>(B - 1);
        return means[static_cast<std::size_t>(std::lround(idx))];
    };
    return {pick(alpha / 2.0), pick(1.0 - alpha / 2.0)};
}

// ---------------------------------------------------------------------------
// Directional-saliency association (one univariate fit per layer and score
// kind; batch rows never abort each other).

enum class ScoreKind : std::uint8_t { Pdss = 0, Ndss = 1 };

inline const char* score_kind_name(ScoreKind k) { return k == ScoreKind::Pdss ? "PDSS" : "NDSS"; }

struct AssociationRow {
    int layer = 0;
    ScoreKind kind = ScoreKind::Pdss;
    std::vector<double> x; // per-unit directional score
    std::vector<int> y;    // per-unit binary label
};

struct AssociationResult {
    int layer = 0;
    ScoreKind kind = ScoreKind::Pdss;
    double beta0 = 0.0;
    double beta1 = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    double p_value = 1.0;
    double auc = 0.5;
    bool pass = false;       // directional significance criterion
    std::string status = "ok";
};

/// Directional significance criterion: beta1 > 0 and p < 0.05 for PDSS,
/// beta1 < 0 and p < 0.05 for NDSS.
inline bool directional_criterion(ScoreKind kind, double beta1, double p) {
    if (p >= 0.05) return false;
    return kind == ScoreKind::Pdss ? beta1 > 0.0 : beta1 < 0.0;
}

inline std::vector<AssociationResult> run_association(const std::vector<AssociationRow>& rows) {
    std::vector<AssociationResult> out;
    out.reserve(rows.size());
    for (const auto& row : rows) {
        AssociationResult r;
        r.layer = row.layer;
        r.kind = row.kind;
        try {
            const LogisticFit fit = logistic_fit(row.x, row.y);
            r.beta0 = fit.beta0;
            r.beta1 = fit.beta1;
            r.ci_low = fit.ci_low;
            r.ci_high = fit.ci_high;
            r.p_value = fit.p_value;
            r.auc = fit.auc;
            r.pass = directional_criterion(row.kind, fit.beta1, fit.p_value);
        } catch (const separation_error&) {
            r.status = "separation";
        } catch (const rank_error&) {
            r.status = "rank_deficient";
        } catch (const domain_error& e) {
            r.status = std::string("invalid: ") + e.what();
        }
        out.push_back(std::move(r));
    }
    return out;
}

} // namespace layer
