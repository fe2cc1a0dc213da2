#pragma once

// Repeated random-split evaluation: ROC/AUC, t-based confidence intervals on
// the mean AUC, binormal Cohen's d and two-sample model comparison.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "vizrisk/distributions.hpp"
#include "vizrisk/error.hpp"
#include "vizrisk/glm.hpp"
#include "vizrisk/parallel.hpp"
#include "vizrisk/rng.hpp"

namespace vizrisk::eval {

namespace detail {

inline void check_binary(std::span<const double> scores, std::span<const double> labels, const char* who,
                         std::size_t& n_pos, std::size_t& n_neg) {
    if (scores.size() != labels.size()) throw input_error(std::string(who) + ": scores and labels differ in length");
    n_pos = n_neg = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (!std::isfinite(scores[i])) throw input_error(std::string(who) + ": non-finite score");
        if (labels[i] == 1.0) ++n_pos;
        else if (labels[i] == 0.0) ++n_neg;
        else throw input_error(std::string(who) + ": labels must be 0 or 1");
    }
    if (n_pos == 0 || n_neg == 0) throw input_error(std::string(who) + ": labels contain a single class");
}

}  // namespace detail

/// P(score+ > score-) + P(tie)/2 via one sort: walk tie groups in ascending
/// score order and count, for each positive, the negatives strictly below it
/// plus half the negatives tied with it. All partial sums are integers or
/// halves, so the result is exact.
inline double roc_auc(std::span<const double> scores, std::span<const double> labels) {
    std::size_t n_pos = 0, n_neg = 0;
    detail::check_binary(scores, labels, "roc_auc", n_pos, n_neg);
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double u = 0.0;
    double neg_below = 0.0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        double pos = 0.0, neg = 0.0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            (labels[order[j]] == 1.0 ? pos : neg) += 1.0;
            ++j;
        }
        u += pos * neg_below + 0.5 * pos * neg;
        neg_below += neg;
        i = j;
    }
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

struct RocPoint {
    double threshold;
    double fpr;
    double tpr;
};

/// ROC vertices for thresholds at every distinct score, descending, starting
/// at (0, 0).
inline std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const double> labels) {
    std::size_t n_pos = 0, n_neg = 0;
    detail::check_binary(scores, labels, "roc_curve", n_pos, n_neg);
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    std::vector<RocPoint> pts{{std::numeric_limits<double>::infinity(), 0.0, 0.0}};
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < order.size();) {
        const double s = scores[order[i]];
        while (i < order.size() && scores[order[i]] == s) {
            (labels[order[i]] == 1.0 ? tp : fp) += 1.0;
            ++i;
        }
        pts.push_back({s, fp / static_cast<double>(n_neg), tp / static_cast<double>(n_pos)});
    }
    return pts;
}

// ---------------------------------------------------------------------------

struct SplitPlan {
    std::uint64_t master_seed = 0;
    int n_repeats = 1000;
    double train_fraction = 0.7;

    void validate() const {
        if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw input_error("split plan: train_fraction must lie in (0, 1)");
        if (n_repeats < 1) throw input_error("split plan: n_repeats must be >= 1");
    }
};

/// ceil(fraction * n). The product is nudged down by 1e-9 first so that
/// fractions like 0.7 * 10 do not round up past the exact integer.
inline std::size_t train_size(std::size_t n, double fraction) {
    const double raw = fraction * static_cast<double>(n);
    auto k = static_cast<std::size_t>(std::ceil(raw - 1e-9));
    return std::clamp<std::size_t>(k, 1, n - 1);
}

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

inline constexpr int max_redraws = 1000;

/// Split for (run, attempt): a Fisher-Yates permutation driven by
/// mt19937_64 seeded with rng::derive_seed(master, run, attempt); the first
/// train_size(n) indices train, the rest test. Both halves are returned
/// sorted so row order inside each subset follows the input.
inline Split draw_split(std::size_t n, const SplitPlan& plan, std::uint64_t run, std::uint64_t attempt) {
    rng::engine eng(rng::derive_seed(plan.master_seed, run, attempt));
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t i = n - 1; i > 0; --i) {
        const std::size_t j = static_cast<std::size_t>(rng::uniform_below(eng, i + 1));
        std::swap(perm[i], perm[j]);
    }
    const std::size_t k = train_size(n, plan.train_fraction);
    Split s;
    s.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(k));
    s.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(k), perm.end());
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.test.begin(), s.test.end());
    return s;
}

struct TrainerOutput {
    Eigen::VectorXd scores;
    bool converged = true;
};

/// Fits a logistic model on the training rows and scores the test rows.
struct LogisticTrainer {
    glm::FitOptions options;

    TrainerOutput operator()(const Eigen::MatrixXd& Xtr, const Eigen::VectorXd& ytr, const Eigen::MatrixXd& Xte) const {
        const glm::LogisticModel m = glm::fit_irls(Xtr, ytr, options);
        return {glm::predict_proba(m, Xte), m.fit.converged};
    }
};

struct MeanCI {
    double mean = 0.0;
    double sd = 0.0;
    double half_width = 0.0;
    double low = 0.0;
    double high = 0.0;
};

/// mean +- t_{(1+level)/2, m-1} s / sqrt(m).
inline MeanCI mean_ci_t(std::span<const double> values, double level = 0.95) {
    const std::size_t m = values.size();
    if (m < 2) throw input_error("mean_ci_t: need at least 2 values");
    if (!(level > 0.0 && level < 1.0)) throw input_error("mean_ci_t: level must lie in (0, 1)");
    MeanCI ci;
    ci.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(m);
    double ss = 0.0;
    for (double v : values) ss += (v - ci.mean) * (v - ci.mean);
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    ci.sd = *lo == *hi ? 0.0 : std::sqrt(ss / static_cast<double>(m - 1));
    if (*lo == *hi) ci.mean = *lo;
    const double tq = dist::students_t_quantile(0.5 * (1.0 + level), static_cast<double>(m - 1));
    ci.half_width = tq * ci.sd / std::sqrt(static_cast<double>(m));
    ci.low = ci.mean - ci.half_width;
    ci.high = ci.mean + ci.half_width;
    return ci;
}

/// Binormal equal-variance effect size: AUC = Phi(d / sqrt 2).
inline double auc_to_cohens_d(double auc) {
    if (!(auc > 0.0 && auc < 1.0)) throw input_error("auc_to_cohens_d: AUC must lie strictly inside (0, 1)");
    return std::numbers::sqrt2 * dist::normal_quantile(auc);
}

inline double cohens_d_to_auc(double d) { return dist::normal_cdf(d / std::numbers::sqrt2); }

struct EvalReport {
    std::string model_name;
    SplitPlan plan;
    std::vector<double> aucs;
    double mean_auc = 0.0;
    std::optional<MeanCI> ci95;  // absent for a single run
    double cohens_d = 0.0;
    std::size_t n_skipped = 0;        // splits redrawn for a single-class half
    std::size_t n_nonconverged = 0;   // runs whose fit did not converge
    std::size_t n_train = 0;
    std::size_t n_test = 0;
};

/// Runs plan.n_repeats random splits. Run r draws attempt 0, 1, ... until
/// both halves contain both classes (at most max_redraws redraws). Runs are
/// independent, so the report does not depend on `threads`.
template <class Trainer>
EvalReport repeated_splits(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const SplitPlan& plan,
                           const Trainer& trainer, unsigned threads = 1, std::string model_name = "model") {
    plan.validate();
    const auto n = static_cast<std::size_t>(X.rows());
    if (static_cast<std::size_t>(y.size()) != n) throw input_error("repeated_splits: X and y row counts differ");
    if (n < 10) throw input_error("repeated_splits: need at least 10 observations");
    {
        std::size_t pos = 0;
        for (Eigen::Index i = 0; i < y.size(); ++i) {
            if (y(i) != 0.0 && y(i) != 1.0) throw input_error("repeated_splits: labels must be 0 or 1");
            pos += y(i) == 1.0;
        }
        if (pos == 0 || pos == n) throw input_error("repeated_splits: labels contain a single class");
    }

    const auto runs = static_cast<std::size_t>(plan.n_repeats);
    std::vector<double> aucs(runs, 0.0);
    std::vector<std::size_t> skipped(runs, 0);
    std::vector<char> converged(runs, 1);

    auto has_both = [&](const std::vector<std::size_t>& idx) {
        bool pos = false, neg = false;
        for (std::size_t i : idx) (y(static_cast<Eigen::Index>(i)) == 1.0 ? pos : neg) = true;
        return pos && neg;
    };
    auto gather = [](const Eigen::MatrixXd& M, const std::vector<std::size_t>& idx) {
        Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), M.cols());
        for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = M.row(static_cast<Eigen::Index>(idx[r]));
        return out;
    };
    auto gather_vec = [](const Eigen::VectorXd& v, const std::vector<std::size_t>& idx) {
        Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
        for (std::size_t r = 0; r < idx.size(); ++r) out(static_cast<Eigen::Index>(r)) = v(static_cast<Eigen::Index>(idx[r]));
        return out;
    };

    parallel_for(runs, threads, [&](std::size_t r) {
        Split split;
        std::uint64_t attempt = 0;
        for (;; ++attempt) {
            if (attempt > static_cast<std::uint64_t>(max_redraws)) {
                throw input_error("repeated_splits: run " + std::to_string(r) + " needed more than " +
                                  std::to_string(max_redraws) + " redraws to get both classes in train and test");
            }
            split = draw_split(n, plan, r, attempt);
            if (has_both(split.train) && has_both(split.test)) break;
        }
        skipped[r] = static_cast<std::size_t>(attempt);
        const TrainerOutput out = trainer(gather(X, split.train), gather_vec(y, split.train), gather(X, split.test));
        const Eigen::VectorXd yte = gather_vec(y, split.test);
        aucs[r] = roc_auc(std::span<const double>(out.scores.data(), static_cast<std::size_t>(out.scores.size())),
                          std::span<const double>(yte.data(), static_cast<std::size_t>(yte.size())));
        converged[r] = out.converged ? 1 : 0;
    });

    EvalReport rep;
    rep.model_name = std::move(model_name);
    rep.plan = plan;
    rep.aucs = std::move(aucs);
    rep.n_train = train_size(n, plan.train_fraction);
    rep.n_test = n - rep.n_train;
    for (std::size_t r = 0; r < runs; ++r) {
        rep.n_skipped += skipped[r];
        rep.n_nonconverged += converged[r] ? 0 : 1;
    }
    rep.mean_auc = std::accumulate(rep.aucs.begin(), rep.aucs.end(), 0.0) / static_cast<double>(runs);
    if (runs >= 2) rep.ci95 = mean_ci_t(rep.aucs, 0.95);
    const double clamped = std::clamp(rep.mean_auc, 1e-12, 1.0 - 1e-12);
    rep.cohens_d = auc_to_cohens_d(clamped);
    return rep;
}

// ---------------------------------------------------------------------------

struct TTest {
    double t = 0.0;
    double p = 1.0;
    double df = 0.0;
    bool degenerate = false;  // zero variance with equal means: t reported as 0
};

namespace detail {

inline void mean_var(std::span<const double> v, double& mean, double& var) {
    mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    var = ss / static_cast<double>(v.size() - 1);
}

}  // namespace detail

/// Unpaired Welch t-test on per-run AUCs; sample sizes may differ.
inline TTest compare_models_ttest(std::span<const double> a, std::span<const double> b) {
    if (a.size() < 2 || b.size() < 2) throw input_error("compare_models_ttest: need at least 2 runs per model");
    double ma, va, mb, vb;
    detail::mean_var(a, ma, va);
    detail::mean_var(b, mb, vb);
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    const double sa = va / na, sb = vb / nb;
    TTest r;
    if (sa + sb == 0.0) {
        if (ma != mb) throw input_error("compare_models_ttest: both AUC samples have zero variance but different means");
        r.degenerate = true;
        r.df = na + nb - 2.0;
        return r;
    }
    r.t = (ma - mb) / std::sqrt(sa + sb);
    r.df = (sa + sb) * (sa + sb) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    r.p = dist::students_t_two_sided_p(r.t, r.df);
    return r;
}

/// Paired t-test on per-run differences; requires equal run counts.
inline TTest compare_models_paired_ttest(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw input_error("compare_models_paired_ttest: run counts differ");
    if (a.size() < 2) throw input_error("compare_models_paired_ttest: need at least 2 runs");
    std::vector<double> diff(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) diff[i] = a[i] - b[i];
    double md, vd;
    detail::mean_var(diff, md, vd);
    TTest r;
    r.df = static_cast<double>(a.size() - 1);
    if (vd == 0.0) {
        if (md != 0.0) throw input_error("compare_models_paired_ttest: constant non-zero differences");
        r.degenerate = true;
        return r;
    }
    r.t = md / std::sqrt(vd / static_cast<double>(a.size()));
    r.p = dist::students_t_two_sided_p(r.t, r.df);
    return r;
}

}  // namespace vizrisk::eval
