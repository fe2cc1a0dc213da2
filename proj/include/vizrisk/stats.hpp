#pragma once

// Full-sample inference over user vectors: per-feature group t-tests,
// Benjamini-Hochberg FDR, complement pruning and a multiple logistic
// regression over the surviving features.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include <Eigen/Core>

#include "vizrisk/distributions.hpp"
#include "vizrisk/error.hpp"
#include "vizrisk/features.hpp"
#include "vizrisk/glm.hpp"
#include "vizrisk/schema.hpp"

namespace vizrisk::stats {

enum class TTestMode { pooled, welch };

inline const char* to_string(TTestMode m) { return m == TTestMode::pooled ? "pooled" : "welch"; }

inline TTestMode parse_ttest_mode(const std::string& s) {
    if (s == "pooled") return TTestMode::pooled;
    if (s == "welch") return TTestMode::welch;
    throw input_error("unknown t-test mode '" + s + "' (expected pooled or welch)");
}

struct GroupTTest {
    double t = 0.0;
    double p = 1.0;
    double df = 0.0;
    bool degenerate = false;  // both groups constant with equal means
};

/// Two-sample t from summary statistics (sample SDs).
inline GroupTTest group_ttest_summary(double mean_pos, double sd_pos, std::size_t n_pos, double mean_neg,
                                      double sd_neg, std::size_t n_neg, TTestMode mode) {
    if (n_pos < 2 || n_neg < 2) throw input_error("group_ttest: each group needs at least 2 values");
    const double a = static_cast<double>(n_pos), b = static_cast<double>(n_neg);
    const double va = sd_pos * sd_pos, vb = sd_neg * sd_neg;
    const double diff = mean_pos - mean_neg;
    GroupTTest r;
    double se2 = 0.0;
    if (mode == TTestMode::pooled) {
        r.df = a + b - 2.0;
        const double sp2 = ((a - 1.0) * va + (b - 1.0) * vb) / r.df;
        se2 = sp2 * (1.0 / a + 1.0 / b);
    } else {
        const double qa = va / a, qb = vb / b;
        se2 = qa + qb;
        r.df = se2 > 0.0 ? se2 * se2 / (qa * qa / (a - 1.0) + qb * qb / (b - 1.0)) : a + b - 2.0;
    }
    if (se2 == 0.0) {
        if (diff == 0.0) {
            r.degenerate = true;
            return r;
        }
        r.t = diff > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
        r.p = 0.0;
        return r;
    }
    r.t = diff / std::sqrt(se2);
    r.p = dist::students_t_two_sided_p(r.t, r.df);
    return r;
}

struct Moments {
    double mean = 0.0;
    double sd = 0.0;
};

inline Moments sample_moments(std::span<const double> v) {
    Moments m;
    m.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - m.mean) * (x - m.mean);
    m.sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    return m;
}

inline GroupTTest group_ttest(std::span<const double> pos, std::span<const double> neg, TTestMode mode) {
    if (pos.size() < 2 || neg.size() < 2) throw input_error("group_ttest: each group needs at least 2 values");
    const Moments a = sample_moments(pos), b = sample_moments(neg);
    return group_ttest_summary(a.mean, a.sd, pos.size(), b.mean, b.sd, neg.size(), mode);
}

struct GroupComparison {
    std::string feature_id;
    double mean_pos = 0.0, sd_pos = 0.0;
    std::size_t n_pos = 0;
    double mean_neg = 0.0, sd_neg = 0.0;
    std::size_t n_neg = 0;
    double t = 0.0;
    double p = 1.0;
    double df = 0.0;
    bool degenerate = false;
    bool significant_fdr = false;
};

/// One t-test per column of the user table, label 1 vs label 0.
inline std::vector<GroupComparison> compare_groups(std::span<const UserVector> users,
                                                   const std::vector<std::string>& column_ids, TTestMode mode) {
    std::vector<GroupComparison> out;
    std::vector<double> pos, neg;
    for (std::size_t j = 0; j < column_ids.size(); ++j) {
        pos.clear();
        neg.clear();
        for (const auto& u : users) {
            if (u.mean_probs.size() != column_ids.size())
                throw input_error("compare_groups: user '" + u.user_id + "' has the wrong dimension");
            (u.label == 1 ? pos : neg).push_back(u.mean_probs[j]);
        }
        const Moments a = sample_moments(pos), b = sample_moments(neg);
        const GroupTTest tt = group_ttest(pos, neg, mode);
        GroupComparison c;
        c.feature_id = column_ids[j];
        c.mean_pos = a.mean;
        c.sd_pos = a.sd;
        c.n_pos = pos.size();
        c.mean_neg = b.mean;
        c.sd_neg = b.sd;
        c.n_neg = neg.size();
        c.t = tt.t;
        c.p = tt.p;
        c.df = tt.df;
        c.degenerate = tt.degenerate;
        out.push_back(std::move(c));
    }
    return out;
}

struct FdrResult {
    double alpha = 0.05;
    std::size_t m = 0;
    std::vector<bool> rejected;  // input order
    std::size_t n_rejected = 0;
};

/// Benjamini-Hochberg step-up: with p sorted ascending (stable), reject the
/// k smallest where k is the largest rank with p_(k) <= k alpha / m.
inline FdrResult bh_fdr(std::span<const double> p_values, double alpha = 0.05) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw input_error("bh_fdr: alpha must lie in [0, 1]");
    FdrResult r;
    r.alpha = alpha;
    r.m = p_values.size();
    r.rejected.assign(r.m, false);
    for (double p : p_values)
        if (!(p >= 0.0 && p <= 1.0)) throw input_error("bh_fdr: p-values must lie in [0, 1]");
    std::vector<std::size_t> order(r.m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p_values[a] < p_values[b]; });
    std::size_t k = 0;
    for (std::size_t rank = 1; rank <= r.m; ++rank) {
        if (p_values[order[rank - 1]] <= static_cast<double>(rank) / static_cast<double>(r.m) * alpha) k = rank;
    }
    for (std::size_t i = 0; i < k; ++i) r.rejected[order[i]] = true;
    r.n_rejected = k;
    return r;
}

struct PruneResult {
    std::vector<GroupComparison> kept;
    std::vector<std::string> dropped;
};

/// Drops the non-primary query of every two-query task. Features that are
/// not schema queries, or belong to larger tasks, pass through.
inline PruneResult prune_complements(std::span<const GroupComparison> comparisons, const TaskSchema& schema) {
    PruneResult r;
    for (const auto& c : comparisons) {
        bool drop = false;
        if (auto col = schema.column_of(c.feature_id)) {
            const TaskLayout& t = schema.tasks()[schema.task_of_column(*col)];
            drop = t.size == 2 && t.primary_column && *t.primary_column != *col;
        }
        if (drop) r.dropped.push_back(c.feature_id);
        else r.kept.push_back(c);
    }
    return r;
}

struct RegressionRow {
    std::string feature_id;
    double beta = 0.0;
    double std_error = 0.0;
    double wald_chi2 = 0.0;
    double p = 1.0;
};

struct RegressionTable {
    RegressionRow intercept;
    std::vector<RegressionRow> rows;
    glm::FitDiagnostics fit;
};

inline RegressionTable regression_table(const glm::LogisticModel& m) {
    const auto wald = glm::wald_stats(m);
    const Eigen::VectorXd& se = *m.standard_errors;
    RegressionTable t;
    t.intercept = {"(intercept)", m.intercept, se(0), wald[0].wald_chi2, wald[0].p_value};
    for (Eigen::Index j = 0; j < m.dim(); ++j) {
        t.rows.push_back({m.column_ids[static_cast<std::size_t>(j)], m.coefficients(j), se(j + 1),
                          wald[static_cast<std::size_t>(j + 1)].wald_chi2, wald[static_cast<std::size_t>(j + 1)].p_value});
    }
    t.fit = m.fit;
    return t;
}

/// Unpenalized logistic regression on the full sample restricted to the
/// selected columns (in the given order).
inline RegressionTable full_sample_regression(std::span<const UserVector> users,
                                              const std::vector<std::string>& column_ids,
                                              const std::vector<std::string>& selected, bool standardize = false) {
    if (selected.size() < 2) throw input_error("full_sample_regression: need at least 2 selected features");
    std::vector<std::size_t> cols;
    for (const auto& id : selected) {
        auto it = std::find(column_ids.begin(), column_ids.end(), id);
        if (it == column_ids.end()) throw input_error("full_sample_regression: unknown feature '" + id + "'");
        cols.push_back(static_cast<std::size_t>(it - column_ids.begin()));
    }
    const DesignMatrix full = build_design_matrix(users, column_ids);
    Eigen::MatrixXd X(full.X.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t k = 0; k < cols.size(); ++k)
        X.col(static_cast<Eigen::Index>(k)) = full.X.col(static_cast<Eigen::Index>(cols[k]));

    glm::FitOptions opt;
    opt.standardize = standardize;
    glm::LogisticModel m = glm::fit_irls(X, full.y, opt, selected);
    if (m.fit.separation_detected) throw input_error("full_sample_regression: " + m.fit.advisory);
    if (!m.fit.converged) throw input_error("full_sample_regression: fit did not converge (" + m.fit.advisory + ")");
    m.standard_errors = glm::standard_errors(m, X);
    return regression_table(m);
}

}  // namespace vizrisk::stats
