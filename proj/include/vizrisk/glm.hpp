#pragma once

// Binary logistic regression fitted by Newton-IRLS, with Wald inference.
//
// Parameters are stacked as theta = [intercept, beta_1 .. beta_d]; the
// augmented design Xa prepends a column of ones. The objective is the
// penalized log-likelihood
//
//   l(theta) = sum_i [ y_i eta_i - log(1 + exp(eta_i)) ] - lambda/2 |beta|^2
//
// with the intercept never penalized.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/QR>

#include "json.hpp"

#include "vizrisk/distributions.hpp"
#include "vizrisk/error.hpp"

namespace vizrisk::glm {

struct FitOptions {
    double l2_lambda = 0.0;
    int max_iter = 100;
    double tol = 1e-8;         // gradient infinity-norm
    bool standardize = false;  // z-score columns before fitting
};

struct FitDiagnostics {
    bool converged = false;
    int iterations = 0;
    double final_gradient_norm = 0.0;
    double log_likelihood = 0.0;  // unpenalized, at the returned parameters
    bool separation_detected = false;
    std::string advisory;
    // Penalized objective at the start and after every accepted step.
    std::vector<double> objective_trace;
};

struct LogisticModel {
    double intercept = 0.0;
    Eigen::VectorXd coefficients;
    std::vector<std::string> column_ids;
    double l2_lambda = 0.0;
    std::optional<Eigen::VectorXd> standard_errors;  // [intercept, coefficients...]
    FitDiagnostics fit;
    // Present when fitted on z-scored columns; coefficients then refer to
    // the standardized scale.
    std::optional<Eigen::VectorXd> center;
    std::optional<Eigen::VectorXd> scale;

    Eigen::Index dim() const noexcept { return coefficients.size(); }

    Eigen::VectorXd theta() const {
        Eigen::VectorXd t(coefficients.size() + 1);
        t(0) = intercept;
        t.tail(coefficients.size()) = coefficients;
        return t;
    }
};

// ---------------------------------------------------------------------------
// Numerics shared by the fitter and its tests.

/// log(1 + e^x) without overflow.
inline double softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// [1 | X]
inline Eigen::MatrixXd augment(const Eigen::MatrixXd& X) {
    Eigen::MatrixXd Xa(X.rows(), X.cols() + 1);
    Xa.col(0).setOnes();
    Xa.rightCols(X.cols()) = X;
    return Xa;
}

inline double log_likelihood(const Eigen::MatrixXd& Xa, const Eigen::VectorXd& y, const Eigen::VectorXd& theta) {
    const Eigen::VectorXd eta = Xa * theta;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) ll += y(i) * eta(i) - softplus(eta(i));
    return ll;
}

inline double penalized_objective(const Eigen::MatrixXd& Xa, const Eigen::VectorXd& y, double lambda,
                                  const Eigen::VectorXd& theta) {
    return log_likelihood(Xa, y, theta) - 0.5 * lambda * theta.tail(theta.size() - 1).squaredNorm();
}

inline Eigen::VectorXd penalized_gradient(const Eigen::MatrixXd& Xa, const Eigen::VectorXd& y, double lambda,
                                          const Eigen::VectorXd& theta) {
    const Eigen::VectorXd eta = Xa * theta;
    Eigen::VectorXd resid(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) resid(i) = y(i) - sigmoid(eta(i));
    Eigen::VectorXd g = Xa.transpose() * resid;
    g.tail(g.size() - 1) -= lambda * theta.tail(theta.size() - 1);
    return g;
}

namespace detail {

/// l(theta + step) - l(theta), evaluated term by term so that the result
/// keeps its sign even when the change is far below the rounding noise of
/// the objective itself. Uses softplus(e + d) - softplus(e) = log1p(sigma(e) expm1(d)).
inline double objective_change(const Eigen::VectorXd& eta, const Eigen::VectorXd& delta_eta,
                               const Eigen::VectorXd& y, double lambda, const Eigen::VectorXd& beta,
                               const Eigen::VectorXd& delta_beta) {
    double change = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
        const double d = delta_eta(i);
        double sp_change;
        if (std::fabs(d) < 1.0) {
            sp_change = std::log1p(sigmoid(eta(i)) * std::expm1(d));
        } else {
            sp_change = softplus(eta(i) + d) - softplus(eta(i));
        }
        change += y(i) * d - sp_change;
    }
    if (lambda > 0.0) change -= 0.5 * lambda * (2.0 * beta.dot(delta_beta) + delta_beta.squaredNorm());
    return change;
}

inline Eigen::VectorXd solve_newton(const Eigen::MatrixXd& H, const Eigen::VectorXd& g) {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
    if (ldlt.info() == Eigen::Success && ldlt.isPositive() && ldlt.rcond() > 1e-12) return ldlt.solve(g);
    // Rank-deficient information: minimum-norm step within the row space.
    return H.completeOrthogonalDecomposition().solve(g);
}

struct Standardization {
    Eigen::VectorXd center;
    Eigen::VectorXd scale;
};

inline Standardization column_moments(const Eigen::MatrixXd& X) {
    Standardization s;
    const double n = static_cast<double>(X.rows());
    s.center = X.colwise().mean().transpose();
    s.scale.resize(X.cols());
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
        const double ss = (X.col(j).array() - s.center(j)).square().sum();
        s.scale(j) = std::sqrt(ss / (n - 1.0));
        if (!(s.scale(j) > 0.0)) throw input_error("standardize: column " + std::to_string(j) + " has zero variance");
    }
    return s;
}

inline Eigen::MatrixXd apply_scaling(const LogisticModel& m, const Eigen::MatrixXd& X) {
    if (!m.center) return X;
    return (X.rowwise() - m.center->transpose()).array().rowwise() / m.scale->transpose().array();
}

}  // namespace detail

/// Maximum (penalized) likelihood by Newton steps with step halving. A step
/// is accepted only when the penalized objective does not decrease; after 30
/// halvings without such a step the fit stops. At lambda = 0 a separation
/// probe runs after the loop: if the objective keeps rising when the last step
/// direction is extended, the likelihood has no finite maximizer.
inline LogisticModel fit_irls(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const FitOptions& opt = {},
                              std::vector<std::string> column_ids = {}) {
    const Eigen::Index n = X.rows();
    const Eigen::Index d = X.cols();
    if (y.size() != n) throw input_error("fit_irls: X has " + std::to_string(n) + " rows but y has " + std::to_string(y.size()));
    if (n < 2) throw input_error("fit_irls: need at least 2 observations");
    if (!(opt.l2_lambda >= 0.0) || !std::isfinite(opt.l2_lambda)) throw input_error("fit_irls: lambda must be >= 0");
    if (opt.max_iter < 1) throw input_error("fit_irls: max_iter must be >= 1");
    if (!X.allFinite()) throw input_error("fit_irls: X contains NaN or infinite entries");
    double positives = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (y(i) != 0.0 && y(i) != 1.0) throw input_error("fit_irls: labels must be 0 or 1");
        positives += y(i);
    }
    if (positives == 0.0 || positives == static_cast<double>(n))
        throw input_error("fit_irls: labels contain a single class");
    if (column_ids.empty()) {
        for (Eigen::Index j = 0; j < d; ++j) column_ids.push_back("x" + std::to_string(j));
    }
    if (static_cast<Eigen::Index>(column_ids.size()) != d) throw input_error("fit_irls: column id count mismatch");

    LogisticModel model;
    model.column_ids = std::move(column_ids);
    model.l2_lambda = opt.l2_lambda;
    Eigen::MatrixXd Xs = X;
    if (opt.standardize) {
        auto s = detail::column_moments(X);
        model.center = s.center;
        model.scale = s.scale;
        Xs = detail::apply_scaling(model, X);
    }
    const Eigen::MatrixXd Xa = augment(Xs);
    const double lambda = opt.l2_lambda;

    Eigen::VectorXd theta = Eigen::VectorXd::Zero(d + 1);
    const double ybar = positives / static_cast<double>(n);
    theta(0) = std::log(ybar / (1.0 - ybar));

    Eigen::VectorXd eta = Xa * theta;
    double objective = penalized_objective(Xa, y, lambda, theta);
    if (!std::isfinite(objective)) throw input_error("fit_irls: non-finite log-likelihood");
    FitDiagnostics& diag = model.fit;
    diag.objective_trace.push_back(objective);

    Eigen::VectorXd last_step;
    Eigen::VectorXd p(n), w(n);
    Eigen::VectorXd grad;
    bool stalled = false;
    int iter = 0;
    for (;;) {
        for (Eigen::Index i = 0; i < n; ++i) {
            p(i) = sigmoid(eta(i));
            w(i) = p(i) * (1.0 - p(i));
        }
        grad = Xa.transpose() * (y - p);
        grad.tail(d) -= lambda * theta.tail(d);
        if (grad.lpNorm<Eigen::Infinity>() <= opt.tol || iter >= opt.max_iter || stalled) break;
        ++iter;

        Eigen::MatrixXd H = Xa.transpose() * w.asDiagonal() * Xa;
        H.diagonal().tail(d).array() += lambda;
        const Eigen::VectorXd step = detail::solve_newton(H, grad);
        const Eigen::VectorXd step_eta = Xa * step;

        double t = 1.0;
        bool accepted = false;
        for (int halving = 0; halving <= 30; ++halving, t *= 0.5) {
            const double change = detail::objective_change(eta, t * step_eta, y, lambda, theta.tail(d), t * step.tail(d));
            if (!std::isfinite(change)) continue;
            if (change >= 0.0) {
                theta += t * step;
                eta = Xa * theta;
                objective += change;
                diag.objective_trace.push_back(objective);
                last_step = t * step;
                accepted = true;
                break;
            }
        }
        if (!accepted) stalled = true;
    }

    diag.iterations = iter;
    diag.final_gradient_norm = grad.lpNorm<Eigen::Infinity>();
    diag.converged = diag.final_gradient_norm <= opt.tol;
    diag.log_likelihood = log_likelihood(Xa, y, theta);
    if (!std::isfinite(diag.log_likelihood)) throw input_error("fit_irls: non-finite log-likelihood");
    if (!theta.allFinite()) throw input_error("fit_irls: non-finite coefficients");
    if (stalled && !diag.converged) diag.advisory = "line search stalled before the gradient tolerance was reached";
    else if (!diag.converged) diag.advisory = "iteration limit reached";

    if (lambda == 0.0 && last_step.size() > 0 && last_step.norm() > 0.0) {
        const Eigen::VectorXd probe = 10.0 * last_step / last_step.norm();
        const double change =
            detail::objective_change(eta, Xa * probe, y, 0.0, theta.tail(d), probe.tail(d));
        if (change >= 0.0) {
            diag.separation_detected = true;
            diag.converged = false;
            diag.advisory =
                "quasi-complete separation: the likelihood increases without bound along the fitted direction; "
                "estimates are not finite (consider an L2 penalty)";
        }
    }

    model.intercept = theta(0);
    model.coefficients = theta.tail(d);
    return model;
}

inline Eigen::VectorXd predict_proba(const LogisticModel& model, const Eigen::MatrixXd& X) {
    if (X.cols() != model.dim()) {
        throw input_error("predict_proba: X has " + std::to_string(X.cols()) + " columns, model expects " +
                          std::to_string(model.dim()));
    }
    const Eigen::VectorXd eta =
        (detail::apply_scaling(model, X) * model.coefficients).array() + model.intercept;
    return eta.unaryExpr([](double v) { return sigmoid(v); });
}

/// sqrt(diag((Xa' W Xa)^-1)) at the fitted probabilities, intercept first.
inline Eigen::VectorXd standard_errors(const LogisticModel& model, const Eigen::MatrixXd& X) {
    if (model.l2_lambda != 0.0) throw input_error("standard_errors: undefined for a penalized fit");
    if (!model.fit.converged) throw input_error("standard_errors: model did not converge");
    if (X.cols() != model.dim()) throw input_error("standard_errors: column count mismatch");
    const Eigen::MatrixXd Xa = augment(detail::apply_scaling(model, X));
    const Eigen::VectorXd eta = Xa * model.theta();
    Eigen::VectorXd w(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
        const double p = sigmoid(eta(i));
        w(i) = p * (1.0 - p);
    }
    const Eigen::MatrixXd info = Xa.transpose() * w.asDiagonal() * Xa;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    const double rcond = ldlt.info() == Eigen::Success ? ldlt.rcond() : 0.0;
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || !(rcond > 1e-12)) {
        throw singular_matrix_error(
            "standard_errors: information matrix is singular (reciprocal condition estimate " + std::to_string(rcond) +
                "); check for collinear or constant columns",
            rcond);
    }
    const Eigen::MatrixXd cov = ldlt.solve(Eigen::MatrixXd::Identity(info.rows(), info.cols()));
    Eigen::VectorXd se = cov.diagonal().cwiseSqrt();
    if (!se.allFinite() || (se.array() <= 0.0).any())
        throw singular_matrix_error("standard_errors: non-positive variance estimate", rcond);
    return se;
}

struct WaldStat {
    double wald_chi2 = 0.0;
    double p_value = 1.0;
};

/// Per-parameter Wald chi-square with 1 df, intercept first.
inline std::vector<WaldStat> wald_stats(const LogisticModel& model) {
    if (!model.standard_errors) throw input_error("wald_stats: model has no standard errors");
    const Eigen::VectorXd theta = model.theta();
    const Eigen::VectorXd& se = *model.standard_errors;
    std::vector<WaldStat> out;
    for (Eigen::Index j = 0; j < theta.size(); ++j) {
        const double z = theta(j) / se(j);
        const double w = z * z;
        out.push_back(WaldStat{w, dist::chi2_1_sf(w)});
    }
    return out;
}

/// Fit, then attach standard errors when they are defined (unpenalized,
/// converged). Singular information propagates as singular_matrix_error.
inline LogisticModel fit_with_inference(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const FitOptions& opt,
                                        std::vector<std::string> column_ids = {}) {
    LogisticModel m = fit_irls(X, y, opt, std::move(column_ids));
    if (opt.l2_lambda == 0.0 && m.fit.converged) m.standard_errors = standard_errors(m, X);
    return m;
}

/// Stable-order JSON dump of a fitted model.
inline void write_model_json(std::ostream& out, const LogisticModel& m) {
    nlohmann::ordered_json j;
    j["intercept"] = m.intercept;
    nlohmann::ordered_json coef = nlohmann::ordered_json::object();
    for (Eigen::Index k = 0; k < m.dim(); ++k) coef[m.column_ids[static_cast<std::size_t>(k)]] = m.coefficients(k);
    j["coefficients"] = coef;
    if (m.standard_errors) {
        nlohmann::ordered_json se = nlohmann::ordered_json::object();
        se["(intercept)"] = (*m.standard_errors)(0);
        for (Eigen::Index k = 0; k < m.dim(); ++k)
            se[m.column_ids[static_cast<std::size_t>(k)]] = (*m.standard_errors)(k + 1);
        j["standard_errors"] = se;
    } else {
        j["standard_errors"] = nullptr;
    }
    j["l2_lambda"] = m.l2_lambda;
    j["standardized"] = m.center.has_value();
    nlohmann::ordered_json fit;
    fit["converged"] = m.fit.converged;
    fit["iterations"] = m.fit.iterations;
    fit["final_gradient_norm"] = m.fit.final_gradient_norm;
    fit["log_likelihood"] = m.fit.log_likelihood;
    fit["separation_detected"] = m.fit.separation_detected;
    fit["advisory"] = m.fit.advisory;
    j["fit"] = fit;
    out << j.dump(2) << '\n';
}

}  // namespace vizrisk::glm
