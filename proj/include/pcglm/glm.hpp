#pragma once

// A single (r, F, Z) categorical GLM: r(pi) = F(Z(x) beta).
//
// The score is assembled as
//     dl/dbeta = sum_i w_i Z_i^t diag(f(eta_i)) (dpi/dr)^t Cov(Y|x_i)^{-1} (y_i - pi_i)
// and the expected information replaces the residual outer product by
// Cov(Y|x_i), giving the Fisher scoring step I(beta)^{-1} score(beta).

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "pcglm/dataset.hpp"
#include "pcglm/design.hpp"
#include "pcglm/errors.hpp"
#include "pcglm/link_functions.hpp"

namespace pcglm {

/// Floor applied to pi_y inside log-likelihood evaluation only.
inline constexpr double kProbabilityFloor = 1e-12;

struct GlmSpec {
    RatioKind ratio = RatioKind::Reference;
    CdfKind cdf;
    DesignSpec design;
    int J = 2;

    [[nodiscard]] int columns() const { return design.columns(J); }

    [[nodiscard]] std::string describe() const {
        return "(" + std::string(to_string(ratio)) + ", " + cdf.name() + ", " +
               std::string(to_string(design.kind)) + ")";
    }

    friend bool operator==(const GlmSpec&, const GlmSpec&) = default;
};

struct FitOptions {
    int max_iter = 100;
    double grad_tol = 1e-6;
    double ll_tol = 1e-10;
    int max_halvings = 20;
    std::optional<ParameterVector> start;
};

struct FitResult {
    ParameterVector beta;
    double log_likelihood = 0.0;
    int iterations = 0;
    bool converged = false;
    Matrix fisher_information;
    Vector standard_errors;
    double score_norm = 0.0;
    bool ridge_used = false;
    std::vector<std::string> diagnostics;
};

namespace detail {

/// Probabilities from the linear predictor; no validation beyond the
/// cumulative ordering.
inline Vector probs_from_eta(const GlmSpec& spec, const Vector& eta) {
    const Eigen::Index m = eta.size();
    if (spec.ratio == RatioKind::Cumulative) {
        for (Eigen::Index j = 1; j < m; ++j)
            if (!(eta[j] > eta[j - 1]))
                throw PredictionDomainError("cumulative predictors not strictly increasing (eta_" +
                                            std::to_string(j) + " <= eta_" +
                                            std::to_string(j - 1) + ")");
    }
    if (spec.ratio == RatioKind::Reference && spec.cdf.family() == CdfFamily::Logistic) {
        // log(F/(1-F)) = eta exactly for the canonical link.
        Vector lp(m + 1);
        lp.head(m) = eta;
        lp[m] = 0.0;
        const double mx = lp.maxCoeff();
        Vector p = (lp.array() - mx).exp();
        return p / p.sum();
    }
    Vector r(m), rbar(m);
    for (Eigen::Index j = 0; j < m; ++j) {
        r[j] = spec.cdf.cdf(eta[j]);
        rbar[j] = spec.cdf.survival(eta[j]);
    }
    try {
        return ratio_inverse_pair(r, rbar, spec.ratio);
    } catch (const DomainError& e) {
        throw PredictionDomainError(e.what());
    }
}

struct PreparedData {
    std::vector<Matrix> z;
    std::vector<int> y;
    std::vector<double> w;
};

inline PreparedData prepare(const GlmSpec& spec, const CategoricalDataset& data) {
    PreparedData out;
    out.z.reserve(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& row = data.rows[i];
        if (row.response < 0 || row.response >= spec.J)
            throw SpecError("row " + std::to_string(i) + ": response outside 0..J-1");
        out.z.push_back(build_design(row.x, spec.design, spec.J));
        out.y.push_back(row.response);
        out.w.push_back(row.weight);
    }
    return out;
}

inline double log_likelihood(const GlmSpec& spec, const ParameterVector& beta,
                             const PreparedData& d) {
    double ll = 0.0;
    for (std::size_t i = 0; i < d.z.size(); ++i) {
        Vector p;
        try {
            p = probs_from_eta(spec, linear_predictor(d.z[i], beta));
        } catch (const PredictionDomainError& e) {
            throw PredictionDomainError("row " + std::to_string(i) + ": " + e.what());
        }
        ll += d.w[i] * std::log(std::max(p[d.y[i]], kProbabilityFloor));
    }
    return ll;
}

/// Accumulates score and expected information in one pass.
inline void score_and_information(const GlmSpec& spec, const ParameterVector& beta,
                                  const PreparedData& d, Vector* score, Matrix* info) {
    const Eigen::Index k = beta.size();
    const Eigen::Index m = spec.J - 1;
    if (score) *score = Vector::Zero(k);
    if (info) *info = Matrix::Zero(k, k);
    Matrix w_mat(m, m);
    Vector g(m);
    for (std::size_t i = 0; i < d.z.size(); ++i) {
        const Vector eta = linear_predictor(d.z[i], beta);
        Vector p;
        try {
            p = probs_from_eta(spec, eta);
        } catch (const PredictionDomainError& e) {
            throw PredictionDomainError("row " + std::to_string(i) + ": " + e.what());
        }
        for (Eigen::Index j = 0; j <= m; ++j)
            if (!(p[j] > 0.0))
                throw NumericalError("row " + std::to_string(i) +
                                     ": singular Cov(Y|x), category " + std::to_string(j) +
                                     " has probability 0");
        const Matrix jac = pcglm::detail::ratio_jacobian_unchecked(p, spec.ratio);
        // W = diag(f(eta)) (dpi/dr)^t
        for (Eigen::Index r = 0; r < m; ++r) {
            const double f = spec.cdf.density(eta[r]);
            for (Eigen::Index c = 0; c < m; ++c) w_mat(r, c) = f * jac(c, r);
        }
        const Matrix zw = d.z[i].transpose() * w_mat; // k x m
        if (score) {
            // Cov^{-1}(y - pi) reduces to y_j/pi_j - y_J/pi_J.
            g.setZero();
            if (d.y[i] < m) g[d.y[i]] = 1.0 / p[d.y[i]];
            else g.array() -= 1.0 / p[m];
            score->noalias() += d.w[i] * (zw * g);
        }
        if (info) {
            Matrix cinv = (1.0 / p[m]) * Matrix::Ones(m, m);
            cinv.diagonal().array() += 1.0 / p.head(m).array();
            info->noalias() += d.w[i] * (zw * cinv * zw.transpose());
        }
    }
}

inline Vector initial_beta(const GlmSpec& spec, const CategoricalDataset& data) {
    std::vector<double> counts = data.response_counts();
    double n = 0.0;
    bool any_zero = false;
    for (double c : counts) {
        n += c;
        any_zero = any_zero || !(c > 0.0);
    }
    Vector pi(spec.J);
    for (int j = 0; j < spec.J; ++j)
        pi[j] = any_zero ? (counts[static_cast<std::size_t>(j)] + 0.5) / (n + 0.5 * spec.J)
                         : counts[static_cast<std::size_t>(j)] / n;
    const Vector r = ratio_forward(ProbabilityVector(pi), spec.ratio);
    Vector beta = Vector::Zero(spec.columns());
    for (int j = 0; j < spec.J - 1; ++j) beta[j] = spec.cdf.quantile(r[j]);
    return beta;
}

inline double inf_norm(const Vector& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

} // namespace detail

/// pi = r^{-1}(F(Z(x) beta)).
inline ProbabilityVector predict_probs(const GlmSpec& spec, const ParameterVector& beta,
                                       const CovariateRow& x) {
    const Vector eta = linear_predictor(build_design(x, spec.design, spec.J), beta);
    return ProbabilityVector(detail::probs_from_eta(spec, eta));
}

/// sum_i w_i log pi_{y_i}(x_i), with pi floored at 1e-12.
inline double log_likelihood(const GlmSpec& spec, const ParameterVector& beta,
                             const CategoricalDataset& data) {
    return detail::log_likelihood(spec, beta, detail::prepare(spec, data));
}

inline Vector score(const GlmSpec& spec, const ParameterVector& beta,
                    const CategoricalDataset& data) {
    Vector s;
    detail::score_and_information(spec, beta, detail::prepare(spec, data), &s, nullptr);
    return s;
}

inline Matrix fisher_info(const GlmSpec& spec, const ParameterVector& beta,
                          const CategoricalDataset& data) {
    Matrix info;
    detail::score_and_information(spec, beta, detail::prepare(spec, data), nullptr, &info);
    return info;
}

/// Fisher scoring with step halving. Non-convergence is reported through
/// FitResult::converged; a rank-deficient information matrix at the start
/// raises IdentifiabilityError.
inline FitResult fit(const GlmSpec& spec, const CategoricalDataset& data,
                     const FitOptions& options = {}) {
    if (data.empty()) throw SpecError("cannot fit a GLM on an empty dataset");
    const int width = static_cast<int>(data.rows.front().x.values.size());
    spec.design.validate(spec.J, spec.design.kind == DesignKind::ConditionalNestedRoot
                                     ? static_cast<int>(data.rows.front().x.alternatives.cols())
                                     : width);
    const detail::PreparedData prepared = detail::prepare(spec, data);

    FitResult res;
    Vector beta = options.start ? *options.start : detail::initial_beta(spec, data);
    if (beta.size() != spec.columns())
        throw SpecError("start vector has " + std::to_string(beta.size()) + " entries, design has " +
                        std::to_string(spec.columns()) + " columns");

    Vector s;
    Matrix info;
    detail::score_and_information(spec, beta, prepared, &s, &info);
    {
        Eigen::SelfAdjointEigenSolver<Matrix> eig(info, Eigen::EigenvaluesOnly);
        const double top = eig.eigenvalues().cwiseAbs().maxCoeff();
        if (!(eig.eigenvalues().minCoeff() > 1e-12 * std::max(top, 1e-300)))
            throw IdentifiabilityError("information matrix is rank deficient at the start of " +
                                       spec.describe() + " (separation or unidentified column)");
    }
    double ll = detail::log_likelihood(spec, beta, prepared);

    int stalled = 0;
    for (int iter = 0; iter < options.max_iter; ++iter) {
        if (detail::inf_norm(s) < options.grad_tol) {
            res.converged = true;
            break;
        }
        Eigen::LLT<Matrix> llt(info);
        if (llt.info() != Eigen::Success) {
            const double ridge = 1e-10 * info.trace() / static_cast<double>(info.rows());
            Matrix ridged = info;
            ridged.diagonal().array() += ridge;
            llt.compute(ridged);
            res.ridge_used = true;
            res.diagnostics.push_back("ridge " + std::to_string(ridge) + " added at iteration " +
                                      std::to_string(iter));
            if (llt.info() != Eigen::Success) {
                res.diagnostics.push_back("information matrix not positive definite");
                break;
            }
        }
        const Vector step = llt.solve(s);
        double t = 1.0;
        bool accepted = false;
        bool domain_failure = false;
        Vector candidate;
        double ll_candidate = 0.0;
        for (int h = 0; h <= options.max_halvings; ++h, t *= 0.5) {
            candidate = beta + t * step;
            try {
                ll_candidate = detail::log_likelihood(spec, candidate, prepared);
            } catch (const PredictionDomainError&) {
                domain_failure = true;
                continue;
            }
            // Near the optimum the change falls below rounding noise in the sum.
            if (ll_candidate >= ll - 64 * std::numeric_limits<double>::epsilon() * std::fabs(ll)) {
                accepted = true;
                break;
            }
        }
        res.iterations = iter + 1;
        if (!accepted) {
            res.diagnostics.push_back(domain_failure
                                          ? "step halving failed: cumulative constraint violated"
                                          : "step halving failed to increase the log-likelihood");
            break;
        }
        const double change = std::fabs(ll_candidate - ll) / std::max(std::fabs(ll), 1e-300);
        const double previous_norm = detail::inf_norm(s);
        beta = candidate;
        ll = ll_candidate;
        try {
            detail::score_and_information(spec, beta, prepared, &s, &info);
        } catch (const NumericalError& e) {
            res.diagnostics.push_back(e.what());
            break;
        }
        if (detail::inf_norm(s) < options.grad_tol) {
            res.converged = true;
            break;
        }
        // A flat log-likelihood with a score that stops shrinking ends the
        // iterations; convergence still requires the gradient criterion.
        stalled = change < options.ll_tol && detail::inf_norm(s) > 0.5 * previous_norm ? stalled + 1 : 0;
        if (stalled >= 3) {
            res.diagnostics.push_back("log-likelihood stalled with score norm " +
                                      std::to_string(detail::inf_norm(s)));
            break;
        }
    }
    if (!res.converged && res.iterations >= options.max_iter)
        res.diagnostics.push_back("iteration limit reached");

    res.beta = beta;
    res.log_likelihood = ll;
    res.score_norm = detail::inf_norm(s);
    res.fisher_information = info;
    Eigen::LDLT<Matrix> ldlt(info);
    if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
        const Matrix inv = ldlt.solve(Matrix::Identity(info.rows(), info.cols()));
        res.standard_errors = inv.diagonal().cwiseMax(0.0).cwiseSqrt();
    } else {
        res.standard_errors = Vector::Constant(info.rows(), std::numeric_limits<double>::quiet_NaN());
    }
    return res;
}

} // namespace pcglm
