#pragma once

// Ratio transforms r(pi) and CDF families F: the two link ingredients of an
// (r, F, Z) categorical GLM, where r(pi) = F(Z beta) componentwise.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <string_view>

#include "pcglm/errors.hpp"
#include "pcglm/special_functions.hpp"

namespace pcglm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// ---------------------------------------------------------------------------
// Probability vectors

/// Category probabilities pi_1..pi_J. Validation is explicit: model
/// predictions may legitimately reach the simplex boundary (closed-form
/// minimal-response nodes with empty children) while the ratio transforms
/// require the open simplex.
struct ProbabilityVector {
    Vector probs;

    ProbabilityVector() = default;
    explicit ProbabilityVector(Vector p) : probs(std::move(p)) {}

    [[nodiscard]] Eigen::Index size() const { return probs.size(); }
    double operator[](Eigen::Index j) const { return probs[j]; }

    /// Throws DomainError naming the first offending index.
    void validate() const {
        if (probs.size() < 2) throw DomainError("probability vector needs J >= 2 entries");
        for (Eigen::Index j = 0; j < probs.size(); ++j) {
            if (!(probs[j] > 0.0 && probs[j] < 1.0))
                throw DomainError("degenerate probability at index " + std::to_string(j) +
                                  ": " + std::to_string(probs[j]));
        }
        if (std::fabs(probs.sum() - 1.0) > 1e-12)
            throw DomainError("probabilities do not sum to 1 (sum = " +
                              std::to_string(probs.sum()) + ")");
    }
};

// ---------------------------------------------------------------------------
// Ratios

enum class RatioKind { Reference, Adjacent, Sequential, Cumulative };

inline constexpr std::array kAllRatios = {RatioKind::Reference, RatioKind::Adjacent,
                                          RatioKind::Sequential, RatioKind::Cumulative};

/// Reference is meant for nominal responses; the others assume an order.
constexpr bool respects_order(RatioKind k) { return k != RatioKind::Reference; }

inline std::string_view to_string(RatioKind k) {
    switch (k) {
    case RatioKind::Reference: return "reference";
    case RatioKind::Adjacent: return "adjacent";
    case RatioKind::Sequential: return "sequential";
    case RatioKind::Cumulative: return "cumulative";
    }
    return "?";
}

inline RatioKind parse_ratio(std::string_view s) {
    for (auto k : kAllRatios)
        if (to_string(k) == s) return k;
    throw SpecError("unknown ratio '" + std::string(s) + "'");
}

/// r(pi) for a full J-vector pi; returns the J-1 ratio values.
inline Vector ratio_forward(const ProbabilityVector& pi, RatioKind kind) {
    pi.validate();
    const auto& p = pi.probs;
    const Eigen::Index m = p.size() - 1;
    Vector r(m);
    switch (kind) {
    case RatioKind::Reference:
        for (Eigen::Index j = 0; j < m; ++j) r[j] = p[j] / (p[j] + p[m]);
        break;
    case RatioKind::Adjacent:
        for (Eigen::Index j = 0; j < m; ++j) r[j] = p[j] / (p[j] + p[j + 1]);
        break;
    case RatioKind::Sequential: {
        double tail = p[m];
        Vector t(m);
        for (Eigen::Index j = m - 1; j >= 0; --j) {
            tail += p[j];
            t[j] = tail;
        }
        for (Eigen::Index j = 0; j < m; ++j) r[j] = p[j] / t[j];
        break;
    }
    case RatioKind::Cumulative: {
        double acc = 0.0;
        for (Eigen::Index j = 0; j < m; ++j) {
            acc += p[j];
            r[j] = acc;
        }
        break;
    }
    }
    return r;
}

/// Inverse ratio given r and its complement 1 - r supplied separately, so a
/// caller holding an accurate survival function F(-eta) loses no precision
/// when r is close to 1. Entries may reach the simplex boundary in extreme
/// cases; no validation is performed on the output.
inline Vector ratio_inverse_pair(const Vector& r, const Vector& rbar, RatioKind kind) {
    const Eigen::Index m = r.size();
    Vector p(m + 1);
    switch (kind) {
    case RatioKind::Reference: {
        // pi_j / pi_J = r_j / (1 - r_j)
        Vector log_odds(m + 1);
        for (Eigen::Index j = 0; j < m; ++j) log_odds[j] = std::log(r[j]) - std::log(rbar[j]);
        log_odds[m] = 0.0;
        const double mx = log_odds.maxCoeff();
        p = (log_odds.array() - mx).exp();
        p /= p.sum();
        break;
    }
    case RatioKind::Adjacent: {
        // log pi_j - log pi_J = sum_{k >= j} log(r_k / (1 - r_k))
        Vector lp(m + 1);
        lp[m] = 0.0;
        for (Eigen::Index j = m - 1; j >= 0; --j)
            lp[j] = lp[j + 1] + std::log(r[j]) - std::log(rbar[j]);
        const double mx = lp.maxCoeff();
        p = (lp.array() - mx).exp();
        p /= p.sum();
        break;
    }
    case RatioKind::Sequential: {
        double survive = 1.0;
        for (Eigen::Index j = 0; j < m; ++j) {
            p[j] = r[j] * survive;
            survive *= rbar[j];
        }
        p[m] = survive;
        break;
    }
    case RatioKind::Cumulative: {
        for (Eigen::Index j = 0; j < m; ++j) {
            if (j > 0 && !(r[j] > r[j - 1]))
                throw DomainError("cumulative ratio not strictly increasing at index " +
                                  std::to_string(j));
            p[j] = (j == 0) ? r[0] : r[j] - r[j - 1];
        }
        p[m] = rbar[m - 1];
        break;
    }
    }
    return p;
}

/// r^{-1}(v). Inputs must be in (0,1) and, for the cumulative ratio, strictly
/// increasing.
inline ProbabilityVector ratio_inverse(const Vector& v, RatioKind kind) {
    if (v.size() < 1) throw DomainError("ratio vector must have J-1 >= 1 entries");
    for (Eigen::Index j = 0; j < v.size(); ++j)
        if (!(v[j] > 0.0 && v[j] < 1.0))
            throw DomainError("ratio value outside (0,1) at index " + std::to_string(j));
    const Vector rbar = (1.0 - v.array()).matrix();
    return ProbabilityVector(ratio_inverse_pair(v, rbar, kind));
}

namespace detail {

/// Jacobian without validation; p must be strictly positive.
inline Matrix ratio_jacobian_unchecked(const Vector& p, RatioKind kind) {
    const Eigen::Index m = p.size() - 1;
    Matrix jac = Matrix::Zero(m, m);
    switch (kind) {
    case RatioKind::Reference:
        // pi_i = o_i pi_J, o_j = r_j/(1-r_j), 1 - r_j = pi_J/(pi_j + pi_J)
        for (Eigen::Index j = 0; j < m; ++j) {
            const double s = (p[j] + p[m]) * (p[j] + p[m]) / p[m];
            for (Eigen::Index i = 0; i < m; ++i) jac(i, j) = ((i == j ? 1.0 : 0.0) - p[i]) * s;
        }
        break;
    case RatioKind::Adjacent: {
        double cum = 0.0;
        for (Eigen::Index j = 0; j < m; ++j) {
            cum += p[j];
            const double pair = p[j] + p[j + 1];
            const double scale = pair * pair / (p[j] * p[j + 1]); // 1 / (r_j (1 - r_j))
            for (Eigen::Index i = 0; i < m; ++i)
                jac(i, j) = p[i] * ((i <= j ? 1.0 : 0.0) - cum) * scale;
        }
        break;
    }
    case RatioKind::Sequential: {
        Vector tail(m + 1);
        tail[m] = p[m];
        for (Eigen::Index j = m - 1; j >= 0; --j) tail[j] = tail[j + 1] + p[j];
        for (Eigen::Index i = 0; i < m; ++i) {
            jac(i, i) = tail[i];
            for (Eigen::Index j = 0; j < i; ++j) jac(i, j) = -p[i] * tail[j] / tail[j + 1];
        }
        break;
    }
    case RatioKind::Cumulative:
        for (Eigen::Index i = 0; i < m; ++i) {
            jac(i, i) = 1.0;
            if (i > 0) jac(i, i - 1) = -1.0;
        }
        break;
    }
    return jac;
}

} // namespace detail

/// d pi / d r at r(pi): entry (i, j) is d pi_i / d r_j for i, j < J.
inline Matrix ratio_jacobian(const ProbabilityVector& pi, RatioKind kind) {
    pi.validate();
    return detail::ratio_jacobian_unchecked(pi.probs, kind);
}

// ---------------------------------------------------------------------------
// CDF families

enum class CdfFamily { Logistic, Normal, Laplace, Student, GumbelMin, GumbelMax };

inline constexpr std::array kAllCdfFamilies = {CdfFamily::Logistic, CdfFamily::Normal,
                                               CdfFamily::Laplace,  CdfFamily::Student,
                                               CdfFamily::GumbelMin, CdfFamily::GumbelMax};

inline std::string_view to_string(CdfFamily f) {
    switch (f) {
    case CdfFamily::Logistic: return "logistic";
    case CdfFamily::Normal: return "normal";
    case CdfFamily::Laplace: return "laplace";
    case CdfFamily::Student: return "student";
    case CdfFamily::GumbelMin: return "gumbel_min";
    case CdfFamily::GumbelMax: return "gumbel_max";
    }
    return "?";
}

inline CdfFamily parse_cdf_family(std::string_view s) {
    for (auto f : kAllCdfFamilies)
        if (to_string(f) == s) return f;
    throw SpecError("unknown cdf '" + std::string(s) + "'");
}

/// A CDF family plus, for Student, its integer degrees of freedom.
class CdfKind {
public:
    CdfKind() = default;
    explicit CdfKind(CdfFamily family, int df = 0) : family_(family), df_(df) {
        if (family == CdfFamily::Student) {
            if (df_ == 0) df_ = 1;
            if (df_ < 1) throw SpecError("student cdf needs df >= 1");
        } else if (df != 0) {
            throw SpecError("degrees of freedom only apply to the student cdf");
        }
    }

    static CdfKind logistic() { return CdfKind(CdfFamily::Logistic); }
    static CdfKind normal() { return CdfKind(CdfFamily::Normal); }
    static CdfKind laplace() { return CdfKind(CdfFamily::Laplace); }
    static CdfKind student(int df) { return CdfKind(CdfFamily::Student, df); }
    static CdfKind gumbel_min() { return CdfKind(CdfFamily::GumbelMin); }
    static CdfKind gumbel_max() { return CdfKind(CdfFamily::GumbelMax); }

    [[nodiscard]] CdfFamily family() const { return family_; }
    [[nodiscard]] int df() const { return df_; }

    [[nodiscard]] std::string name() const {
        std::string s(to_string(family_));
        if (family_ == CdfFamily::Student) s += "(" + std::to_string(df_) + ")";
        return s;
    }

    friend bool operator==(const CdfKind&, const CdfKind&) = default;

    [[nodiscard]] double cdf(double x) const {
        switch (family_) {
        case CdfFamily::Logistic: return 1.0 / (1.0 + std::exp(-x));
        case CdfFamily::Normal: return special::normal_cdf(x);
        case CdfFamily::Laplace: return x < 0.0 ? 0.5 * std::exp(x) : 1.0 - 0.5 * std::exp(-x);
        case CdfFamily::Student: return student_cdf(x);
        case CdfFamily::GumbelMin: return -std::expm1(-std::exp(x));
        case CdfFamily::GumbelMax: return std::exp(-std::exp(-x));
        }
        return 0.0;
    }

    /// 1 - F(x), evaluated without cancellation.
    [[nodiscard]] double survival(double x) const {
        switch (family_) {
        case CdfFamily::Logistic: return 1.0 / (1.0 + std::exp(x));
        case CdfFamily::Normal: return special::normal_cdf(-x);
        case CdfFamily::Laplace: return x > 0.0 ? 0.5 * std::exp(-x) : 1.0 - 0.5 * std::exp(x);
        case CdfFamily::Student: return student_cdf(-x);
        case CdfFamily::GumbelMin: return std::exp(-std::exp(x));
        case CdfFamily::GumbelMax: return -std::expm1(-std::exp(-x));
        }
        return 0.0;
    }

    [[nodiscard]] double density(double x) const {
        switch (family_) {
        case CdfFamily::Logistic: {
            const double e = std::exp(-std::fabs(x));
            return e / ((1.0 + e) * (1.0 + e));
        }
        case CdfFamily::Normal: return special::normal_pdf(x);
        case CdfFamily::Laplace: return 0.5 * std::exp(-std::fabs(x));
        case CdfFamily::Student: {
            const double nu = df_;
            const double log_c = std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) -
                                 0.5 * std::log(nu * std::numbers::pi);
            return std::exp(log_c - 0.5 * (nu + 1.0) * std::log1p(x * x / nu));
        }
        case CdfFamily::GumbelMin: return std::exp(x - std::exp(x));
        case CdfFamily::GumbelMax: return std::exp(-x - std::exp(-x));
        }
        return 0.0;
    }

    [[nodiscard]] double quantile(double p) const {
        if (!(p > 0.0 && p < 1.0))
            throw DomainError("quantile: p must lie in (0, 1), got " + std::to_string(p));
        switch (family_) {
        case CdfFamily::Logistic: return std::log(p) - std::log1p(-p);
        case CdfFamily::Normal: return special::normal_quantile(p);
        case CdfFamily::Laplace: return p < 0.5 ? std::log(2.0 * p) : -std::log(2.0 * (1.0 - p));
        case CdfFamily::Student: return student_quantile(p);
        case CdfFamily::GumbelMin: return std::log(-std::log1p(-p));
        case CdfFamily::GumbelMax: return -std::log(-std::log(p));
        }
        return 0.0;
    }

private:
    [[nodiscard]] double student_cdf(double t) const {
        const double nu = df_;
        const double tail = 0.5 * special::incomplete_beta(0.5 * nu, 0.5, nu / (nu + t * t));
        return t > 0.0 ? 1.0 - tail : tail;
    }

    [[nodiscard]] double student_quantile(double p) const {
        if (p > 0.5) return -student_quantile(1.0 - p);
        if (p == 0.5) return 0.0;
        if (df_ == 1) return std::tan(std::numbers::pi * (p - 0.5));
        if (df_ == 2) return (2.0 * p - 1.0) / std::sqrt(2.0 * p * (1.0 - p));
        // Lower tail: safeguarded Newton on [lo, 0].
        double hi = 0.0;
        double lo = -1.0;
        while (student_cdf(lo) > p) lo *= 2.0;
        double x = std::clamp(special::normal_quantile(p), lo, hi);
        for (int it = 0; it < 200; ++it) {
            const double f = student_cdf(x) - p;
            if (f > 0.0) hi = x; else lo = x;
            double next = x - f / density(x);
            if (!(next > lo && next < hi) || !std::isfinite(next)) next = 0.5 * (lo + hi);
            if (std::fabs(next - x) <= 1e-15 * std::max(1.0, std::fabs(x))) return next;
            x = next;
        }
        return x;
    }

    CdfFamily family_ = CdfFamily::Logistic;
    int df_ = 0;
};

} // namespace pcglm
