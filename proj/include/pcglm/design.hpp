#pragma once

// Design matrices Z(x) mapping a parameter vector beta to the J-1 linear
// predictors eta = Z beta. Every design starts with a (J-1) identity block of
// intercepts; the slope layout is what distinguishes the kinds.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "pcglm/dataset.hpp"
#include "pcglm/errors.hpp"

namespace pcglm {

using ParameterVector = Eigen::VectorXd;

enum class DesignKind { Complete, Proportional, BlockSplit, NestedRoot, ConditionalNestedRoot };

inline std::string_view to_string(DesignKind k) {
    switch (k) {
    case DesignKind::Complete: return "complete";
    case DesignKind::Proportional: return "proportional";
    case DesignKind::BlockSplit: return "block_split";
    case DesignKind::NestedRoot: return "nested_root";
    case DesignKind::ConditionalNestedRoot: return "conditional_nested_root";
    }
    return "?";
}

inline DesignKind parse_design_kind(std::string_view s) {
    for (auto k : {DesignKind::Complete, DesignKind::Proportional, DesignKind::BlockSplit,
                   DesignKind::NestedRoot, DesignKind::ConditionalNestedRoot})
        if (to_string(k) == s) return k;
    throw SpecError("unknown design '" + std::string(s) + "'");
}

struct DesignSpec {
    DesignKind kind = DesignKind::Complete;
    /// BlockSplit: ascending 1-based split points. Equations 1..s_1 share the
    /// first slope block, s_1+1..s_2 the second, and equations after the last
    /// split carry no slope columns.
    std::vector<int> splits;
    /// Columns of CovariateRow::values entering the slopes. For
    /// ConditionalNestedRoot they index columns of CovariateRow::alternatives.
    std::vector<int> variables;
    /// Nested roots: column of CovariateRow::values holding IV_l for
    /// l = 1..L-1; -1 drops the lambda column of that nest.
    std::vector<int> iv_columns;

    static DesignSpec complete(std::vector<int> vars = {}) {
        return {DesignKind::Complete, {}, std::move(vars), {}};
    }
    static DesignSpec proportional(std::vector<int> vars = {}) {
        return {DesignKind::Proportional, {}, std::move(vars), {}};
    }
    static DesignSpec block_split(std::vector<int> splits, std::vector<int> vars = {}) {
        return {DesignKind::BlockSplit, std::move(splits), std::move(vars), {}};
    }
    static DesignSpec nested_root(std::vector<int> iv_cols, std::vector<int> vars = {}) {
        return {DesignKind::NestedRoot, {}, std::move(vars), std::move(iv_cols)};
    }
    static DesignSpec conditional_nested_root(std::vector<int> iv_cols, std::vector<int> attrs = {}) {
        return {DesignKind::ConditionalNestedRoot, {}, std::move(attrs), std::move(iv_cols)};
    }

    [[nodiscard]] bool intercept_only() const {
        return variables.empty() &&
               std::all_of(iv_columns.begin(), iv_columns.end(), [](int c) { return c < 0; });
    }

    [[nodiscard]] int active_iv_columns() const {
        return static_cast<int>(std::count_if(iv_columns.begin(), iv_columns.end(),
                                              [](int c) { return c >= 0; }));
    }

    /// Number of columns of Z for J categories.
    [[nodiscard]] int columns(int J) const {
        const int m = J - 1;
        const int p = static_cast<int>(variables.size());
        switch (kind) {
        case DesignKind::Complete: return m * (1 + p);
        case DesignKind::Proportional: return m + p;
        case DesignKind::BlockSplit: return m + static_cast<int>(splits.size()) * p;
        case DesignKind::NestedRoot: return m * (1 + p) + active_iv_columns();
        case DesignKind::ConditionalNestedRoot: return m + p + active_iv_columns();
        }
        return 0;
    }

    /// `p` is the covariate width (values, or alternative attributes for the
    /// conditional root).
    void validate(int J, int p) const {
        if (J < 2) throw SpecError("design needs J >= 2");
        std::set<int> seen;
        for (int v : variables) {
            if (v < 0 || v >= p)
                throw SpecError("design variable index " + std::to_string(v) + " out of range");
            if (!seen.insert(v).second)
                throw SpecError("design variable index " + std::to_string(v) + " repeated");
        }
        if (kind == DesignKind::BlockSplit) {
            int prev = 0;
            for (int s : splits) {
                if (s <= prev) throw SpecError("block split points must be strictly increasing");
                if (s >= J) throw SpecError("block split point " + std::to_string(s) +
                                            " must be < J = " + std::to_string(J));
                prev = s;
            }
        }
        if (kind == DesignKind::NestedRoot || kind == DesignKind::ConditionalNestedRoot) {
            if (static_cast<int>(iv_columns.size()) != J - 1)
                throw SpecError("nested root design needs L-1 inclusive-value columns");
        }
    }

    friend bool operator==(const DesignSpec&, const DesignSpec&) = default;
};

namespace detail {

inline Eigen::VectorXd select(const Eigen::VectorXd& v, const std::vector<int>& idx) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) {
        if (idx[k] < 0 || idx[k] >= v.size())
            throw SpecError("covariate index " + std::to_string(idx[k]) + " out of range");
        out[static_cast<Eigen::Index>(k)] = v[idx[k]];
    }
    return out;
}

inline void fill_iv_block(Eigen::MatrixXd& z, Eigen::Index col, const CovariateRow& x,
                          const std::vector<int>& iv_columns) {
    for (std::size_t l = 0; l < iv_columns.size(); ++l) {
        if (iv_columns[l] < 0) continue;
        if (iv_columns[l] >= x.values.size())
            throw SpecError("inclusive value column out of range");
        z(static_cast<Eigen::Index>(l), col++) = x.values[iv_columns[l]];
    }
}

} // namespace detail

/// Z(x) for J categories; shape (J-1) x spec.columns(J).
inline Eigen::MatrixXd build_design(const CovariateRow& x, const DesignSpec& spec, int J) {
    const Eigen::Index m = J - 1;
    const Eigen::Index p = static_cast<Eigen::Index>(spec.variables.size());
    Eigen::MatrixXd z = Eigen::MatrixXd::Zero(m, spec.columns(J));
    z.leftCols(m).setIdentity();
    switch (spec.kind) {
    case DesignKind::Complete: {
        const Eigen::VectorXd xs = detail::select(x.values, spec.variables);
        for (Eigen::Index j = 0; j < m; ++j) z.block(j, m + j * p, 1, p) = xs.transpose();
        break;
    }
    case DesignKind::Proportional: {
        const Eigen::VectorXd xs = detail::select(x.values, spec.variables);
        for (Eigen::Index j = 0; j < m; ++j) z.block(j, m, 1, p) = xs.transpose();
        break;
    }
    case DesignKind::BlockSplit: {
        const Eigen::VectorXd xs = detail::select(x.values, spec.variables);
        int start = 0;
        for (std::size_t b = 0; b < spec.splits.size(); ++b) {
            const int end = spec.splits[b];
            if (end >= J) throw SpecError("block split point must be < J");
            for (int j = start; j < end; ++j)
                z.block(j, m + static_cast<Eigen::Index>(b) * p, 1, p) = xs.transpose();
            start = end;
        }
        break;
    }
    case DesignKind::NestedRoot: {
        const Eigen::VectorXd xs = detail::select(x.values, spec.variables);
        for (Eigen::Index j = 0; j < m; ++j) z.block(j, m + j * p, 1, p) = xs.transpose();
        detail::fill_iv_block(z, m * (1 + p), x, spec.iv_columns);
        break;
    }
    case DesignKind::ConditionalNestedRoot: {
        if (!x.has_alternatives() || x.alternatives.rows() != J)
            throw SpecError("conditional nested root design needs per-nest attributes for all " +
                            std::to_string(J) + " nests");
        for (Eigen::Index l = 0; l < m; ++l) {
            for (Eigen::Index k = 0; k < p; ++k) {
                const int c = spec.variables[static_cast<std::size_t>(k)];
                if (c < 0 || c >= x.alternatives.cols())
                    throw SpecError("alternative attribute index out of range");
                z(l, m + k) = x.alternatives(l, c) - x.alternatives(m, c);
            }
        }
        detail::fill_iv_block(z, m + p, x, spec.iv_columns);
        break;
    }
    }
    return z;
}

/// eta = Z beta.
inline Eigen::VectorXd linear_predictor(const Eigen::MatrixXd& z, const ParameterVector& beta) {
    if (z.cols() != beta.size())
        throw SpecError("design has " + std::to_string(z.cols()) + " columns but beta has " +
                        std::to_string(beta.size()) + " entries");
    return z * beta;
}

/// IV_l = log sum_k exp(eta_k^l) per nest, stabilized by the nest maximum.
inline Eigen::VectorXd inclusive_values(const std::vector<Eigen::VectorXd>& nest_predictors) {
    Eigen::VectorXd iv(static_cast<Eigen::Index>(nest_predictors.size()));
    for (std::size_t l = 0; l < nest_predictors.size(); ++l) {
        const auto& eta = nest_predictors[l];
        if (eta.size() == 0) throw SpecError("nest " + std::to_string(l) + " is empty");
        const double mx = eta.maxCoeff();
        iv[static_cast<Eigen::Index>(l)] = mx + std::log((eta.array() - mx).exp().sum());
    }
    return iv;
}

/// Root design of a two-level nested logit, shape (L-1) x columns. The
/// non-conditional form uses the complete x^0 block over `variables`; the
/// conditional form uses the shared slope on x~_l = x_l - x_L built from
/// the rows of `x0.alternatives`. Every nest l < L receives a lambda column.
inline Eigen::MatrixXd build_nested_root_design(const CovariateRow& x0, const Eigen::VectorXd& iv,
                                                bool conditional,
                                                const std::vector<int>& variables) {
    const int L = static_cast<int>(iv.size());
    if (L < 2) throw SpecError("nested root design needs at least two nests");
    CovariateRow row = x0;
    const Eigen::Index base = row.values.size();
    row.values.conservativeResize(base + L - 1);
    std::vector<int> iv_cols;
    for (int l = 0; l < L - 1; ++l) {
        row.values[base + l] = iv[l];
        iv_cols.push_back(static_cast<int>(base) + l);
    }
    if (conditional && !x0.has_alternatives())
        throw SpecError("conditional nested root design needs per-nest attributes");
    const DesignSpec spec = conditional ? DesignSpec::conditional_nested_root(iv_cols, variables)
                                        : DesignSpec::nested_root(iv_cols, variables);
    return build_design(row, spec, L);
}

} // namespace pcglm
