#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "pcglm/errors.hpp"

namespace pcglm {

/// Explanatory values for one unit. `alternatives` optionally holds
/// per-alternative (or per-nest) attributes, one row per alternative.
struct CovariateRow {
    Eigen::VectorXd values;
    Eigen::MatrixXd alternatives;

    CovariateRow() = default;
    explicit CovariateRow(Eigen::VectorXd v) : values(std::move(v)) {}
    CovariateRow(std::initializer_list<double> v)
        : values(Eigen::Map<const Eigen::VectorXd>(v.begin(), static_cast<Eigen::Index>(v.size()))) {}

    [[nodiscard]] bool has_alternatives() const { return alternatives.size() > 0; }
};

struct Observation {
    CovariateRow x;
    int response = 0; ///< 0-based category index
    double weight = 1.0;
};

/// A named explanatory variable and the design columns it occupies. A
/// numeric or ordinal variable owns one column; a categorical variable owns
/// one dummy column per non-baseline level.
struct Variable {
    std::string name;
    std::vector<int> columns;
};

struct CategoricalDataset {
    int categories = 0; ///< J
    std::vector<std::string> category_names;
    std::vector<std::string> column_names;
    std::vector<Variable> variables;
    std::vector<Observation> rows;

    [[nodiscard]] int columns() const { return static_cast<int>(column_names.size()); }
    [[nodiscard]] std::size_t size() const { return rows.size(); }
    [[nodiscard]] bool empty() const { return rows.empty(); }

    [[nodiscard]] double total_weight() const {
        double w = 0.0;
        for (const auto& r : rows) w += r.weight;
        return w;
    }

    [[nodiscard]] std::vector<double> response_counts() const {
        std::vector<double> n(static_cast<std::size_t>(categories), 0.0);
        for (const auto& r : rows) n[static_cast<std::size_t>(r.response)] += r.weight;
        return n;
    }

    /// Throws SpecError on the first malformed row.
    void validate() const {
        if (categories < 2) throw SpecError("dataset needs J >= 2 categories");
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const auto& r = rows[i];
            if (r.response < 0 || r.response >= categories)
                throw SpecError("row " + std::to_string(i) + ": response out of range");
            if (!(r.weight > 0.0))
                throw SpecError("row " + std::to_string(i) + ": weight must be positive");
            if (!r.x.values.allFinite())
                throw SpecError("row " + std::to_string(i) + ": non-finite covariate");
        }
    }

    /// Columns owned by the named variables, in variable order.
    [[nodiscard]] std::vector<int> columns_of(const std::vector<std::string>& names) const {
        std::vector<int> cols;
        for (const auto& n : names) {
            auto it = std::find_if(variables.begin(), variables.end(),
                                   [&](const Variable& v) { return v.name == n; });
            if (it == variables.end()) throw SpecError("unknown variable '" + n + "'");
            cols.insert(cols.end(), it->columns.begin(), it->columns.end());
        }
        return cols;
    }

    /// Merges rows with identical covariates and response into one weighted
    /// row. Row order follows first appearance.
    [[nodiscard]] CategoricalDataset aggregated() const {
        CategoricalDataset out = *this;
        out.rows.clear();
        std::map<std::pair<std::vector<double>, int>, std::size_t> index;
        for (const auto& r : rows) {
            if (r.x.has_alternatives()) return *this; // attribute blocks are not merged
            std::vector<double> key(r.x.values.data(), r.x.values.data() + r.x.values.size());
            auto [it, inserted] = index.try_emplace({std::move(key), r.response}, out.rows.size());
            if (inserted) out.rows.push_back(r);
            else out.rows[it->second].weight += r.weight;
        }
        return out;
    }

    /// Per-variable default names x1..xp with one column each.
    static CategoricalDataset with_numeric_columns(int J, int p) {
        CategoricalDataset d;
        d.categories = J;
        for (int j = 0; j < J; ++j) d.category_names.push_back(std::to_string(j + 1));
        for (int k = 0; k < p; ++k) {
            d.column_names.push_back("x" + std::to_string(k + 1));
            d.variables.push_back({d.column_names.back(), {k}});
        }
        return d;
    }
};

} // namespace pcglm
