#pragma once

// Partitioned conditional GLMs: one categorical GLM per non-terminal vertex
// of a partition tree. P(Y = j | x) is the product of the conditional child
// probabilities along the path from the root to {j}, and the log-likelihood
// splits into one term per vertex.

#include <Eigen/Dense>

#include <atomic>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "pcglm/dataset.hpp"
#include "pcglm/design.hpp"
#include "pcglm/errors.hpp"
#include "pcglm/glm.hpp"
#include "pcglm/link_functions.hpp"
#include "pcglm/partition_tree.hpp"
#include "pcglm/random.hpp"

namespace pcglm {

/// Model attached to one non-terminal vertex. A minimal node is
/// intercept-only and estimated by its child frequencies.
struct NodeModel {
    bool minimal = false;
    RatioKind ratio = RatioKind::Reference;
    CdfKind cdf;
    DesignKind design = DesignKind::Complete;
    std::vector<int> splits;
    std::vector<std::string> variables;
    int share_group = -1;
    std::optional<Vector> beta;
    std::optional<Vector> probs;

    static NodeModel glm(RatioKind r, CdfKind f, DesignKind d, std::vector<std::string> vars = {}) {
        NodeModel m;
        m.ratio = r;
        m.cdf = f;
        m.design = d;
        m.variables = std::move(vars);
        return m;
    }
    static NodeModel minimal_response() {
        NodeModel m;
        m.minimal = true;
        return m;
    }

    friend bool operator==(const NodeModel&, const NodeModel&) = default;
};

struct PCGLMSpec {
    std::vector<std::string> categories;
    std::vector<std::string> columns;
    std::vector<Variable> variables;
    PartitionTree tree;
    std::map<int, NodeModel> models; ///< keyed by tree node index

    /// Spec skeleton sharing the covariate layout and category names of `data`.
    static PCGLMSpec for_data(const CategoricalDataset& data, PartitionTree tree) {
        PCGLMSpec s;
        s.categories = data.category_names;
        s.columns = data.column_names;
        s.variables = data.variables;
        s.tree = std::move(tree);
        return s;
    }

    [[nodiscard]] int J() const { return tree.categories(); }

    [[nodiscard]] const NodeModel& model(int id) const {
        auto it = models.find(id);
        if (it == models.end()) throw SpecError("no model for vertex " + tree.vertex_label(id));
        return it->second;
    }

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

    /// GLM of a non-minimal vertex over its children.
    [[nodiscard]] GlmSpec node_glm(int id) const {
        const auto& m = model(id);
        if (m.minimal) throw SpecError("vertex " + tree.vertex_label(id) + " carries a minimal model");
        DesignSpec d;
        d.kind = m.design;
        d.splits = m.splits;
        d.variables = columns_of(m.variables);
        return GlmSpec{m.ratio, m.cdf, d, tree.child_count(id)};
    }

    /// Free parameters of the model at `id` (shared groups counted per vertex).
    [[nodiscard]] int node_parameters(int id) const {
        const auto& m = model(id);
        return m.minimal ? tree.child_count(id) - 1 : node_glm(id).columns();
    }

    /// Parameters with each sharing group counted once.
    [[nodiscard]] int parameters() const {
        int k = 0;
        std::vector<int> seen;
        for (int id : tree.non_terminal()) {
            const int g = model(id).share_group;
            if (g >= 0) {
                if (std::find(seen.begin(), seen.end(), g) != seen.end()) continue;
                seen.push_back(g);
            }
            k += node_parameters(id);
        }
        return k;
    }
};

/// Throws SpecError on an invalid tree, missing model, unknown variable,
/// bad design or inconsistent sharing group.
inline void validate_spec(const PCGLMSpec& spec) {
    require_valid(spec.tree);
    if (!spec.categories.empty() && static_cast<int>(spec.categories.size()) != spec.J())
        throw SpecError("spec lists " + std::to_string(spec.categories.size()) +
                        " categories but the tree covers " + std::to_string(spec.J()));
    const int width = static_cast<int>(spec.columns.size());
    for (const auto& v : spec.variables)
        for (int c : v.columns)
            if (c < 0 || c >= width) throw SpecError("variable '" + v.name + "' refers to a missing column");
    std::map<int, int> group_rep;
    for (int id : spec.tree.non_terminal()) {
        const auto& m = spec.model(id);
        if (m.minimal) {
            if (m.share_group >= 0)
                throw SpecError("minimal vertex " + spec.tree.vertex_label(id) + " cannot share parameters");
            if (m.probs && m.probs->size() != spec.tree.child_count(id))
                throw SpecError("probabilities at " + spec.tree.vertex_label(id) + " have the wrong length");
            continue;
        }
        if (m.design == DesignKind::NestedRoot || m.design == DesignKind::ConditionalNestedRoot)
            throw SpecError("nested-root designs are built by the nested logit fit, not by a spec");
        const GlmSpec g = spec.node_glm(id);
        g.design.validate(g.J, width);
        if (m.beta && m.beta->size() != g.columns())
            throw SpecError("parameter vector at " + spec.tree.vertex_label(id) + " has " +
                            std::to_string(m.beta->size()) + " entries, design has " +
                            std::to_string(g.columns()));
        if (m.share_group >= 0) {
            auto [it, inserted] = group_rep.try_emplace(m.share_group, id);
            if (!inserted) {
                const auto& o = spec.model(it->second);
                if (spec.tree.child_count(id) != spec.tree.child_count(it->second) || o.ratio != m.ratio ||
                    o.cdf != m.cdf || o.design != m.design || o.splits != m.splits || o.variables != m.variables)
                    throw SpecError("sharing group " + std::to_string(m.share_group) +
                                    " mixes vertices with different child counts or models");
            }
        }
    }
    for (const auto& [id, m] : spec.models) {
        (void)m;
        if (id < 0 || id >= static_cast<int>(spec.tree.nodes().size()) || spec.tree.node(id).terminal())
            throw SpecError("model attached to a terminal or unknown vertex");
    }
}

struct NodeFit {
    int node = -1;
    std::string vertex;
    bool minimal = false;
    bool degenerate = false;
    int share_group = -1;
    std::optional<GlmSpec> glm;
    FitResult result;
    Vector probs;
    double log_likelihood = 0.0;
    int parameters = 0;
    double n_obs = 0.0;
    bool converged = false;
    std::vector<std::string> warnings;
};

struct PCGLMFit {
    std::vector<NodeFit> nodes; ///< non-terminal vertices in preorder
    double log_likelihood = 0.0;
    int parameters = 0;
    int equations = 0;
    double n_obs = 0.0;
    bool converged = true;
    std::vector<std::string> diagnostics;

    [[nodiscard]] const NodeFit& at(int node) const {
        for (const auto& n : nodes)
            if (n.node == node) return n;
        throw SpecError("no fitted model for node " + std::to_string(node));
    }
};

struct PCGLMFitOptions {
    FitOptions glm;
    int threads = 1;
};

namespace detail {

inline double child_frequency_loglik(const CategoricalDataset& sub, const Vector& probs) {
    double ll = 0.0;
    for (const auto& r : sub.rows) ll += r.weight * std::log(probs[r.response]);
    return ll;
}

/// Closed-form child frequencies. Children with no observations get
/// probability 0.
inline void fit_frequencies(NodeFit& nf, const CategoricalDataset& sub) {
    const auto counts = sub.response_counts();
    const double n = sub.total_weight();
    nf.probs = Vector::Zero(sub.categories);
    if (n > 0.0) {
        for (int j = 0; j < sub.categories; ++j) nf.probs[j] = counts[static_cast<std::size_t>(j)] / n;
    } else {
        nf.probs.setConstant(1.0 / sub.categories);
    }
    nf.log_likelihood = n > 0.0 ? child_frequency_loglik(sub, nf.probs) : 0.0;
    nf.converged = true;
}

inline int observed_children(const CategoricalDataset& sub) {
    int k = 0;
    for (double c : sub.response_counts()) k += c > 0.0;
    return k;
}

/// One unit of work: a single vertex or a whole sharing group.
struct FitUnit {
    std::vector<int> nodes;
};

inline std::vector<NodeFit> fit_unit(const PCGLMSpec& spec, const CategoricalDataset& data,
                                     const FitUnit& unit, const FitOptions& options) {
    std::vector<NodeFit> out;
    std::vector<CategoricalDataset> subs;
    for (int id : unit.nodes) {
        NodeFit nf;
        nf.node = id;
        nf.vertex = spec.tree.vertex_label(id);
        const auto& m = spec.model(id);
        nf.minimal = m.minimal;
        nf.share_group = m.share_group;
        subs.push_back(partition_data(spec.tree, data, id));
        nf.n_obs = subs.back().total_weight();
        if (!m.minimal) nf.glm = spec.node_glm(id);
        out.push_back(std::move(nf));
    }
    const auto& first = spec.model(unit.nodes.front());
    if (first.minimal) {
        auto& nf = out.front();
        fit_frequencies(nf, subs.front());
        nf.parameters = spec.tree.child_count(nf.node) - 1;
        if (nf.n_obs <= 0.0) nf.warnings.push_back("vertex " + nf.vertex + " has no observations");
        return out;
    }
    CategoricalDataset stacked = subs.front();
    for (std::size_t k = 1; k < subs.size(); ++k)
        stacked.rows.insert(stacked.rows.end(), subs[k].rows.begin(), subs[k].rows.end());
    const GlmSpec glm = *out.front().glm;
    const int k = glm.columns();
    if (observed_children(stacked) < 2) {
        // Degenerate vertex: probability 1 on the observed child.
        for (std::size_t u = 0; u < out.size(); ++u) {
            auto& nf = out[u];
            fit_frequencies(nf, subs[u]);
            nf.degenerate = true;
            nf.parameters = u == 0 ? k : 0;
            nf.warnings.push_back("vertex " + nf.vertex + (nf.n_obs > 0.0 ? " observes a single child"
                                                                           : " has no observations") +
                                  "; degenerate fit");
        }
        return out;
    }
    FitResult res;
    std::string failure;
    try {
        res = fit(glm, stacked, options);
    } catch (const Error& e) {
        failure = e.what();
    }
    for (std::size_t u = 0; u < out.size(); ++u) {
        auto& nf = out[u];
        nf.parameters = u == 0 ? k : 0;
        if (!failure.empty()) {
            nf.converged = false;
            nf.log_likelihood = std::numeric_limits<double>::quiet_NaN();
            nf.warnings.push_back("vertex " + nf.vertex + ": " + failure);
            continue;
        }
        nf.result = res;
        nf.converged = res.converged;
        nf.log_likelihood = subs.size() == 1 ? res.log_likelihood : log_likelihood(glm, res.beta, subs[u]);
        for (const auto& d : res.diagnostics) nf.warnings.push_back("vertex " + nf.vertex + ": " + d);
    }
    return out;
}

} // namespace detail

/// Fits every vertex on its sub-dataset. Vertices in a sharing group are
/// fitted jointly on their stacked sub-datasets. Independent units may run
/// on several threads; results are merged in vertex order.
inline PCGLMFit pcglm_fit(const PCGLMSpec& spec, const CategoricalDataset& data,
                          const PCGLMFitOptions& options = {}) {
    validate_spec(spec);
    if (data.categories != spec.J())
        throw SpecError("dataset has " + std::to_string(data.categories) + " categories, spec has " +
                        std::to_string(spec.J()));
    if (!spec.columns.empty() && data.column_names != spec.columns)
        throw SpecError("dataset covariate columns do not match the spec");

    std::vector<detail::FitUnit> units;
    std::map<int, std::size_t> group_unit;
    for (int id : spec.tree.non_terminal()) {
        const int g = spec.model(id).share_group;
        if (g >= 0) {
            auto [it, inserted] = group_unit.try_emplace(g, units.size());
            if (inserted) units.push_back({{id}});
            else units[it->second].nodes.push_back(id);
        } else {
            units.push_back({{id}});
        }
    }

    std::vector<std::vector<NodeFit>> results(units.size());
    const auto run = [&](std::size_t u) { results[u] = detail::fit_unit(spec, data, units[u], options.glm); };
    const int threads = std::max(1, std::min<int>(options.threads, static_cast<int>(units.size())));
    if (threads == 1) {
        for (std::size_t u = 0; u < units.size(); ++u) run(u);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t)
            pool.emplace_back([&] {
                for (std::size_t u = next++; u < units.size(); u = next++) run(u);
            });
        for (auto& th : pool) th.join();
    }

    std::map<int, NodeFit> by_node;
    for (auto& r : results)
        for (auto& nf : r) by_node.emplace(nf.node, std::move(nf));
    PCGLMFit out;
    out.n_obs = data.total_weight();
    out.equations = count_equations(spec.tree);
    for (int id : spec.tree.non_terminal()) {
        auto& nf = by_node.at(id);
        out.log_likelihood += nf.log_likelihood;
        out.parameters += nf.parameters;
        out.converged = out.converged && nf.converged;
        out.diagnostics.insert(out.diagnostics.end(), nf.warnings.begin(), nf.warnings.end());
        out.nodes.push_back(std::move(nf));
    }
    return out;
}

/// Copy of `spec` with fitted parameters stored in the node models.
inline PCGLMSpec with_parameters(PCGLMSpec spec, const PCGLMFit& fit) {
    for (const auto& nf : fit.nodes) {
        auto& m = spec.models.at(nf.node);
        m.beta.reset();
        m.probs.reset();
        if (nf.minimal || nf.degenerate) m.probs = nf.probs;
        else if (nf.result.beta.size() > 0) m.beta = nf.result.beta;
    }
    return spec;
}

/// Conditional child probabilities at vertex `id` from stored parameters.
inline Vector node_probabilities(const PCGLMSpec& spec, int id, const CovariateRow& x) {
    const auto& m = spec.model(id);
    if (m.probs) return *m.probs;
    if (m.minimal) throw SpecError("minimal vertex " + spec.tree.vertex_label(id) + " has no probabilities");
    if (!m.beta) throw SpecError("vertex " + spec.tree.vertex_label(id) + " has no parameters");
    try {
        return predict_probs(spec.node_glm(id), *m.beta, x).probs;
    } catch (const PredictionDomainError& e) {
        throw PredictionDomainError("vertex " + spec.tree.vertex_label(id) + ": " + e.what());
    }
}

/// P(Y = j | x) as the product of conditional child probabilities along
/// the path from the root to {j}. Uses parameters stored in `spec`.
inline ProbabilityVector pcglm_predict(const PCGLMSpec& spec, const CovariateRow& x) {
    Vector pi = Vector::Zero(spec.J());
    std::function<void(int, double)> walk = [&](int id, double mass) {
        const auto& n = spec.tree.node(id);
        if (n.terminal()) {
            pi[n.categories.front()] = mass;
            return;
        }
        const Vector p = node_probabilities(spec, id, x);
        for (std::size_t k = 0; k < n.children.size(); ++k)
            walk(n.children[k], mass * p[static_cast<Eigen::Index>(k)]);
    };
    walk(PartitionTree::root(), 1.0);
    return ProbabilityVector(pi);
}

inline ProbabilityVector pcglm_predict(const PCGLMSpec& spec, const PCGLMFit& fit, const CovariateRow& x) {
    return pcglm_predict(with_parameters(spec, fit), x);
}

/// Draws one response per row from the model with stored parameters;
/// descends the tree one child draw at a time.
inline int pcglm_draw(const PCGLMSpec& spec, const CovariateRow& x, Random& rng) {
    int id = PartitionTree::root();
    while (!spec.tree.node(id).terminal()) {
        const Vector p = node_probabilities(spec, id, x);
        const auto k = rng.categorical({p.data(), static_cast<std::size_t>(p.size())});
        id = spec.tree.node(id).children[k];
    }
    return spec.tree.node(id).categories.front();
}

// ---------------------------------------------------------------------------
// Nested logit

struct NestedLogitOptions {
    std::vector<int> root_columns;              ///< x^0
    std::vector<std::vector<int>> nest_columns; ///< x^l per root child; empty means none
    bool fix_lambda_zero = false;
    FitOptions glm;
};

struct NestedLogitFit {
    PCGLMFit fit;
    Vector lambda;                 ///< per nest l < L; NaN where the column was dropped
    std::vector<bool> lambda_dropped;
    GlmSpec root_spec;
    std::vector<std::string> notes;
};

/// Two-step estimation over a depth-2 tree whose root children are nests.
/// Step 1 fits a multinomial logit per nest; step 2 fits the root logit with
/// the nests' inclusive values as extra covariates. Lambda columns are
/// dropped for nests whose inclusive value does not vary over the data.
inline NestedLogitFit nested_logit_fit(const PartitionTree& tree, const CategoricalDataset& data,
                                       const NestedLogitOptions& options) {
    require_valid(tree);
    const auto& root = tree.node(PartitionTree::root());
    const int L = static_cast<int>(root.children.size());
    for (int c : root.children)
        for (int g : tree.node(c).children)
            if (!tree.node(g).terminal())
                throw SpecError("nested logit needs a tree of depth at most 2");
    if (!options.nest_columns.empty() && static_cast<int>(options.nest_columns.size()) != L)
        throw SpecError("nest covariates must be given for every root child");
    const auto nest_cols = [&](int l) {
        return options.nest_columns.empty() ? std::vector<int>{} : options.nest_columns[static_cast<std::size_t>(l)];
    };

    NestedLogitFit out;
    out.fit.n_obs = data.total_weight();
    out.fit.equations = count_equations(tree);
    std::vector<NodeFit> nest_fits;
    std::vector<std::optional<GlmSpec>> nest_glm(static_cast<std::size_t>(L));
    std::vector<Vector> nest_beta(static_cast<std::size_t>(L));

    for (int l = 0; l < L; ++l) {
        const int id = root.children[static_cast<std::size_t>(l)];
        if (tree.node(id).terminal()) continue;
        GlmSpec g{RatioKind::Reference, CdfKind::logistic(), DesignSpec::complete(nest_cols(l)), tree.child_count(id)};
        NodeFit nf;
        nf.node = id;
        nf.vertex = tree.vertex_label(id);
        nf.glm = g;
        const auto sub = partition_data(tree, data, id);
        nf.n_obs = sub.total_weight();
        nf.parameters = g.columns();
        try {
            nf.result = fit(g, sub, options.glm);
            nf.converged = nf.result.converged;
            nf.log_likelihood = nf.result.log_likelihood;
            nest_glm[static_cast<std::size_t>(l)] = g;
            nest_beta[static_cast<std::size_t>(l)] = nf.result.beta;
        } catch (const Error& e) {
            nf.converged = false;
            nf.log_likelihood = std::numeric_limits<double>::quiet_NaN();
            nf.warnings.push_back("vertex " + nf.vertex + ": " + e.what());
        }
        nest_fits.push_back(std::move(nf));
    }

    // Inclusive values appended after the original covariates.
    const int p = data.columns();
    auto root_data = partition_data(tree, data, PartitionTree::root());
    std::vector<double> lo(static_cast<std::size_t>(L), std::numeric_limits<double>::infinity());
    std::vector<double> hi(static_cast<std::size_t>(L), -std::numeric_limits<double>::infinity());
    for (auto& r : root_data.rows) {
        std::vector<Vector> etas;
        for (int l = 0; l < L; ++l) {
            const auto& g = nest_glm[static_cast<std::size_t>(l)];
            Vector eta = Vector::Zero(1);
            if (g) {
                eta.resize(g->J);
                eta.head(g->J - 1) = linear_predictor(build_design(r.x, g->design, g->J),
                                                      nest_beta[static_cast<std::size_t>(l)]);
                eta[g->J - 1] = 0.0;
            }
            etas.push_back(eta);
        }
        const Vector iv = inclusive_values(etas);
        Vector values(p + L);
        values.head(p) = r.x.values;
        values.tail(L) = iv;
        r.x.values = values;
        for (int l = 0; l < L; ++l) {
            lo[static_cast<std::size_t>(l)] = std::min(lo[static_cast<std::size_t>(l)], iv[l]);
            hi[static_cast<std::size_t>(l)] = std::max(hi[static_cast<std::size_t>(l)], iv[l]);
        }
    }
    std::vector<int> iv_cols;
    out.lambda = Vector::Constant(L - 1, std::numeric_limits<double>::quiet_NaN());
    for (int l = 0; l < L - 1; ++l) {
        const double span = hi[static_cast<std::size_t>(l)] - lo[static_cast<std::size_t>(l)];
        const double scale = std::max(1.0, std::fabs(hi[static_cast<std::size_t>(l)]));
        const bool drop = options.fix_lambda_zero || !(span > 1e-9 * scale);
        iv_cols.push_back(drop ? -1 : p + l);
        out.lambda_dropped.push_back(drop);
    }
    out.root_spec = GlmSpec{RatioKind::Reference, CdfKind::logistic(),
                            DesignSpec::nested_root(iv_cols, options.root_columns), L};
    NodeFit rf;
    rf.node = PartitionTree::root();
    rf.vertex = tree.vertex_label(rf.node);
    rf.glm = out.root_spec;
    rf.n_obs = root_data.total_weight();
    rf.parameters = out.root_spec.columns();
    try {
        rf.result = fit(out.root_spec, root_data, options.glm);
        rf.converged = rf.result.converged;
        rf.log_likelihood = rf.result.log_likelihood;
        const int base = (L - 1) * (1 + static_cast<int>(options.root_columns.size()));
        int k = base;
        for (int l = 0; l < L - 1; ++l)
            if (!out.lambda_dropped[static_cast<std::size_t>(l)]) out.lambda[l] = rf.result.beta[k++];
    } catch (const Error& e) {
        rf.converged = false;
        rf.log_likelihood = std::numeric_limits<double>::quiet_NaN();
        rf.warnings.push_back("vertex " + rf.vertex + ": " + e.what());
    }

    out.fit.nodes.push_back(std::move(rf));
    for (auto& nf : nest_fits) out.fit.nodes.push_back(std::move(nf));
    for (const auto& nf : out.fit.nodes) {
        out.fit.log_likelihood += nf.log_likelihood;
        out.fit.parameters += nf.parameters;
        out.fit.converged = out.fit.converged && nf.converged;
        out.fit.diagnostics.insert(out.fit.diagnostics.end(), nf.warnings.begin(), nf.warnings.end());
    }
    out.notes.push_back("two-step estimate: the root fit treats the inclusive values as fixed");
    return out;
}

} // namespace pcglm
