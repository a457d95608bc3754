#pragma once

// Model selection: deviance tests, BIC, per-node covariate subsets, split
// searches for indistinguishable categories (block designs and grouped
// trees), the block-design to tree transform, and the extended procedure
// that grows a partition tree level by level.

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "pcglm/dataset.hpp"
#include "pcglm/errors.hpp"
#include "pcglm/glm.hpp"
#include "pcglm/partition_tree.hpp"
#include "pcglm/pcglm_model.hpp"
#include "pcglm/special_functions.hpp"

namespace pcglm {

using special::chi2_quantile;
using special::chi2_sf;

struct DevianceTest {
    double statistic = 0.0;
    double p_value = 1.0;
    bool accept = false; ///< bigger model accepted
};

/// 2 (l_big - l_small) against chi-square(df); the bigger model is accepted
/// when p < alpha.
inline DevianceTest deviance_test(double l_big, double l_small, int df, double alpha = 0.05) {
    if (df < 1) throw SpecError("deviance test needs df >= 1");
    if (l_big < l_small - 1e-8)
        throw SpecError("deviance test: models are not nested (l_big = " + std::to_string(l_big) +
                        " < l_small = " + std::to_string(l_small) + ")");
    DevianceTest t;
    t.statistic = std::max(0.0, 2.0 * (l_big - l_small));
    t.p_value = chi2_sf(t.statistic, df);
    t.accept = t.p_value < alpha;
    return t;
}

/// l - k ln(n) / 2; larger is better.
inline double bic(double log_likelihood, int n_params, double n_obs) {
    if (!(n_obs >= 1.0)) throw SpecError("BIC needs n >= 1");
    return log_likelihood - 0.5 * n_params * std::log(n_obs);
}

// ---------------------------------------------------------------------------
// Trace

struct TraceRecord {
    std::string stage;
    std::string node;
    std::string candidate;
    double log_likelihood = std::numeric_limits<double>::quiet_NaN();
    int parameters = 0;
    double n_obs = std::numeric_limits<double>::quiet_NaN();
    double bic = std::numeric_limits<double>::quiet_NaN();
    double statistic = std::numeric_limits<double>::quiet_NaN();
    double p_value = std::numeric_limits<double>::quiet_NaN();
    std::string decision;
    std::string note;

    /// FNV-1a over stage, node and candidate.
    [[nodiscard]] std::string spec_hash() const {
        std::uint64_t h = 1469598103934665603ULL;
        for (const std::string* s : {&stage, &node, &candidate}) {
            for (unsigned char c : *s) {
                h ^= c;
                h *= 1099511628211ULL;
            }
            h ^= 0xff;
            h *= 1099511628211ULL;
        }
        std::ostringstream os;
        os << std::hex;
        os.width(16);
        os.fill('0');
        os << h;
        return os.str();
    }
};

struct SelectionTrace {
    std::vector<TraceRecord> records;

    void add(TraceRecord r) { records.push_back(std::move(r)); }

    /// One JSON object per record.
    [[nodiscard]] std::string to_json_lines() const {
        std::string out;
        for (const auto& r : records) {
            nlohmann::ordered_json j;
            j["stage"] = r.stage;
            j["node"] = r.node;
            j["candidate"] = r.candidate;
            j["hash"] = r.spec_hash();
            const auto num = [](double v) { return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(); };
            j["loglik"] = num(r.log_likelihood);
            j["k"] = r.parameters;
            j["n"] = num(r.n_obs);
            j["bic"] = num(r.bic);
            j["statistic"] = num(r.statistic);
            j["p"] = num(r.p_value);
            j["decision"] = r.decision;
            if (!r.note.empty()) j["note"] = r.note;
            out += j.dump() + "\n";
        }
        return out;
    }
};

enum class Criterion { Bic, Loglik };
enum class BicSampleSize { Node, Global };

inline std::string_view to_string(Criterion c) { return c == Criterion::Bic ? "bic" : "loglik"; }
inline std::string_view to_string(BicSampleSize b) { return b == BicSampleSize::Node ? "node" : "global"; }

struct SelectionOptions {
    double alpha = 0.05;
    Criterion criterion = Criterion::Bic;
    BicSampleSize bic_n = BicSampleSize::Node;
    int max_exhaustive = 15;
    int threads = 1;
    FitOptions fit;
};

namespace detail {

/// Runs f(0..n-1) on up to `threads` workers; results keep index order.
template <class T>
std::vector<T> parallel_map(std::size_t n, int threads, const std::function<T(std::size_t)>& f) {
    std::vector<T> out(n);
    const int workers = std::max(1, std::min<int>(threads, static_cast<int>(n)));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) out[i] = f(i);
        return out;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) out[i] = f(i);
        });
    for (auto& th : pool) th.join();
    return out;
}

inline std::string join(const std::vector<std::string>& v, const char* sep = ",") {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? sep : "") + v[i];
    return s;
}

inline std::string join(const std::vector<int>& v, const char* sep = ",") {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? sep : "") + std::to_string(v[i]);
    return s;
}

/// Multinomial log-likelihood at the empirical child frequencies.
inline double frequency_loglik(const CategoricalDataset& d) {
    const auto counts = d.response_counts();
    const double n = d.total_weight();
    double ll = 0.0;
    for (double c : counts)
        if (c > 0.0) ll += c * std::log(c / n);
    return ll;
}

struct CandidateFit {
    bool ok = false;
    double log_likelihood = std::numeric_limits<double>::quiet_NaN();
    int parameters = 0;
    bool converged = false;
    std::string error;
};

/// GLM fit of `tmpl` restricted to the named covariates; the empty set is
/// evaluated in closed form.
inline CandidateFit fit_subset(const CategoricalDataset& d, const GlmSpec& tmpl,
                               const std::vector<std::string>& vars, const FitOptions& options) {
    CandidateFit c;
    if (vars.empty()) {
        c.ok = true;
        c.converged = true;
        c.log_likelihood = frequency_loglik(d);
        c.parameters = d.categories - 1;
        return c;
    }
    GlmSpec g = tmpl;
    g.J = d.categories;
    g.design.variables = d.columns_of(vars);
    c.parameters = g.columns();
    try {
        const auto r = fit(g, d, options);
        c.ok = true;
        c.converged = r.converged;
        c.log_likelihood = r.log_likelihood;
        if (!r.converged && !r.diagnostics.empty()) c.error = r.diagnostics.back();
    } catch (const Error& e) {
        c.error = e.what();
    }
    return c;
}

inline std::vector<std::vector<std::string>> subsets_by_size(const std::vector<std::string>& items) {
    std::vector<std::vector<std::string>> out;
    const std::size_t K = items.size();
    for (std::size_t size = 0; size <= K; ++size) {
        std::vector<bool> pick(K, false);
        std::fill(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(size), true);
        do {
            std::vector<std::string> s;
            for (std::size_t i = 0; i < K; ++i)
                if (pick[i]) s.push_back(items[i]);
            out.push_back(std::move(s));
        } while (std::prev_permutation(pick.begin(), pick.end()));
    }
    return out;
}

} // namespace detail

struct VariableChoice {
    std::vector<std::string> variables;
    double log_likelihood = 0.0;
    int parameters = 0;
    double score = 0.0; ///< BIC, or log-likelihood under the likelihood criterion
};

/// Picks the covariate subset for one node. BIC: exhaustive over all
/// subsets up to `max_exhaustive` candidates (forward stepwise beyond),
/// ties toward fewer variables. Likelihood criterion: forward selection
/// while the deviance test accepts the added variable.
inline VariableChoice select_variables(const CategoricalDataset& d, const GlmSpec& tmpl,
                                       const std::vector<std::string>& candidates, double bic_n,
                                       const SelectionOptions& opt, SelectionTrace* trace = nullptr,
                                       const std::string& node = "") {
    const auto record = [&](const std::vector<std::string>& s, const detail::CandidateFit& c, double score,
                            const std::string& decision, double stat = std::numeric_limits<double>::quiet_NaN(),
                            double p = std::numeric_limits<double>::quiet_NaN()) {
        if (!trace) return;
        TraceRecord r;
        r.stage = "select";
        r.node = node;
        r.candidate = tmpl.describe() + " {" + detail::join(s) + "}";
        r.log_likelihood = c.log_likelihood;
        r.parameters = c.parameters;
        r.n_obs = bic_n;
        r.bic = opt.criterion == Criterion::Bic ? score : std::numeric_limits<double>::quiet_NaN();
        r.statistic = stat;
        r.p_value = p;
        r.decision = c.ok ? decision : "failed";
        r.note = c.error;
        trace->add(std::move(r));
    };
    const auto fit_all = [&](const std::vector<std::vector<std::string>>& sets) {
        return detail::parallel_map<detail::CandidateFit>(sets.size(), opt.threads, [&](std::size_t i) {
            return detail::fit_subset(d, tmpl, sets[i], opt.fit);
        });
    };

    VariableChoice best;
    const auto empty = detail::fit_subset(d, tmpl, {}, opt.fit);
    best.log_likelihood = empty.log_likelihood;
    best.parameters = empty.parameters;

    if (opt.criterion == Criterion::Bic && static_cast<int>(candidates.size()) <= opt.max_exhaustive) {
        const auto sets = detail::subsets_by_size(candidates);
        const auto fits = fit_all(sets);
        best.score = -std::numeric_limits<double>::infinity();
        std::size_t best_i = 0;
        std::vector<double> scores(sets.size(), std::numeric_limits<double>::quiet_NaN());
        for (std::size_t i = 0; i < sets.size(); ++i) {
            if (!fits[i].ok) continue;
            scores[i] = bic(fits[i].log_likelihood, fits[i].parameters, bic_n);
            if (scores[i] > best.score) {
                best.score = scores[i];
                best_i = i;
            }
        }
        for (std::size_t i = 0; i < sets.size(); ++i)
            record(sets[i], fits[i], scores[i], i == best_i ? "selected" : "rejected");
        best.variables = sets[best_i];
        best.log_likelihood = fits[best_i].log_likelihood;
        best.parameters = fits[best_i].parameters;
        return best;
    }

    // Forward stepwise.
    best.score = opt.criterion == Criterion::Bic ? bic(empty.log_likelihood, empty.parameters, bic_n)
                                                 : empty.log_likelihood;
    record({}, empty, opt.criterion == Criterion::Bic ? best.score : std::numeric_limits<double>::quiet_NaN(),
           "start");
    for (;;) {
        std::vector<std::vector<std::string>> sets;
        for (const auto& v : candidates)
            if (std::find(best.variables.begin(), best.variables.end(), v) == best.variables.end()) {
                auto s = best.variables;
                s.push_back(v);
                sets.push_back(std::move(s));
            }
        if (sets.empty()) break;
        const auto fits = fit_all(sets);
        std::optional<std::size_t> pick;
        for (std::size_t i = 0; i < sets.size(); ++i)
            if (fits[i].ok && (!pick || fits[i].log_likelihood > fits[*pick].log_likelihood)) pick = i;
        if (!pick) {
            for (std::size_t i = 0; i < sets.size(); ++i) record(sets[i], fits[i], std::nan(""), "rejected");
            break;
        }
        const auto& f = fits[*pick];
        bool accept = false;
        double stat = std::numeric_limits<double>::quiet_NaN(), p = stat, score = f.log_likelihood;
        if (opt.criterion == Criterion::Bic) {
            score = bic(f.log_likelihood, f.parameters, bic_n);
            accept = score > best.score;
        } else {
            const int df = f.parameters - best.parameters;
            if (df >= 1 && f.log_likelihood >= best.log_likelihood - 1e-8) {
                const auto t = deviance_test(f.log_likelihood, best.log_likelihood, df, opt.alpha);
                stat = t.statistic;
                p = t.p_value;
                accept = t.accept;
            }
        }
        for (std::size_t i = 0; i < sets.size(); ++i) {
            const double s = opt.criterion == Criterion::Bic && fits[i].ok
                                 ? bic(fits[i].log_likelihood, fits[i].parameters, bic_n)
                                 : std::numeric_limits<double>::quiet_NaN();
            if (i == *pick) record(sets[i], fits[i], s, accept ? "accepted" : "rejected", stat, p);
            else record(sets[i], fits[i], s, "rejected");
        }
        if (!accept) break;
        best.variables = sets[*pick];
        best.log_likelihood = f.log_likelihood;
        best.parameters = f.parameters;
        best.score = score;
    }
    return best;
}

// ---------------------------------------------------------------------------
// Split search over block designs

struct SplitSearchResult {
    int best_split = -1;          ///< added split point, -1 when nothing could be fitted
    std::vector<int> splits;      ///< fixed splits plus the best one
    double log_likelihood = std::numeric_limits<double>::quiet_NaN();
    int parameters = 0;
    FitResult fit;
};

/// Fits base.ratio / base.cdf with BlockSplit(fixed + {r}) for every free
/// split point r and returns the maximum log-likelihood; ties go to the
/// smallest r. Failed candidates are logged and skipped.
inline SplitSearchResult split_search(const CategoricalDataset& data, const GlmSpec& base,
                                      const std::vector<int>& fixed_splits, const SelectionOptions& opt = {},
                                      SelectionTrace* trace = nullptr) {
    const int J = data.categories;
    std::vector<std::vector<int>> cands;
    std::vector<int> added;
    for (int r = 1; r < J; ++r) {
        if (std::find(fixed_splits.begin(), fixed_splits.end(), r) != fixed_splits.end()) continue;
        auto s = fixed_splits;
        s.push_back(r);
        std::sort(s.begin(), s.end());
        cands.push_back(std::move(s));
        added.push_back(r);
    }
    struct Out {
        bool ok = false;
        FitResult fit;
        std::string error;
        int k = 0;
    };
    const auto fits = detail::parallel_map<Out>(cands.size(), opt.threads, [&](std::size_t i) {
        Out o;
        GlmSpec g = base;
        g.J = J;
        g.design.kind = DesignKind::BlockSplit;
        g.design.splits = cands[i];
        o.k = g.columns();
        try {
            o.fit = fit(g, data, opt.fit);
            o.ok = true;
        } catch (const Error& e) {
            o.error = e.what();
        }
        return o;
    });
    SplitSearchResult res;
    for (std::size_t i = 0; i < cands.size(); ++i) {
        if (fits[i].ok && (res.best_split < 0 || fits[i].fit.log_likelihood > res.log_likelihood)) {
            res.best_split = added[i];
            res.splits = cands[i];
            res.log_likelihood = fits[i].fit.log_likelihood;
            res.parameters = fits[i].k;
            res.fit = fits[i].fit;
        }
    }
    if (trace)
        for (std::size_t i = 0; i < cands.size(); ++i) {
            TraceRecord r;
            r.stage = "split";
            r.node = "block";
            r.candidate = "(" + std::string(to_string(base.ratio)) + ", " + base.cdf.name() + ", block_split[" +
                          detail::join(cands[i]) + "])";
            r.parameters = fits[i].k;
            r.n_obs = data.total_weight();
            if (fits[i].ok) {
                r.log_likelihood = fits[i].fit.log_likelihood;
                r.decision = added[i] == res.best_split ? "best" : "candidate";
                if (!fits[i].fit.converged) r.note = "not converged";
            } else {
                r.decision = "failed";
                r.note = fits[i].error;
            }
            trace->add(std::move(r));
        }
    return res;
}

struct AndersonResult {
    std::vector<int> splits;
    double l0 = 0.0;
    double log_likelihood = 0.0;
    int parameters = 0;
};

/// Indistinguishability search with block designs: start from the model
/// without slopes and add the best split point while the deviance test
/// accepts it.
inline AndersonResult anderson_procedure(const CategoricalDataset& data, const GlmSpec& base,
                                         const SelectionOptions& opt = {}, SelectionTrace* trace = nullptr) {
    GlmSpec g0 = base;
    g0.J = data.categories;
    g0.design.kind = DesignKind::BlockSplit;
    g0.design.splits.clear();
    AndersonResult res;
    const auto f0 = fit(g0, data, opt.fit);
    res.l0 = res.log_likelihood = f0.log_likelihood;
    res.parameters = g0.columns();
    if (trace) {
        TraceRecord r;
        r.stage = "anderson";
        r.node = "block";
        r.candidate = "no slopes";
        r.log_likelihood = res.l0;
        r.parameters = res.parameters;
        r.n_obs = data.total_weight();
        r.decision = "start";
        trace->add(std::move(r));
    }
    while (static_cast<int>(res.splits.size()) < data.categories - 1) {
        const auto s = split_search(data, base, res.splits, opt, trace);
        if (s.best_split < 0) break;
        const int df = s.parameters - res.parameters;
        const auto t = deviance_test(std::max(s.log_likelihood, res.log_likelihood), res.log_likelihood, df, opt.alpha);
        if (trace) {
            TraceRecord r;
            r.stage = "anderson";
            r.node = "block";
            r.candidate = "add split " + std::to_string(s.best_split);
            r.log_likelihood = s.log_likelihood;
            r.parameters = s.parameters;
            r.n_obs = data.total_weight();
            r.statistic = t.statistic;
            r.p_value = t.p_value;
            r.decision = t.accept ? "accepted" : "rejected";
            trace->add(std::move(r));
        }
        if (!t.accept) break;
        res.splits = s.splits;
        res.log_likelihood = s.log_likelihood;
        res.parameters = s.parameters;
    }
    return res;
}

// ---------------------------------------------------------------------------
// Grouped trees

/// Groups of 0..m-1 cut after each (1-based) split point.
inline std::vector<Vertex> groups_from_splits(int m, const std::vector<int>& splits) {
    std::vector<Vertex> groups;
    Vertex cur;
    std::size_t s = 0;
    for (int j = 0; j < m; ++j) {
        cur.push_back(j);
        if (s < splits.size() && splits[s] == j + 1) {
            groups.push_back(cur);
            cur.clear();
            ++s;
        }
    }
    if (!cur.empty()) groups.push_back(cur);
    return groups;
}

/// Two-level tree over the groups given by `splits`: `base` at the root,
/// minimal models inside non-singleton groups. Empty splits give the flat
/// tree carrying `base`.
inline PCGLMSpec grouped_spec(const CategoricalDataset& layout, const std::vector<int>& splits, const NodeModel& base) {
    const int m = layout.categories;
    auto spec = PCGLMSpec::for_data(layout, splits.empty() ? PartitionTree::flat(m)
                                                           : PartitionTree::two_level(m, groups_from_splits(m, splits)));
    spec.models[0] = base;
    for (int id : spec.tree.non_terminal())
        if (id != 0) spec.models[id] = NodeModel::minimal_response();
    return spec;
}

// ---------------------------------------------------------------------------
// Block design <-> grouped tree

/// Tree equivalent to the canonical (reference, logistic, BlockSplit)
/// model: root children are the blocks, the root carries a canonical
/// complete model and the blocks carry minimal models. With `beta`, the
/// parameters are mapped as well: root intercepts
/// log(sum_{j in G} e^{a_j} / sum_{j in G_last} e^{a_j}), root slopes equal
/// to the block slopes, and within-block probabilities proportional to
/// e^{a_j}.
inline PCGLMSpec lemma1_transform(const GlmSpec& block, const CategoricalDataset& layout,
                                  const std::optional<Vector>& beta = std::nullopt) {
    if (block.ratio != RatioKind::Reference || block.cdf != CdfKind::logistic() ||
        block.design.kind != DesignKind::BlockSplit)
        throw SpecError("the block-to-tree transform needs a (reference, logistic, block_split) model");
    if (block.design.splits.empty()) throw SpecError("the block-to-tree transform needs at least one split");
    const int J = block.J;
    const auto groups = groups_from_splits(J, block.design.splits);
    PCGLMSpec spec = PCGLMSpec::for_data(layout, PartitionTree::two_level(J, groups));
    spec.variables.clear();
    std::vector<std::string> names;
    for (int c : block.design.variables) {
        spec.variables.push_back({spec.columns.at(static_cast<std::size_t>(c)), {c}});
        names.push_back(spec.columns[static_cast<std::size_t>(c)]);
    }
    spec.models[0] = NodeModel::glm(RatioKind::Reference, CdfKind::logistic(), DesignKind::Complete, names);
    for (int id : spec.tree.non_terminal())
        if (id != 0) spec.models[id] = NodeModel::minimal_response();
    if (!beta) return spec;

    if (beta->size() != block.columns()) throw SpecError("block parameter vector has the wrong length");
    const int p = static_cast<int>(block.design.variables.size());
    const int G = static_cast<int>(groups.size());
    Vector alpha(J);
    alpha.head(J - 1) = beta->head(J - 1);
    alpha[J - 1] = 0.0;
    const auto log_mass = [&](const Vertex& g) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int j : g) mx = std::max(mx, alpha[j]);
        double s = 0.0;
        for (int j : g) s += std::exp(alpha[j] - mx);
        return mx + std::log(s);
    };
    const double last = log_mass(groups.back());
    Vector root(static_cast<Eigen::Index>((G - 1) * (1 + p)));
    for (int g = 0; g < G - 1; ++g) {
        root[g] = log_mass(groups[static_cast<std::size_t>(g)]) - last;
        root.segment(G - 1 + g * p, p) = beta->segment(J - 1 + g * p, p);
    }
    spec.models[0].beta = root;
    for (int id : spec.tree.non_terminal()) {
        if (id == 0) continue;
        const auto& cats = spec.tree.node(id).categories;
        const double lm = log_mass(cats);
        Vector q(static_cast<Eigen::Index>(cats.size()));
        for (std::size_t k = 0; k < cats.size(); ++k) q[static_cast<Eigen::Index>(k)] = std::exp(alpha[cats[k]] - lm);
        spec.models[id].probs = q;
    }
    return spec;
}

/// Inverse of lemma1_transform on parameters: the block GLM and its beta.
inline std::pair<GlmSpec, Vector> lemma1_inverse(const PCGLMSpec& spec) {
    const auto& tree = spec.tree;
    const auto& root = tree.node(0);
    const int J = spec.J();
    const int G = static_cast<int>(root.children.size());
    const auto& rm = spec.model(0);
    if (rm.minimal || rm.ratio != RatioKind::Reference || rm.cdf != CdfKind::logistic() ||
        rm.design != DesignKind::Complete || !rm.beta)
        throw SpecError("the inverse transform needs a fitted canonical complete root");
    std::vector<int> splits;
    int end = 0;
    for (int g = 0; g < G; ++g) {
        const auto& cats = tree.node(root.children[static_cast<std::size_t>(g)]).categories;
        for (int j : cats)
            if (j != end++) throw SpecError("root children must be consecutive category blocks");
        if (g < G - 1) splits.push_back(end);
    }
    const auto block_probs = [&](int g) -> Vector {
        const int id = root.children[static_cast<std::size_t>(g)];
        if (tree.node(id).terminal()) return Vector::Ones(1);
        const auto& m = spec.model(id);
        if (!m.probs) throw SpecError("within-block probabilities missing at " + tree.vertex_label(id));
        return *m.probs;
    };
    const GlmSpec g0 = spec.node_glm(0);
    const int p = static_cast<int>(g0.design.variables.size());
    GlmSpec block{RatioKind::Reference, CdfKind::logistic(), DesignSpec::block_split(splits, g0.design.variables), J};
    Vector beta(block.columns());
    const Vector qlast = block_probs(G - 1);
    const double log_q_ref = std::log(qlast[qlast.size() - 1]);
    int j = 0;
    for (int g = 0; g < G; ++g) {
        const Vector q = block_probs(g);
        const double ag = g < G - 1 ? (*rm.beta)[g] : 0.0;
        for (Eigen::Index k = 0; k < q.size(); ++k, ++j)
            if (j < J - 1) beta[j] = std::log(q[k]) + ag - log_q_ref;
        if (g < G - 1) beta.segment(J - 1 + g * p, p) = rm.beta->segment(G - 1 + g * p, p);
    }
    return {block, beta};
}

// ---------------------------------------------------------------------------
// Extended procedure

struct ExtendedOptions {
    NodeModel base = NodeModel::glm(RatioKind::Cumulative, CdfKind::logistic(), DesignKind::Proportional);
    SelectionOptions selection;
    std::vector<std::string> candidates; ///< empty: every dataset variable
    bool refine = true;
    int max_student_df = 8;
};

struct ExtendedResult {
    PCGLMSpec spec;
    PCGLMFit fit;
    SelectionTrace trace;
    double pre_refinement_log_likelihood = 0.0;
    int parameters = 0;
};

namespace detail {

struct BuiltNode {
    Vertex categories; ///< global category indices
    std::vector<BuiltNode> children;
    std::optional<NodeModel> model;
};

inline std::string global_label(const Vertex& cats) {
    std::string s = "{";
    for (std::size_t k = 0; k < cats.size(); ++k) s += (k ? "," : "") + std::to_string(cats[k] + 1);
    return s + "}";
}

/// Rows with response in `members` (local indices), relabeled 0..|members|-1.
inline CategoricalDataset restrict_responses(const CategoricalDataset& d, const Vertex& members) {
    CategoricalDataset out = d;
    out.rows.clear();
    out.categories = static_cast<int>(members.size());
    out.category_names.clear();
    std::vector<int> map(static_cast<std::size_t>(d.categories), -1);
    for (std::size_t k = 0; k < members.size(); ++k) {
        map[static_cast<std::size_t>(members[k])] = static_cast<int>(k);
        out.category_names.push_back(d.category_names.empty() ? std::to_string(members[k] + 1)
                                                              : d.category_names[static_cast<std::size_t>(members[k])]);
    }
    for (const auto& r : d.rows) {
        const int y = map[static_cast<std::size_t>(r.response)];
        if (y >= 0) out.rows.push_back({r.x, y, r.weight});
    }
    return out;
}

class ExtendedRunner {
public:
    ExtendedRunner(const CategoricalDataset& data, const ExtendedOptions& opt, SelectionTrace& trace)
        : data_(data), opt_(opt), trace_(trace) {}

    BuiltNode process(const CategoricalDataset& d, const Vertex& cats, const std::vector<std::string>& candidates) {
        BuiltNode node{cats, {}, std::nullopt};
        const int m = static_cast<int>(cats.size());
        if (m == 1) return node;
        const std::string label = global_label(cats);
        const double n_bic = opt_.selection.bic_n == BicSampleSize::Node ? d.total_weight() : data_.total_weight();
        GlmSpec tmpl{opt_.base.ratio, opt_.base.cdf, DesignSpec{opt_.base.design, {}, {}, {}}, m};
        const auto choice = d.total_weight() > 0.0
                                ? select_variables(d, tmpl, candidates, std::max(n_bic, 1.0), opt_.selection, &trace_, label)
                                : VariableChoice{};
        const auto singletons = [&] {
            for (int c : cats) node.children.push_back({{c}, {}, std::nullopt});
        };
        if (choice.variables.empty()) {
            node.model = NodeModel::minimal_response();
            singletons();
            return node;
        }
        NodeModel base = opt_.base;
        base.variables = choice.variables;

        std::vector<int> accepted;
        double cur_ll = choice.log_likelihood;
        int cur_k = choice.parameters;
        for (;;) {
            std::vector<std::vector<int>> cands;
            for (int r = 1; r < m; ++r) {
                if (std::find(accepted.begin(), accepted.end(), r) != accepted.end()) continue;
                auto s = accepted;
                s.push_back(r);
                std::sort(s.begin(), s.end());
                if (static_cast<int>(s.size()) == m - 1) continue; // all singletons again
                cands.push_back(std::move(s));
            }
            if (cands.empty()) break;
            struct Out {
                bool ok = false;
                double ll = 0.0;
                int k = 0;
                std::string note;
            };
            const auto fits = parallel_map<Out>(cands.size(), opt_.selection.threads, [&](std::size_t i) {
                Out o;
                const auto spec = grouped_spec(d, cands[i], base);
                o.k = spec.parameters();
                try {
                    const auto f = pcglm_fit(spec, d, PCGLMFitOptions{opt_.selection.fit, 1});
                    o.ok = std::isfinite(f.log_likelihood);
                    o.ll = f.log_likelihood;
                    if (!f.converged) o.note = f.diagnostics.empty() ? "not converged" : f.diagnostics.front();
                } catch (const Error& e) {
                    o.note = e.what();
                }
                return o;
            });
            std::optional<std::size_t> best;
            for (std::size_t i = 0; i < cands.size(); ++i)
                if (fits[i].ok && (!best || fits[i].ll > fits[*best].ll)) best = i;
            bool accept = false;
            double stat = std::numeric_limits<double>::quiet_NaN(), pval = stat;
            if (best) {
                const auto& b = fits[*best];
                if (b.k > cur_k) {
                    if (b.ll >= cur_ll - 1e-8) {
                        const auto t = deviance_test(b.ll, cur_ll, b.k - cur_k, opt_.selection.alpha);
                        stat = t.statistic;
                        pval = t.p_value;
                        accept = t.accept;
                    }
                } else {
                    accept = b.ll > cur_ll;
                }
            }
            for (std::size_t i = 0; i < cands.size(); ++i) {
                TraceRecord r;
                r.stage = "split";
                r.node = label;
                r.candidate = base_description(base) + " groups " + groups_label(cats, cands[i]);
                r.log_likelihood = fits[i].ok ? fits[i].ll : std::numeric_limits<double>::quiet_NaN();
                r.parameters = fits[i].k;
                r.n_obs = d.total_weight();
                r.note = fits[i].note;
                if (!fits[i].ok) r.decision = "failed";
                else if (best && i == *best) {
                    r.decision = accept ? "accepted" : "rejected";
                    r.statistic = stat;
                    r.p_value = pval;
                } else {
                    r.decision = "candidate";
                }
                trace_.add(std::move(r));
            }
            if (!accept) break;
            accepted = cands[*best];
            cur_ll = fits[*best].ll;
            cur_k = fits[*best].k;
        }

        node.model = base;
        if (accepted.empty()) {
            singletons();
            return node;
        }
        for (const auto& g : groups_from_splits(m, accepted)) {
            Vertex gc;
            for (int j : g) gc.push_back(cats[static_cast<std::size_t>(j)]);
            if (g.size() == 1) node.children.push_back({gc, {}, std::nullopt});
            else node.children.push_back(process(restrict_responses(d, g), gc, choice.variables));
        }
        return node;
    }

    static std::string base_description(const NodeModel& m) {
        return "(" + std::string(to_string(m.ratio)) + ", " + m.cdf.name() + ", " + std::string(to_string(m.design)) +
               ") {" + join(m.variables) + "}";
    }

    static std::string groups_label(const Vertex& cats, const std::vector<int>& splits) {
        std::string s;
        const auto gs = groups_from_splits(static_cast<int>(cats.size()), splits);
        for (std::size_t g = 0; g < gs.size(); ++g) {
            Vertex v;
            for (int j : gs[g]) v.push_back(cats[static_cast<std::size_t>(j)]);
            s += (g ? "|" : "") + global_label(v);
        }
        return s;
    }

private:
    const CategoricalDataset& data_;
    const ExtendedOptions& opt_;
    SelectionTrace& trace_;
};

inline void assemble(PCGLMSpec& spec, int id, const BuiltNode& b) {
    if (b.model) spec.models[id] = *b.model;
    for (const auto& c : b.children) {
        const int cid = spec.tree.add_child(id, c.categories);
        assemble(spec, cid, c);
    }
}

} // namespace detail

/// CDFs tried by the refinement pass.
inline std::vector<CdfKind> refinement_cdfs(int max_student_df) {
    std::vector<CdfKind> out = {CdfKind::logistic(), CdfKind::normal(), CdfKind::laplace(), CdfKind::gumbel_min(),
                                CdfKind::gumbel_max()};
    for (int df = 1; df <= max_student_df; ++df) out.push_back(CdfKind::student(df));
    return out;
}

/// Grows a partition tree over ordered categories: covariate selection,
/// grouping of indistinguishable categories and recursion into groups,
/// then a CDF refinement pass per fitted vertex.
inline ExtendedResult extended_procedure(const CategoricalDataset& data, const ExtendedOptions& opt = {}) {
    data.validate();
    ExtendedResult res;
    std::vector<std::string> candidates = opt.candidates;
    if (candidates.empty())
        for (const auto& v : data.variables) candidates.push_back(v.name);
    Vertex all(static_cast<std::size_t>(data.categories));
    std::iota(all.begin(), all.end(), 0);
    detail::ExtendedRunner runner(data, opt, res.trace);
    const auto built = runner.process(data, all, candidates);

    res.spec = PCGLMSpec::for_data(data, PartitionTree::with_root(data.categories, all));
    detail::assemble(res.spec, 0, built);
    const PCGLMFitOptions fopt{opt.selection.fit, opt.selection.threads};
    res.fit = pcglm_fit(res.spec, data, fopt);
    res.pre_refinement_log_likelihood = res.fit.log_likelihood;
    {
        TraceRecord r;
        r.stage = "structure";
        r.node = "root";
        r.candidate = res.spec.tree.to_string();
        r.log_likelihood = res.fit.log_likelihood;
        r.parameters = res.fit.parameters;
        r.n_obs = data.total_weight();
        r.decision = "selected";
        res.trace.add(std::move(r));
    }

    if (opt.refine) {
        const auto cdfs = refinement_cdfs(opt.max_student_df);
        for (int id : res.spec.tree.non_terminal()) {
            auto& m = res.spec.models.at(id);
            if (m.minimal) continue;
            const auto sub = partition_data(res.spec.tree, data, id);
            const std::string label = res.spec.tree.vertex_label(id);
            const auto fits = detail::parallel_map<detail::CandidateFit>(cdfs.size(), opt.selection.threads, [&](std::size_t i) {
                detail::CandidateFit c;
                GlmSpec g = res.spec.node_glm(id);
                g.cdf = cdfs[i];
                c.parameters = g.columns();
                try {
                    const auto f = fit(g, sub, opt.selection.fit);
                    c.ok = true;
                    c.converged = f.converged;
                    c.log_likelihood = f.log_likelihood;
                } catch (const Error& e) {
                    c.error = e.what();
                }
                return c;
            });
            const double current = res.fit.at(id).log_likelihood;
            std::optional<std::size_t> best;
            double best_ll = current;
            for (std::size_t i = 0; i < cdfs.size(); ++i)
                if (fits[i].ok && fits[i].log_likelihood > best_ll + 1e-9) {
                    best = i;
                    best_ll = fits[i].log_likelihood;
                }
            for (std::size_t i = 0; i < cdfs.size(); ++i) {
                TraceRecord r;
                r.stage = "refine";
                r.node = label;
                r.candidate = "(" + std::string(to_string(m.ratio)) + ", " + cdfs[i].name() + ", " +
                              std::string(to_string(m.design)) + ") {" + detail::join(m.variables) + "}";
                r.log_likelihood = fits[i].log_likelihood;
                r.parameters = fits[i].parameters;
                r.n_obs = sub.total_weight();
                r.decision = !fits[i].ok ? "failed" : (best && i == *best ? "accepted" : "rejected");
                r.note = fits[i].error;
                res.trace.add(std::move(r));
            }
            if (best) m.cdf = cdfs[*best];
        }
        res.fit = pcglm_fit(res.spec, data, fopt);
    }
    res.parameters = res.fit.parameters;
    {
        TraceRecord r;
        r.stage = "final";
        r.node = "root";
        r.candidate = res.spec.tree.to_string();
        r.log_likelihood = res.fit.log_likelihood;
        r.parameters = res.fit.parameters;
        r.n_obs = data.total_weight();
        r.bic = bic(res.fit.log_likelihood, res.fit.parameters, std::max(1.0, data.total_weight()));
        r.decision = "selected";
        res.trace.add(std::move(r));
    }
    return res;
}

} // namespace pcglm
