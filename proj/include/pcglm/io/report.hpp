#pragma once

// Plain-text fit reports: log-likelihoods at 6 decimals, estimates and
// standard errors at 6 significant digits.

#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "pcglm/pcglm_model.hpp"

namespace pcglm::io {

inline std::string fixed6(double v) {
    if (!std::isfinite(v)) return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

inline std::string sig6(double v) {
    if (!std::isfinite(v)) return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

/// Labels of the columns of Z: intercepts "alpha_j", then covariate
/// columns suffixed by equation (complete) or block (block split).
inline std::vector<std::string> parameter_names(const GlmSpec& g, const std::vector<std::string>& columns) {
    std::vector<std::string> out;
    const int m = g.J - 1;
    for (int j = 1; j <= m; ++j) out.push_back("alpha_" + std::to_string(j));
    const auto col = [&](int c) { return c >= 0 && c < static_cast<int>(columns.size()) ? columns[static_cast<std::size_t>(c)] : "x" + std::to_string(c); };
    switch (g.design.kind) {
    case DesignKind::Complete:
        for (int j = 1; j <= m; ++j)
            for (int c : g.design.variables) out.push_back(col(c) + ":" + std::to_string(j));
        break;
    case DesignKind::Proportional:
        for (int c : g.design.variables) out.push_back(col(c));
        break;
    case DesignKind::BlockSplit:
        for (std::size_t b = 0; b < g.design.splits.size(); ++b)
            for (int c : g.design.variables) out.push_back(col(c) + ":block" + std::to_string(b + 1));
        break;
    default:
        while (static_cast<int>(out.size()) < g.columns()) out.push_back("beta_" + std::to_string(out.size() + 1));
    }
    return out;
}

/// Log-likelihood of `data` under the parameters stored in `spec`.
inline double stored_log_likelihood(const PCGLMSpec& spec, const CategoricalDataset& data) {
    double ll = 0.0;
    for (const auto& r : data.rows) {
        if (r.weight == 0.0) continue;
        ll += r.weight * std::log(pcglm_predict(spec, r.x).probs[r.response]);
    }
    return ll;
}

inline std::string child_labels(const PCGLMSpec& spec, int id) {
    std::string s;
    const auto& n = spec.tree.node(id);
    for (std::size_t k = 0; k < n.children.size(); ++k) s += (k ? " " : "") + spec.tree.vertex_label(n.children[k]);
    return s;
}

inline std::string fit_report(const PCGLMSpec& spec, const PCGLMFit& fit, const std::string& title = "fit") {
    std::ostringstream os;
    const auto line = [&](const std::string& k, const std::string& v) { os << k << ": " << v << "\n"; };
    os << "pcglm " << title << " report\n";
    line("tree", spec.tree.to_string());
    std::string cats;
    for (std::size_t j = 0; j < spec.categories.size(); ++j) cats += (j ? ", " : "") + spec.categories[j];
    line("categories", cats);
    line("observations", sig6(fit.n_obs));
    line("log-likelihood", fixed6(fit.log_likelihood));
    line("parameters", std::to_string(fit.parameters));
    line("equations", std::to_string(fit.equations));
    line("BIC", fit.n_obs >= 1.0 ? fixed6(fit.log_likelihood - 0.5 * fit.parameters * std::log(fit.n_obs)) : "nan");
    line("converged", fit.converged ? "yes" : "no");
    for (const auto& nf : fit.nodes) {
        os << "\nvertex " << nf.vertex;
        const auto& m = spec.model(nf.node);
        if (nf.minimal || nf.degenerate) {
            os << "  minimal" << (nf.degenerate && !nf.minimal ? " (degenerate)" : "") << "\n";
        } else {
            os << "  (" << to_string(m.ratio) << ", " << m.cdf.name() << ", " << to_string(m.design) << ")";
            os << "  variables: " << (m.variables.empty() ? std::string("none") : [&] {
                std::string s;
                for (std::size_t k = 0; k < m.variables.size(); ++k) s += (k ? ", " : "") + m.variables[k];
                return s;
            }());
            if (m.share_group >= 0) os << "  share group " << m.share_group;
            os << "\n";
        }
        os << "  children: " << child_labels(spec, nf.node) << "\n";
        os << "  n = " << sig6(nf.n_obs) << "  log-likelihood = " << fixed6(nf.log_likelihood)
           << "  parameters = " << nf.parameters << "\n";
        if (nf.glm && !nf.degenerate && nf.result.beta.size() > 0) {
            const auto names = parameter_names(*nf.glm, spec.columns);
            char buf[256];
            std::snprintf(buf, sizeof buf, "  %-24s %14s %14s\n", "term", "estimate", "std.error");
            os << buf;
            for (Eigen::Index k = 0; k < nf.result.beta.size(); ++k) {
                const double se = k < nf.result.standard_errors.size() ? nf.result.standard_errors[k]
                                                                       : std::numeric_limits<double>::quiet_NaN();
                std::snprintf(buf, sizeof buf, "  %-24s %14s %14s\n", names[static_cast<std::size_t>(k)].c_str(),
                              sig6(nf.result.beta[k]).c_str(), sig6(se).c_str());
                os << buf;
            }
        } else {
            os << "  probabilities:";
            for (Eigen::Index k = 0; k < nf.probs.size(); ++k) os << " " << sig6(nf.probs[k]);
            os << "\n";
        }
        for (const auto& w : nf.warnings) os << "  warning: " << w << "\n";
    }
    if (!fit.diagnostics.empty()) {
        os << "\ndiagnostics:\n";
        for (const auto& d : fit.diagnostics) os << "  " << d << "\n";
    }
    return os.str();
}

/// Report of stored parameters, with the data log-likelihood when given.
inline std::string parameter_report(const PCGLMSpec& spec, const CategoricalDataset* data = nullptr) {
    std::ostringstream os;
    os << "pcglm parameter report\n";
    os << "tree: " << spec.tree.to_string() << "\n";
    os << "parameters: " << spec.parameters() << "\n";
    if (data) {
        const double ll = stored_log_likelihood(spec, *data);
        const double n = data->total_weight();
        os << "observations: " << sig6(n) << "\n";
        os << "log-likelihood: " << fixed6(ll) << "\n";
        os << "BIC: " << fixed6(ll - 0.5 * spec.parameters() * std::log(n)) << "\n";
    }
    for (int id : spec.tree.non_terminal()) {
        const auto& m = spec.model(id);
        os << "\nvertex " << spec.tree.vertex_label(id);
        if (m.minimal) os << "  minimal\n";
        else os << "  (" << to_string(m.ratio) << ", " << m.cdf.name() << ", " << to_string(m.design) << ")\n";
        os << "  children: " << child_labels(spec, id) << "\n";
        if (!m.minimal && m.beta) {
            const auto names = parameter_names(spec.node_glm(id), spec.columns);
            for (Eigen::Index k = 0; k < m.beta->size(); ++k) {
                char buf[256];
                std::snprintf(buf, sizeof buf, "  %-24s %14s\n", names[static_cast<std::size_t>(k)].c_str(), sig6((*m.beta)[k]).c_str());
                os << buf;
            }
        } else if (m.probs) {
            os << "  probabilities:";
            for (Eigen::Index k = 0; k < m.probs->size(); ++k) os << " " << sig6((*m.probs)[k]);
            os << "\n";
        } else {
            os << "  no stored parameters\n";
        }
    }
    return os.str();
}

} // namespace pcglm::io
