#pragma once

// JSON formats: model specifications (tree as nested lists of category
// names plus one entry per fitted vertex) and Hasse diagrams.

#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "pcglm/errors.hpp"
#include "pcglm/pcglm_model.hpp"
#include "pcglm/poset.hpp"

namespace pcglm::io {

using Json = nlohmann::ordered_json;

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open '" + path + "'");
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

inline void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot write '" + path + "'");
    out << text;
}

inline Json parse_json(const std::string& text, const std::string& what) {
    try {
        return Json::parse(text);
    } catch (const Json::parse_error& e) {
        throw ParseError(what + ": " + e.what());
    }
}

namespace detail {

inline std::vector<std::string> category_names(const PCGLMSpec& spec) {
    if (!spec.categories.empty()) return spec.categories;
    std::vector<std::string> out;
    for (int j = 1; j <= spec.J(); ++j) out.push_back(std::to_string(j));
    return out;
}

inline Json vector_json(const Vector& v) {
    Json a = Json::array();
    for (Eigen::Index k = 0; k < v.size(); ++k) a.push_back(v[k]);
    return a;
}

inline Vector json_vector(const Json& a, const std::string& what) {
    if (!a.is_array()) throw ParseError(what + " must be an array of numbers");
    Vector v(static_cast<Eigen::Index>(a.size()));
    for (std::size_t k = 0; k < a.size(); ++k) {
        if (!a[k].is_number()) throw ParseError(what + " must be an array of numbers");
        v[static_cast<Eigen::Index>(k)] = a[k].get<double>();
    }
    return v;
}

template <class T>
T get_field(const Json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) throw ParseError(where + ": missing field '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const Json::exception&) {
        throw ParseError(where + ": field '" + key + "' has the wrong type");
    }
}

inline Json tree_json(const PartitionTree& t, int id, const std::vector<std::string>& names) {
    const auto& n = t.node(id);
    if (n.terminal()) return names.at(static_cast<std::size_t>(n.categories.front()));
    Json a = Json::array();
    for (int c : n.children) a.push_back(tree_json(t, c, names));
    return a;
}

inline void collect_leaves(const Json& j, std::vector<std::string>& out) {
    if (j.is_string()) out.push_back(j.get<std::string>());
    else if (j.is_array())
        for (const auto& c : j) collect_leaves(c, out);
    else throw ParseError("tree entries must be category names or lists");
}

inline Vertex vertex_of(const Json& j, const std::map<std::string, int>& index) {
    std::vector<std::string> leaves;
    collect_leaves(j, leaves);
    Vertex v;
    for (const auto& l : leaves) {
        auto it = index.find(l);
        if (it == index.end()) throw ParseError("tree mentions unknown category '" + l + "'");
        v.push_back(it->second);
    }
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
}

inline void build_tree(PartitionTree& t, int parent, const Json& j, const std::map<std::string, int>& index) {
    for (const auto& c : j) {
        if (c.is_array() && c.empty()) throw ParseError("tree contains an empty list");
        const int id = t.add_child(parent, vertex_of(c, index));
        if (c.is_array()) build_tree(t, id, c, index);
    }
}

} // namespace detail

/// Canonical JSON form of a specification; parameters are written when
/// present.
inline Json spec_to_json(const PCGLMSpec& spec) {
    const auto names = detail::category_names(spec);
    Json j;
    j["categories"] = names;
    j["columns"] = spec.columns;
    Json covs = Json::array();
    for (const auto& v : spec.variables) {
        Json c;
        c["name"] = v.name;
        Json cols = Json::array();
        for (int k : v.columns) cols.push_back(spec.columns.at(static_cast<std::size_t>(k)));
        c["columns"] = cols;
        covs.push_back(c);
    }
    j["covariates"] = covs;
    j["tree"] = detail::tree_json(spec.tree, PartitionTree::root(), names);
    Json nodes = Json::array();
    for (int id : spec.tree.non_terminal()) {
        auto it = spec.models.find(id);
        if (it == spec.models.end()) continue;
        const auto& m = it->second;
        Json n;
        Json vertex = Json::array();
        for (int c : spec.tree.node(id).categories) vertex.push_back(names.at(static_cast<std::size_t>(c)));
        n["vertex"] = vertex;
        if (m.minimal) {
            n["design"] = "minimal";
        } else {
            n["ratio"] = std::string(to_string(m.ratio));
            n["cdf"] = std::string(to_string(m.cdf.family()));
            if (m.cdf.family() == CdfFamily::Student) n["df"] = m.cdf.df();
            n["design"] = std::string(to_string(m.design));
            if (m.design == DesignKind::BlockSplit) n["splits"] = m.splits;
            n["variables"] = m.variables;
        }
        if (m.share_group >= 0) n["share_group"] = m.share_group;
        if (m.beta) n["beta"] = detail::vector_json(*m.beta);
        if (m.probs) n["probs"] = detail::vector_json(*m.probs);
        nodes.push_back(n);
    }
    j["nodes"] = nodes;
    return j;
}

inline std::string spec_to_string(const PCGLMSpec& spec) { return spec_to_json(spec).dump(2) + "\n"; }

/// Parses a specification; structural problems in the tree are reported
/// with the violated rule and vertex.
inline PCGLMSpec spec_from_json(const Json& j) {
    if (!j.is_object()) throw ParseError("specification must be a JSON object");
    PCGLMSpec spec;
    spec.categories = detail::get_field<std::vector<std::string>>(j, "categories", "specification");
    std::map<std::string, int> index;
    for (std::size_t k = 0; k < spec.categories.size(); ++k)
        if (!index.emplace(spec.categories[k], static_cast<int>(k)).second)
            throw ParseError("duplicate category '" + spec.categories[k] + "'");
    if (spec.categories.size() < 2) throw ParseError("specification needs at least two categories");

    if (j.contains("columns")) spec.columns = detail::get_field<std::vector<std::string>>(j, "columns", "specification");
    if (j.contains("covariates")) {
        for (const auto& c : j.at("covariates")) {
            Variable v;
            v.name = detail::get_field<std::string>(c, "name", "covariate");
            std::vector<std::string> cols = c.contains("columns")
                                                ? detail::get_field<std::vector<std::string>>(c, "columns", "covariate " + v.name)
                                                : std::vector<std::string>{v.name};
            for (const auto& col : cols) {
                auto it = std::find(spec.columns.begin(), spec.columns.end(), col);
                if (it == spec.columns.end()) {
                    spec.columns.push_back(col);
                    it = spec.columns.end() - 1;
                }
                v.columns.push_back(static_cast<int>(it - spec.columns.begin()));
            }
            spec.variables.push_back(std::move(v));
        }
    }

    if (!j.contains("tree") || !j.at("tree").is_array()) throw ParseError("specification needs a 'tree' list");
    const Json& tj = j.at("tree");
    spec.tree = PartitionTree::with_root(static_cast<int>(spec.categories.size()), detail::vertex_of(tj, index));
    detail::build_tree(spec.tree, PartitionTree::root(), tj, index);
    if (auto v = validate_tree(spec.tree)) throw ParseError("invalid tree: " + to_string(*v));

    if (j.contains("nodes")) {
        for (const auto& n : j.at("nodes")) {
            if (!n.contains("vertex")) throw ParseError("node entry without 'vertex'");
            const Vertex vx = detail::vertex_of(n.at("vertex"), index);
            const int id = spec.tree.find(vx);
            const std::string where = "node " + n.at("vertex").dump();
            if (id < 0) throw ParseError(where + ": vertex not in the tree");
            if (spec.tree.node(id).terminal()) throw ParseError(where + ": terminal vertices carry no model");
            if (spec.models.count(id)) throw ParseError(where + ": listed twice");
            NodeModel m;
            try {
                const auto design = detail::get_field<std::string>(n, "design", where);
                if (design == "minimal") {
                    m.minimal = true;
                } else {
                    m.ratio = parse_ratio(detail::get_field<std::string>(n, "ratio", where));
                    const auto fam = parse_cdf_family(detail::get_field<std::string>(n, "cdf", where));
                    m.cdf = fam == CdfFamily::Student ? CdfKind::student(n.value("df", 1)) : CdfKind(fam);
                    m.design = parse_design_kind(design);
                    if (m.design == DesignKind::NestedRoot || m.design == DesignKind::ConditionalNestedRoot)
                        throw ParseError(where + ": nested root designs are built by the nested logit fitter");
                    if (n.contains("splits")) m.splits = detail::get_field<std::vector<int>>(n, "splits", where);
                    if (n.contains("variables"))
                        m.variables = detail::get_field<std::vector<std::string>>(n, "variables", where);
                }
            } catch (const SpecError& e) {
                throw ParseError(where + ": " + e.what());
            }
            if (n.contains("share_group")) m.share_group = detail::get_field<int>(n, "share_group", where);
            if (n.contains("beta")) m.beta = detail::json_vector(n.at("beta"), where + " beta");
            if (n.contains("probs")) m.probs = detail::json_vector(n.at("probs"), where + " probs");
            spec.models[id] = std::move(m);
        }
    }
    return spec;
}

inline PCGLMSpec spec_from_string(const std::string& text) { return spec_from_json(parse_json(text, "specification")); }

inline PCGLMSpec load_spec(const std::string& path) { return spec_from_string(read_file(path)); }

/// Re-targets a specification to the covariate layout of `data`; every
/// variable used by a vertex must exist in the data.
inline PCGLMSpec bind_to_data(PCGLMSpec spec, const CategoricalDataset& data) {
    for (const auto& [id, m] : spec.models)
        for (const auto& v : m.variables)
            if (std::none_of(data.variables.begin(), data.variables.end(), [&](const Variable& d) { return d.name == v; }))
                throw SpecError("vertex " + spec.tree.vertex_label(id) + " uses variable '" + v +
                                "' which the data does not provide");
    spec.columns = data.column_names;
    spec.variables = data.variables;
    return spec;
}

// ---------------------------------------------------------------------------
// Hasse diagrams

inline Json hasse_to_json(const HasseDiagram& h) {
    Json j;
    j["elements"] = h.elements;
    Json covers = Json::array();
    for (auto [a, b] : h.covers)
        covers.push_back(Json::array({h.elements[static_cast<std::size_t>(a)], h.elements[static_cast<std::size_t>(b)]}));
    j["covers"] = covers;
    return j;
}

inline HasseDiagram hasse_from_json(const Json& j) {
    if (!j.is_object()) throw ParseError("Hasse diagram must be a JSON object");
    HasseDiagram h;
    h.elements = detail::get_field<std::vector<std::string>>(j, "elements", "Hasse diagram");
    if (j.contains("covers")) {
        for (const auto& c : j.at("covers")) {
            if (!c.is_array() || c.size() != 2 || !c[0].is_string() || !c[1].is_string())
                throw ParseError("each cover must be a pair of element names");
            try {
                h.covers.emplace_back(h.index_of(c[0].get<std::string>()), h.index_of(c[1].get<std::string>()));
            } catch (const SpecError&) {
                throw ParseError("cover " + c.dump() + " names an unknown element");
            }
        }
    }
    try {
        h.validate();
    } catch (const SpecError& e) {
        throw ParseError(std::string("Hasse diagram: ") + e.what());
    }
    return h;
}

/// Specification skeleton for a poset tree: ordered vertices get
/// `ordered_ratio` with a proportional logistic design, unordered vertices
/// a complete reference logit.
inline PCGLMSpec poset_skeleton(const PosetTree& pt, RatioKind ordered_ratio, const std::vector<std::string>& variables) {
    PCGLMSpec spec;
    spec.categories = pt.categories;
    for (std::size_t k = 0; k < variables.size(); ++k) {
        spec.columns.push_back(variables[k]);
        spec.variables.push_back({variables[k], {static_cast<int>(k)}});
    }
    spec.tree = pt.tree;
    for (int id : spec.tree.non_terminal()) {
        const bool ordered = pt.ordered.count(id) ? pt.ordered.at(id) : false;
        spec.models[id] = ordered ? NodeModel::glm(ordered_ratio, CdfKind::logistic(), DesignKind::Proportional, variables)
                                  : NodeModel::glm(RatioKind::Reference, CdfKind::logistic(), DesignKind::Complete, variables);
    }
    for (std::size_t g = 0; g < pt.sharing_groups.size(); ++g)
        for (int id : pt.sharing_groups[g]) spec.models[id].share_group = static_cast<int>(g);
    return spec;
}

} // namespace pcglm::io
