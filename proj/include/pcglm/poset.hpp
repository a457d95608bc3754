#pragma once

// Partial orders over categories and the partition trees built from them.

#include <algorithm>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "pcglm/errors.hpp"
#include "pcglm/partition_tree.hpp"

namespace pcglm {

/// Elements with cover edges (lower, upper) given as element indices.
struct HasseDiagram {
    std::vector<std::string> elements;
    std::vector<std::pair<int, int>> covers;

    [[nodiscard]] int size() const { return static_cast<int>(elements.size()); }

    [[nodiscard]] int index_of(const std::string& name) const {
        auto it = std::find(elements.begin(), elements.end(), name);
        if (it == elements.end()) throw SpecError("unknown poset element '" + name + "'");
        return static_cast<int>(it - elements.begin());
    }

    /// reach[a][b] is true when a <= b (reflexive transitive closure).
    /// Throws SpecError on a cycle.
    [[nodiscard]] std::vector<std::vector<bool>> closure() const {
        const int n = size();
        std::vector<std::vector<bool>> reach(static_cast<std::size_t>(n), std::vector<bool>(static_cast<std::size_t>(n), false));
        for (int i = 0; i < n; ++i) reach[i][i] = true;
        for (auto [a, b] : covers) {
            if (a < 0 || b < 0 || a >= n || b >= n) throw SpecError("cover edge refers to an unknown element");
            if (a == b) throw SpecError("cover edge from '" + elements[a] + "' to itself");
            reach[a][b] = true;
        }
        for (int k = 0; k < n; ++k)
            for (int i = 0; i < n; ++i)
                if (reach[i][k])
                    for (int j = 0; j < n; ++j)
                        if (reach[k][j]) reach[i][j] = true;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j)
                if (reach[i][j] && reach[j][i])
                    throw SpecError("order relation has a cycle through '" + elements[i] + "' and '" +
                                    elements[j] + "'");
        return reach;
    }

    /// Throws SpecError when the edges are cyclic, duplicated or not covers.
    void validate() const {
        std::vector<std::string> names = elements;
        std::sort(names.begin(), names.end());
        if (std::adjacent_find(names.begin(), names.end()) != names.end())
            throw SpecError("poset element names must be distinct");
        const auto reach = closure();
        auto sorted = covers;
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
            throw SpecError("duplicated cover edge");
        for (auto [a, b] : covers)
            for (int k = 0; k < size(); ++k)
                if (k != a && k != b && reach[a][k] && reach[k][b])
                    throw SpecError("edge " + elements[a] + " < " + elements[b] + " is implied through " +
                                    elements[k] + " and is not a cover");
    }

    /// Diagram of the order generated by `relation` (transitive reduction).
    static HasseDiagram from_relation(std::vector<std::string> elements, const std::vector<std::pair<int, int>>& relation) {
        HasseDiagram h{std::move(elements), relation};
        const auto reach = h.closure();
        h.covers.clear();
        const int n = h.size();
        for (int a = 0; a < n; ++a)
            for (int b = 0; b < n; ++b) {
                if (a == b || !reach[a][b]) continue;
                bool cover = true;
                for (int k = 0; k < n && cover; ++k)
                    if (k != a && k != b && reach[a][k] && reach[k][b]) cover = false;
                if (cover) h.covers.emplace_back(a, b);
            }
        return h;
    }

    /// Graphviz rendering with edges drawn upward.
    [[nodiscard]] std::string to_dot() const {
        std::string s = "digraph hasse {\n  rankdir=BT;\n";
        for (const auto& e : elements) s += "  \"" + e + "\";\n";
        for (auto [a, b] : covers) s += "  \"" + elements[a] + "\" -> \"" + elements[b] + "\";\n";
        return s + "}\n";
    }
};

/// Sub-diagram on `members` (indices into h), keeping their relative order.
inline HasseDiagram induced(const HasseDiagram& h, const std::vector<int>& members) {
    HasseDiagram out;
    std::map<int, int> local;
    for (int m : members) {
        local[m] = static_cast<int>(out.elements.size());
        out.elements.push_back(h.elements[m]);
    }
    for (auto [a, b] : h.covers)
        if (local.count(a) && local.count(b)) out.covers.emplace_back(local[a], local[b]);
    return out;
}

/// Connected components of the undirected cover graph, ordered by their
/// first element in the diagram's element order.
inline std::vector<HasseDiagram> components(const HasseDiagram& h) {
    const int n = h.size();
    std::vector<int> parent(static_cast<std::size_t>(n));
    std::iota(parent.begin(), parent.end(), 0);
    const auto root = [&](int x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    for (auto [a, b] : h.covers) parent[root(a)] = root(b);
    std::vector<std::vector<int>> groups;
    std::map<int, std::size_t> slot;
    for (int i = 0; i < n; ++i) {
        auto [it, inserted] = slot.try_emplace(root(i), groups.size());
        if (inserted) groups.emplace_back();
        groups[it->second].push_back(i);
    }
    std::vector<HasseDiagram> out;
    for (const auto& g : groups) out.push_back(induced(h, g));
    return out;
}

/// Levels by longest cover path from a minimal element. Within a level
/// elements are sorted by name. Needs a connected diagram.
inline std::vector<std::vector<std::string>> antichain_levels(const HasseDiagram& h) {
    if (h.size() == 0) return {};
    if (components(h).size() != 1)
        throw SpecError("antichain levels need a connected poset; split it into components first");
    (void)h.closure();
    const int n = h.size();
    std::vector<int> level(static_cast<std::size_t>(n), 0);
    // Longest-path relaxation; n rounds suffice on an acyclic graph.
    for (int round = 0; round < n; ++round) {
        bool changed = false;
        for (auto [a, b] : h.covers)
            if (level[b] < level[a] + 1) {
                level[b] = level[a] + 1;
                changed = true;
            }
        if (!changed) break;
    }
    const int depth = *std::max_element(level.begin(), level.end()) + 1;
    std::vector<std::vector<std::string>> out(static_cast<std::size_t>(depth));
    for (int i = 0; i < n; ++i) out[level[i]].push_back(h.elements[i]);
    for (auto& l : out) std::sort(l.begin(), l.end());
    return out;
}

/// Partition tree together with the category order it induces and
/// structural hints for choosing node models.
struct PosetTree {
    PartitionTree tree;
    std::vector<std::string> categories;        ///< category j has name categories[j]
    std::map<int, bool> ordered;                ///< per non-terminal node: are its children ordered?
    std::vector<std::vector<int>> sharing_groups; ///< node indices forced to share parameters
};

namespace detail {

/// Adds `levels` below node `id`: one child per level, non-singleton levels
/// split into their elements.
inline void add_levels(PosetTree& pt, int id, const std::vector<std::vector<std::string>>& levels,
                       const std::map<std::string, int>& index) {
    pt.ordered[id] = true;
    for (const auto& lvl : levels) {
        Vertex v;
        for (const auto& e : lvl) v.push_back(index.at(e));
        const int c = pt.tree.add_child(id, v);
        if (lvl.size() > 1) {
            pt.ordered[c] = false;
            for (const auto& e : lvl) pt.tree.add_child(c, {index.at(e)});
        }
    }
}

inline void collect_level_order(const std::vector<std::vector<std::string>>& levels, std::vector<std::string>& out) {
    for (const auto& l : levels) out.insert(out.end(), l.begin(), l.end());
}

} // namespace detail

/// One component: root children are the antichain levels. Several
/// components: root children are the components, each split into its
/// levels. Categories are numbered in leaf order.
inline PosetTree poset_to_tree(const HasseDiagram& h) {
    h.validate();
    if (h.size() < 2) throw SpecError("a partition tree needs at least 2 categories");
    const auto comps = components(h);
    std::vector<std::vector<std::vector<std::string>>> comp_levels;
    PosetTree pt;
    for (const auto& c : comps) {
        comp_levels.push_back(antichain_levels(c));
        detail::collect_level_order(comp_levels.back(), pt.categories);
    }
    std::map<std::string, int> index;
    for (std::size_t j = 0; j < pt.categories.size(); ++j) index[pt.categories[j]] = static_cast<int>(j);
    const int J = static_cast<int>(pt.categories.size());
    Vertex all(static_cast<std::size_t>(J));
    std::iota(all.begin(), all.end(), 0);
    pt.tree = PartitionTree::with_root(J, all);
    if (comps.size() == 1) {
        detail::add_levels(pt, 0, comp_levels.front(), index);
        return pt;
    }
    pt.ordered[0] = false;
    for (std::size_t k = 0; k < comps.size(); ++k) {
        Vertex v;
        for (const auto& e : comps[k].elements) v.push_back(index.at(e));
        const int c = pt.tree.add_child(0, v);
        if (v.size() > 1) detail::add_levels(pt, c, comp_levels[k], index);
    }
    return pt;
}

enum class FactorKind { Ordinal, Nominal };

struct OrderedFactor {
    std::string name;
    std::vector<std::string> levels;
    FactorKind kind = FactorKind::Ordinal;
};

/// Factors combined into one response; element names concatenate level
/// names in factor order, the first factor varying slowest.
struct OrderedFactorSpec {
    std::vector<OrderedFactor> factors;
    std::string separator;

    [[nodiscard]] std::vector<std::vector<int>> combinations() const {
        std::vector<std::vector<int>> out{{}};
        for (const auto& f : factors) {
            std::vector<std::vector<int>> next;
            for (const auto& c : out)
                for (int l = 0; l < static_cast<int>(f.levels.size()); ++l) {
                    auto d = c;
                    d.push_back(l);
                    next.push_back(std::move(d));
                }
            out = std::move(next);
        }
        return out;
    }

    [[nodiscard]] std::string name_of(const std::vector<int>& combo) const {
        std::string s;
        for (std::size_t k = 0; k < combo.size(); ++k)
            s += (k ? separator : "") + factors[k].levels[static_cast<std::size_t>(combo[k])];
        return s;
    }

    void validate() const {
        if (factors.empty()) throw SpecError("at least one factor is needed");
        for (const auto& f : factors)
            if (f.levels.size() < 2) throw SpecError("factor '" + f.name + "' needs at least 2 levels");
    }
};

/// Componentwise order: y <= y' when every ordinal factor satisfies
/// y_i <= y'_i and every nominal factor is equal. Covers are unit steps in
/// one ordinal factor.
inline HasseDiagram product_order(const OrderedFactorSpec& f) {
    f.validate();
    if (std::none_of(f.factors.begin(), f.factors.end(), [](const OrderedFactor& x) { return x.kind == FactorKind::Ordinal; }))
        throw SpecError("product order needs at least one ordinal factor");
    const auto combos = f.combinations();
    HasseDiagram h;
    for (const auto& c : combos) h.elements.push_back(f.name_of(c));
    for (std::size_t a = 0; a < combos.size(); ++a)
        for (std::size_t b = 0; b < combos.size(); ++b) {
            int steps = 0;
            bool ok = true;
            for (std::size_t k = 0; k < f.factors.size() && ok; ++k) {
                const int d = combos[b][k] - combos[a][k];
                if (d == 0) continue;
                if (f.factors[k].kind == FactorKind::Nominal || d != 1) ok = false;
                else ++steps;
            }
            if (ok && steps == 1) h.covers.emplace_back(static_cast<int>(a), static_cast<int>(b));
        }
    return h;
}

/// Tree of the lexicographic order over `priority` (factor indices, most
/// important first; default is factor order). Depth d splits by the d-th
/// priority factor; vertices at the same depth below the root form one
/// sharing group.
inline PosetTree lexicographic_tree(const OrderedFactorSpec& f, std::vector<int> priority = {}) {
    f.validate();
    if (priority.empty()) {
        priority.resize(f.factors.size());
        std::iota(priority.begin(), priority.end(), 0);
    }
    if (priority.size() != f.factors.size()) throw SpecError("priority must list every factor once");
    {
        auto s = priority;
        std::sort(s.begin(), s.end());
        for (std::size_t k = 0; k < s.size(); ++k)
            if (s[k] != static_cast<int>(k)) throw SpecError("priority must list every factor once");
    }
    for (int k : priority)
        if (f.factors[static_cast<std::size_t>(k)].kind != FactorKind::Ordinal)
            throw SpecError("lexicographic order needs ordinal factors; '" +
                            f.factors[static_cast<std::size_t>(k)].name + "' is nominal");

    // Categories in lexicographic order of the priority factors.
    auto combos = f.combinations();
    std::stable_sort(combos.begin(), combos.end(), [&](const auto& a, const auto& b) {
        for (int k : priority)
            if (a[k] != b[k]) return a[k] < b[k];
        return false;
    });
    PosetTree pt;
    for (const auto& c : combos) pt.categories.push_back(f.name_of(c));
    const int J = static_cast<int>(combos.size());
    Vertex all(static_cast<std::size_t>(J));
    std::iota(all.begin(), all.end(), 0);
    pt.tree = PartitionTree::with_root(J, all);
    pt.sharing_groups.resize(priority.size() > 1 ? priority.size() - 1 : 0);

    std::function<void(int, Vertex, std::size_t)> split = [&](int id, Vertex members, std::size_t depth) {
        pt.ordered[id] = true;
        if (depth > 0) pt.sharing_groups[depth - 1].push_back(id);
        const int k = priority[depth];
        const int nlev = static_cast<int>(f.factors[static_cast<std::size_t>(k)].levels.size());
        for (int l = 0; l < nlev; ++l) {
            Vertex v;
            for (int j : members)
                if (combos[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)] == l) v.push_back(j);
            const int c = pt.tree.add_child(id, v);
            if (v.size() > 1) split(c, v, depth + 1);
        }
    };
    split(0, all, 0);
    return pt;
}

} // namespace pcglm
