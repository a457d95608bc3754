#pragma once

// Partition trees over categories 0..J-1. Each vertex is a category subset;
// the ordered children of a non-terminal vertex partition it, and the last
// child is the reference child.

#include <algorithm>
#include <cctype>
#include <functional>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "pcglm/dataset.hpp"
#include "pcglm/errors.hpp"
#include "pcglm/random.hpp"

namespace pcglm {

/// Sorted category subset.
using Vertex = std::vector<int>;

struct TreeNode {
    Vertex categories;
    std::vector<int> children; ///< node indices, in model order
    int parent = -1;

    [[nodiscard]] bool terminal() const { return children.empty(); }
};

class PartitionTree {
public:
    PartitionTree() = default;

    /// Builds a tree from a bracketed description with 1-based category
    /// numbers, e.g. "[1,2,[3,4,5],6]". A bare number is a singleton leaf.
    static PartitionTree parse(const std::string& text) {
        PartitionTree t;
        std::size_t pos = 0;
        t.add_parsed(text, pos, -1);
        skip_space(text, pos);
        if (pos != text.size()) throw ParseError("trailing characters in tree description at " +
                                                 std::to_string(pos));
        int mx = -1;
        for (const auto& n : t.nodes_)
            for (int c : n.categories) mx = std::max(mx, c);
        t.J_ = mx + 1;
        return t;
    }

    /// Root with J singleton children.
    static PartitionTree flat(int J) {
        PartitionTree t;
        t.J_ = J;
        t.nodes_.push_back({iota(J), {}, -1});
        for (int j = 0; j < J; ++j) t.add_child(0, {j});
        return t;
    }

    /// Root with the given ordered groups as children; each non-singleton
    /// group receives its singletons as children.
    static PartitionTree two_level(int J, const std::vector<Vertex>& groups) {
        PartitionTree t;
        t.J_ = J;
        t.nodes_.push_back({iota(J), {}, -1});
        for (const auto& g : groups) {
            const int c = t.add_child(0, g);
            if (g.size() > 1)
                for (int j : g) t.add_child(c, {j});
        }
        return t;
    }

    /// Binary chain {1} | {2..J}, {2} | {3..J}, ...
    static PartitionTree binary_chain(int J) {
        PartitionTree t;
        t.J_ = J;
        t.nodes_.push_back({iota(J), {}, -1});
        int cur = 0;
        for (int j = 0; j < J - 1; ++j) {
            t.add_child(cur, {j});
            if (j == J - 2) {
                t.add_child(cur, {J - 1});
            } else {
                Vertex rest;
                for (int k = j + 1; k < J; ++k) rest.push_back(k);
                cur = t.add_child(cur, rest);
            }
        }
        return t;
    }

    /// Appends a child under `parent` and returns its node index.
    int add_child(int parent, Vertex categories) {
        std::sort(categories.begin(), categories.end());
        nodes_.push_back({std::move(categories), {}, parent});
        const int id = static_cast<int>(nodes_.size()) - 1;
        nodes_[static_cast<std::size_t>(parent)].children.push_back(id);
        return id;
    }

    /// Starts an empty tree whose root holds `categories`.
    static PartitionTree with_root(int J, Vertex categories) {
        PartitionTree t;
        t.J_ = J;
        std::sort(categories.begin(), categories.end());
        t.nodes_.push_back({std::move(categories), {}, -1});
        return t;
    }

    [[nodiscard]] int categories() const { return J_; }
    [[nodiscard]] const std::vector<TreeNode>& nodes() const { return nodes_; }
    [[nodiscard]] const TreeNode& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
    [[nodiscard]] static constexpr int root() { return 0; }

    /// Non-terminal nodes in preorder.
    [[nodiscard]] std::vector<int> non_terminal() const {
        std::vector<int> out;
        preorder(0, [&](int id) {
            if (!nodes_[static_cast<std::size_t>(id)].terminal()) out.push_back(id);
        });
        return out;
    }

    [[nodiscard]] int child_count(int id) const { return static_cast<int>(node(id).children.size()); }

    /// Position of the child of `id` containing category j, or -1.
    [[nodiscard]] int child_index_of(int id, int j) const {
        const auto& ch = node(id).children;
        for (std::size_t k = 0; k < ch.size(); ++k) {
            const auto& c = node(ch[k]).categories;
            if (std::binary_search(c.begin(), c.end(), j)) return static_cast<int>(k);
        }
        return -1;
    }

    /// Node index of the vertex equal to `v`, or -1.
    [[nodiscard]] int find(const Vertex& v) const {
        Vertex s = v;
        std::sort(s.begin(), s.end());
        for (std::size_t i = 0; i < nodes_.size(); ++i)
            if (nodes_[i].categories == s) return static_cast<int>(i);
        return -1;
    }

    /// Bracketed form with 1-based category numbers.
    [[nodiscard]] std::string to_string() const { return describe(0); }

    /// Subset notation, e.g. "{3,4,5}".
    [[nodiscard]] std::string vertex_label(int id) const {
        std::string s = "{";
        const auto& c = node(id).categories;
        for (std::size_t k = 0; k < c.size(); ++k) s += (k ? "," : "") + std::to_string(c[k] + 1);
        return s + "}";
    }

    void preorder(int id, const std::function<void(int)>& f) const {
        f(id);
        for (int c : node(id).children) preorder(c, f);
    }

    /// Structural equality including child order.
    [[nodiscard]] bool same_shape(const PartitionTree& o) const { return to_string() == o.to_string(); }

private:
    int J_ = 0;
    std::vector<TreeNode> nodes_;

    static Vertex iota(int J) {
        Vertex v(static_cast<std::size_t>(J));
        std::iota(v.begin(), v.end(), 0);
        return v;
    }

    static void skip_space(const std::string& s, std::size_t& pos) {
        while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    }

    Vertex add_parsed(const std::string& s, std::size_t& pos, int parent) {
        skip_space(s, pos);
        if (pos >= s.size()) throw ParseError("unexpected end of tree description");
        if (std::isdigit(static_cast<unsigned char>(s[pos]))) {
            std::size_t end = pos;
            while (end < s.size() && std::isdigit(static_cast<unsigned char>(s[end]))) ++end;
            const int j = std::stoi(s.substr(pos, end - pos)) - 1;
            if (j < 0) throw ParseError("category numbers start at 1");
            pos = end;
            if (parent < 0) nodes_.push_back({{j}, {}, -1});
            else add_child(parent, {j});
            return {j};
        }
        if (s[pos] != '[') throw ParseError("expected '[' or a category number at " + std::to_string(pos));
        ++pos;
        int id;
        if (parent < 0) {
            nodes_.push_back({{}, {}, -1});
            id = 0;
        } else {
            id = add_child(parent, {});
        }
        Vertex all;
        for (;;) {
            const Vertex sub = add_parsed(s, pos, id);
            all.insert(all.end(), sub.begin(), sub.end());
            skip_space(s, pos);
            if (pos < s.size() && s[pos] == ',') {
                ++pos;
                continue;
            }
            if (pos < s.size() && s[pos] == ']') {
                ++pos;
                break;
            }
            throw ParseError("expected ',' or ']' at " + std::to_string(pos));
        }
        std::sort(all.begin(), all.end());
        all.erase(std::unique(all.begin(), all.end()), all.end());
        nodes_[static_cast<std::size_t>(id)].categories = all;
        return all;
    }

    [[nodiscard]] std::string describe(int id) const {
        const auto& n = node(id);
        if (n.terminal()) {
            if (n.categories.size() == 1) return std::to_string(n.categories[0] + 1);
            return vertex_label(id);
        }
        std::string s = "[";
        for (std::size_t k = 0; k < n.children.size(); ++k)
            s += (k ? "," : "") + describe(n.children[k]);
        return s + "]";
    }
};

struct TreeViolation {
    std::string rule;
    std::string vertex;
    std::string message;
};

/// Checks the root, partition and singleton-leaf rules; returns the first
/// violation found, or nothing.
inline std::optional<TreeViolation> validate_tree(const PartitionTree& t) {
    const int J = t.categories();
    if (t.nodes().empty()) return TreeViolation{"root", "{}", "tree has no vertices"};
    if (J < 2) return TreeViolation{"root", t.vertex_label(0), "a tree needs at least 2 categories"};
    Vertex full(static_cast<std::size_t>(J));
    std::iota(full.begin(), full.end(), 0);
    if (t.node(0).categories != full)
        return TreeViolation{"root", t.vertex_label(0), "root must be the full category set {1,...,J}"};
    std::optional<TreeViolation> found;
    t.preorder(0, [&](int id) {
        if (found) return;
        const auto& n = t.node(id);
        if (n.terminal()) {
            if (n.categories.size() != 1)
                found = TreeViolation{"leaves", t.vertex_label(id),
                                      "terminal vertex is not a singleton category"};
            return;
        }
        if (n.children.size() < 2) {
            found = TreeViolation{"partition", t.vertex_label(id),
                                  "non identical partition: vertex needs at least 2 children"};
            return;
        }
        std::vector<int> seen;
        for (int c : n.children) {
            const auto& cc = t.node(c).categories;
            if (cc.empty()) {
                found = TreeViolation{"partition", t.vertex_label(id), "empty child vertex"};
                return;
            }
            seen.insert(seen.end(), cc.begin(), cc.end());
        }
        std::sort(seen.begin(), seen.end());
        if (std::adjacent_find(seen.begin(), seen.end()) != seen.end()) {
            found = TreeViolation{"partition", t.vertex_label(id), "children overlap"};
            return;
        }
        if (seen != n.categories)
            found = TreeViolation{"partition", t.vertex_label(id), "children do not cover the vertex"};
    });
    if (found) return found;
    for (int j = 0; j < J; ++j)
        if (t.find({j}) < 0)
            return TreeViolation{"leaves", "{" + std::to_string(j + 1) + "}",
                                 "singleton category is not a vertex"};
    return std::nullopt;
}

inline std::string to_string(const TreeViolation& v) {
    return v.rule + " rule violated at " + v.vertex + ": " + v.message;
}

/// Throws SpecError carrying the violation report.
inline void require_valid(const PartitionTree& t) {
    if (auto v = validate_tree(t)) throw SpecError(to_string(*v));
}

/// Sum over non-terminal vertices of (J_v - 1).
inline int count_equations(const PartitionTree& t) {
    int n = 0;
    for (int id : t.non_terminal()) n += t.child_count(id) - 1;
    return n;
}

namespace detail {

/// All set partitions of `items`, blocks ordered by first element.
inline void set_partitions(const Vertex& items, std::size_t i, std::vector<Vertex>& blocks,
                           std::vector<std::vector<Vertex>>& out) {
    if (i == items.size()) {
        out.push_back(blocks);
        return;
    }
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        blocks[b].push_back(items[i]);
        set_partitions(items, i + 1, blocks, out);
        blocks[b].pop_back();
    }
    blocks.push_back({items[i]});
    set_partitions(items, i + 1, blocks, out);
    blocks.pop_back();
}

/// Bracketed descriptions of every tree over `items`.
inline std::vector<std::string> tree_descriptions(const Vertex& items) {
    if (items.size() == 1) return {std::to_string(items[0] + 1)};
    std::vector<std::vector<Vertex>> parts;
    std::vector<Vertex> blocks;
    set_partitions(items, 0, blocks, parts);
    std::vector<std::string> out;
    for (const auto& p : parts) {
        if (p.size() < 2) continue;
        std::vector<std::vector<std::string>> options;
        for (const auto& b : p) options.push_back(tree_descriptions(b));
        std::vector<std::size_t> idx(options.size(), 0);
        for (;;) {
            std::string s = "[";
            for (std::size_t k = 0; k < options.size(); ++k) s += (k ? "," : "") + options[k][idx[k]];
            out.push_back(s + "]");
            std::size_t k = 0;
            while (k < idx.size() && ++idx[k] == options[k].size()) idx[k++] = 0;
            if (k == idx.size()) break;
        }
    }
    return out;
}

} // namespace detail

/// Every partition tree over J categories, children ordered by smallest
/// category. Child order does not change the vertex set or equation count.
inline std::vector<PartitionTree> enumerate_trees(int J) {
    Vertex all(static_cast<std::size_t>(J));
    std::iota(all.begin(), all.end(), 0);
    std::vector<PartitionTree> out;
    for (const auto& s : detail::tree_descriptions(all)) out.push_back(PartitionTree::parse(s));
    return out;
}

/// Random tree: each vertex is split into 2..|v| randomly shuffled blocks.
inline PartitionTree random_tree(Random& rng, int J) {
    Vertex all(static_cast<std::size_t>(J));
    std::iota(all.begin(), all.end(), 0);
    auto t = PartitionTree::with_root(J, all);
    std::function<void(int)> grow = [&](int id) {
        Vertex cats = t.node(id).categories;
        if (cats.size() < 2) return;
        for (std::size_t i = cats.size() - 1; i > 0; --i) std::swap(cats[i], cats[rng.below(i + 1)]);
        const std::size_t b = 2 + rng.below(cats.size() - 1);
        std::vector<Vertex> blocks(b);
        for (std::size_t i = 0; i < cats.size(); ++i)
            blocks[i < b ? i : rng.below(b)].push_back(cats[i]);
        for (auto& blk : blocks) grow(t.add_child(id, blk));
    };
    grow(0);
    return t;
}

/// Rows whose response lies in vertex `id`, relabeled to the index of the
/// child containing it. With `columns`, covariates are restricted to those
/// columns in the given order.
inline CategoricalDataset partition_data(const PartitionTree& t, const CategoricalDataset& data, int id,
                                         const std::optional<std::vector<int>>& columns = std::nullopt) {
    const auto& n = t.node(id);
    if (n.terminal()) throw SpecError("partition_data needs a non-terminal vertex, got " + t.vertex_label(id));
    CategoricalDataset out;
    out.categories = static_cast<int>(n.children.size());
    for (int c : n.children) out.category_names.push_back(t.vertex_label(c));
    if (columns) {
        for (int c : *columns) {
            out.column_names.push_back(data.column_names.at(static_cast<std::size_t>(c)));
            out.variables.push_back({out.column_names.back(), {static_cast<int>(out.column_names.size()) - 1}});
        }
    } else {
        out.column_names = data.column_names;
        out.variables = data.variables;
    }
    std::vector<int> label(static_cast<std::size_t>(t.categories()), -1);
    for (int j : n.categories) label[static_cast<std::size_t>(j)] = t.child_index_of(id, j);
    for (const auto& r : data.rows) {
        if (r.response < 0 || r.response >= t.categories()) continue;
        const int c = label[static_cast<std::size_t>(r.response)];
        if (c < 0) continue;
        Observation o{r.x, c, r.weight};
        if (columns) {
            o.x.values.resize(static_cast<Eigen::Index>(columns->size()));
            for (std::size_t k = 0; k < columns->size(); ++k)
                o.x.values[static_cast<Eigen::Index>(k)] = r.x.values[(*columns)[k]];
        }
        out.rows.push_back(std::move(o));
    }
    return out;
}

} // namespace pcglm
