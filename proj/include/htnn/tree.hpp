#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace htnn {

enum class TreeKind { Balanced, Degenerate };

inline std::string to_string(TreeKind k) { return k == TreeKind::Balanced ? "balanced" : "degenerate"; }

inline TreeKind tree_kind_from_string(const std::string& s) {
    if (s == "balanced") return TreeKind::Balanced;
    if (s == "degenerate") return TreeKind::Degenerate;
    throw std::invalid_argument("unknown tree kind '" + s + "' (expected balanced|degenerate)");
}

/// A node covers the contiguous mode range [begin, end). Children partition
/// it with the left child first.
struct TreeNode {
    std::size_t begin = 0;
    std::size_t end = 0;
    int left = -1;
    int right = -1;
    int parent = -1;
    std::size_t rank = 1;

    bool is_leaf() const { return left < 0; }
    std::size_t width() const { return end - begin; }
};

/// Binary dimension tree over modes 0..d-1. Nodes are stored in pre-order,
/// so the root is node 0 and every parent precedes its children.
class DimensionTree {
public:
    static DimensionTree build(std::size_t d, TreeKind kind) {
        if (d < 2) throw std::invalid_argument("dimension tree needs d >= 2, got " + std::to_string(d));
        DimensionTree t;
        t.kind_ = kind;
        t.order_ = d;
        t.leaf_of_mode_.assign(d, 0);
        t.add(0, d, -1);
        return t;
    }

    TreeKind kind() const { return kind_; }
    std::size_t order() const { return order_; }
    std::size_t size() const { return nodes_.size(); }
    const TreeNode& node(std::size_t id) const { return nodes_.at(id); }
    const std::vector<TreeNode>& nodes() const { return nodes_; }
    std::size_t leaf_of_mode(std::size_t k) const { return leaf_of_mode_.at(k); }
    std::size_t rank(std::size_t id) const { return nodes_.at(id).rank; }

    std::vector<std::size_t> ranks() const {
        std::vector<std::size_t> r;
        for (const auto& n : nodes_) r.push_back(n.rank);
        return r;
    }

    /// Assigns per-node ranks (indexed by node id). The root rank must be 1.
    void set_ranks(const std::vector<std::size_t>& ranks) {
        if (ranks.size() != nodes_.size()) {
            throw std::invalid_argument("expected " + std::to_string(nodes_.size()) + " ranks, got " +
                                        std::to_string(ranks.size()));
        }
        if (ranks[0] != 1) throw std::invalid_argument("root rank must be 1");
        for (std::size_t i = 0; i < ranks.size(); ++i) {
            if (ranks[i] == 0) throw std::invalid_argument("ranks must be positive");
            nodes_[i].rank = ranks[i];
        }
    }

    /// Largest meaningful rank per node for a tensor of the given shape:
    /// min(rows, cols) of the node's matricization, and for interior nodes
    /// at most the product of the children's ranks.
    std::vector<std::size_t> clip_ranks(const Shape& dims, const std::vector<std::size_t>& wanted) const {
        if (dims.size() != order_) throw ShapeError("tree order does not match shape " + shape_str(dims));
        std::vector<std::size_t> r(nodes_.size(), 1);
        const std::size_t total = shape_product(dims);
        // children have larger ids than parents: resolve bottom-up
        for (std::size_t id = nodes_.size(); id-- > 1;) {
            const TreeNode& n = nodes_[id];
            std::size_t rows = 1;
            for (std::size_t k = n.begin; k < n.end; ++k) rows *= dims[k];
            std::size_t cap = std::min({wanted.at(id), rows, total / rows});
            if (!n.is_leaf()) cap = std::min(cap, r[n.left] * r[n.right]);
            r[id] = std::max<std::size_t>(cap, 1);
        }
        r[0] = 1;
        return r;
    }

    std::vector<std::size_t> uniform(std::size_t cap) const {
        std::vector<std::size_t> r(nodes_.size(), cap);
        r[0] = 1;
        return r;
    }

    /// Modes covered by a node, as a human-readable 1-based label ("12", "1234").
    std::string node_name(std::size_t id) const {
        const TreeNode& n = nodes_.at(id);
        std::string s;
        const bool wide = order_ > 9;
        for (std::size_t k = n.begin; k < n.end; ++k) {
            if (wide && k != n.begin) s += '_';
            s += std::to_string(k + 1);
        }
        return s;
    }

    /// All node ids in in-order (left subtree, node, right subtree).
    std::vector<std::size_t> inorder() const {
        std::vector<std::size_t> out;
        inorder_from(0, out);
        return out;
    }

private:
    int add(std::size_t begin, std::size_t end, int parent) {
        const int id = static_cast<int>(nodes_.size());
        nodes_.push_back({begin, end, -1, -1, parent, 1});
        if (end - begin == 1) {
            leaf_of_mode_[begin] = static_cast<std::size_t>(id);
            return id;
        }
        const std::size_t w = end - begin;
        // Balanced: left-heavy halves. Degenerate: singleton left child.
        const std::size_t split = kind_ == TreeKind::Balanced ? begin + (w + 1) / 2 : begin + 1;
        const int l = add(begin, split, id);
        const int r = add(split, end, id);
        nodes_[static_cast<std::size_t>(id)].left = l;
        nodes_[static_cast<std::size_t>(id)].right = r;
        return id;
    }

    void inorder_from(std::size_t id, std::vector<std::size_t>& out) const {
        const TreeNode& n = nodes_[id];
        if (n.is_leaf()) {
            out.push_back(id);
            return;
        }
        inorder_from(static_cast<std::size_t>(n.left), out);
        out.push_back(id);
        inorder_from(static_cast<std::size_t>(n.right), out);
    }

    TreeKind kind_ = TreeKind::Balanced;
    std::size_t order_ = 0;
    std::vector<TreeNode> nodes_;
    std::vector<std::size_t> leaf_of_mode_;
};

}  // namespace htnn
