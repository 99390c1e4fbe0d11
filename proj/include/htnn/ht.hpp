#pragma once

// Hierarchical Tucker format: leaf bases U_k (n_k x r_k) and transfer
// tensors B_t (r_left x r_right x r_t) over a dimension tree, with
//   U_t = (U_left kron U_right) * mat(B_t)
// at every interior node.

#include <cmath>
#include <cstddef>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "svd.hpp"
#include "tensor.hpp"
#include "tree.hpp"

namespace htnn {

/// How decompositions choose ranks. A uniform cap, a relative Frobenius
/// tolerance and explicit per-node ranks may be combined; the smallest
/// applicable value wins at each node.
struct RankPolicy {
    std::size_t cap = 0;
    double tolerance = 0.0;
    std::vector<std::size_t> per_node;

    static RankPolicy uniform(std::size_t cap) {
        if (cap == 0) throw std::invalid_argument("rank cap must be >= 1");
        return {cap, 0.0, {}};
    }
    static RankPolicy with_tolerance(double tol) {
        if (!(tol > 0.0)) throw std::invalid_argument("tolerance must be > 0");
        return {0, tol, {}};
    }
    static RankPolicy explicit_ranks(std::vector<std::size_t> ranks) { return {0, 0.0, std::move(ranks)}; }

    bool valid() const { return cap > 0 || tolerance > 0.0 || !per_node.empty(); }
};

class HTFormat {
public:
    HTFormat(DimensionTree tree, Shape dims, std::vector<DenseTensor> factors)
        : tree_(std::move(tree)), dims_(std::move(dims)), factors_(std::move(factors)) {
        validate();
    }

    const DimensionTree& tree() const { return tree_; }
    const Shape& dims() const { return dims_; }
    std::size_t order() const { return dims_.size(); }

    /// Factor of a tree node: U_k for leaves, B_t for interior nodes.
    const DenseTensor& factor(std::size_t node) const { return factors_.at(node); }
    DenseTensor& factor(std::size_t node) { return factors_.at(node); }
    const std::vector<DenseTensor>& factors() const { return factors_; }
    std::vector<DenseTensor>& factors() { return factors_; }

    const DenseTensor& leaf(std::size_t mode) const { return factors_.at(tree_.leaf_of_mode(mode)); }

    std::string factor_name(std::size_t node) const {
        return (tree_.node(node).is_leaf() ? "U" : "B") + tree_.node_name(node);
    }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& f : factors_) n += f.size();
        return n;
    }

    std::size_t max_rank() const {
        std::size_t r = 1;
        for (const auto& n : tree_.nodes()) r = std::max(r, n.rank);
        return r;
    }

    void validate() const {
        if (dims_.size() != tree_.order()) {
            throw ShapeError("HT dims " + shape_str(dims_) + " do not match tree order " + std::to_string(tree_.order()));
        }
        if (factors_.size() != tree_.size()) throw ShapeError("HT factor count does not match tree size");
        if (tree_.rank(0) != 1) throw ShapeError("HT root rank must be 1");
        for (std::size_t id = 0; id < tree_.size(); ++id) {
            const TreeNode& n = tree_.node(id);
            Shape expect = n.is_leaf()
                               ? Shape{dims_[n.begin], n.rank}
                               : Shape{tree_.rank(static_cast<std::size_t>(n.left)),
                                       tree_.rank(static_cast<std::size_t>(n.right)), n.rank};
            if (factors_[id].shape() != expect) {
                throw ShapeError("HT factor " + factor_name(id) + " has shape " + shape_str(factors_[id].shape()) +
                                 ", expected " + shape_str(expect));
            }
        }
    }

private:
    DimensionTree tree_;
    Shape dims_;
    std::vector<DenseTensor> factors_;
};

/// result[(a,b), k] = sum_{i,j} U_l[a,i] B[i,j,k] U_v[b,j]; equal to
/// kron(U_l, U_v) * mat(B) without forming the Kronecker product.
inline DenseTensor ht_node_merge(const DenseTensor& left, const DenseTensor& transfer, const DenseTensor& right,
                                 OpCounter* counter = nullptr) {
    if (left.order() != 2 || right.order() != 2 || transfer.order() != 3) {
        throw ShapeError("ht_node_merge expects matrices and an order-3 transfer tensor");
    }
    if (left.dim(1) != transfer.dim(0) || right.dim(1) != transfer.dim(1)) {
        throw ShapeError("ht_node_merge rank mismatch: U_l " + shape_str(left.shape()) + ", B " +
                         shape_str(transfer.shape()) + ", U_v " + shape_str(right.shape()));
    }
    const std::size_t nl = left.dim(0), nv = right.dim(0);
    const std::size_t rv = transfer.dim(1), rt = transfer.dim(2);
    // (n_l, r_v, r_t)
    DenseTensor t1 = matmul(left, reshape(transfer, {transfer.dim(0), rv * rt}), counter);
    t1.reshape_inplace({nl, rv, rt});
    // (n_l, r_t, n_v) -> (n_l, n_v, r_t)
    DenseTensor t2 = contract(t1, 1, right, 1, counter);
    return reshape(permute(t2, {0, 2, 1}), {nl * nv, rt});
}

namespace detail {
inline DenseTensor ht_node_basis(const HTFormat& h, std::size_t id, OpCounter* counter) {
    const TreeNode& n = h.tree().node(id);
    if (n.is_leaf()) return h.factor(id);
    return ht_node_merge(ht_node_basis(h, static_cast<std::size_t>(n.left), counter), h.factor(id),
                         ht_node_basis(h, static_cast<std::size_t>(n.right), counter), counter);
}
}  // namespace detail

/// Bottom-up recovery of the full tensor.
inline DenseTensor ht_reconstruct(const HTFormat& h, OpCounter* counter = nullptr) {
    return reshape(detail::ht_node_basis(h, 0, counter), h.dims());
}

/// Leaf-to-root hierarchical SVD. Each non-root node keeps the leading left
/// singular vectors of its matricization; transfer tensors are the
/// projections of a node's basis onto its children's bases.
inline HTFormat ht_decompose(const DenseTensor& t, DimensionTree tree, const RankPolicy& policy) {
    if (t.order() != tree.order()) {
        throw ShapeError("tensor order " + std::to_string(t.order()) + " does not match tree order " +
                         std::to_string(tree.order()));
    }
    if (!policy.valid()) throw std::invalid_argument("rank policy needs a cap, tolerance, or explicit ranks");
    if (!policy.per_node.empty() && policy.per_node.size() != tree.size()) {
        throw std::invalid_argument("explicit HT ranks need one entry per tree node (" + std::to_string(tree.size()) + ")");
    }
    const Shape& dims = t.shape();
    const std::size_t nn = tree.size();
    const double norm = t.frobenius_norm();

    if (norm == 0.0) {
        tree.set_ranks(std::vector<std::size_t>(nn, 1));
        std::vector<DenseTensor> factors;
        for (const auto& n : tree.nodes()) {
            factors.push_back(n.is_leaf() ? DenseTensor({dims[n.begin], 1}) : DenseTensor({1, 1, 1}));
        }
        return HTFormat(std::move(tree), dims, std::move(factors));
    }

    std::vector<std::size_t> wanted(nn, std::numeric_limits<std::size_t>::max());
    if (policy.cap > 0) wanted.assign(nn, policy.cap);
    if (!policy.per_node.empty())
        for (std::size_t i = 0; i < nn; ++i) wanted[i] = std::min(wanted[i], policy.per_node[i]);
    const std::vector<std::size_t> limit = tree.clip_ranks(dims, wanted);
    const double budget = policy.tolerance > 0.0
                              ? policy.tolerance * policy.tolerance * norm * norm / static_cast<double>(nn - 1)
                              : -1.0;

    std::vector<DenseTensor> basis(nn);
    std::vector<std::size_t> ranks(nn, 1);
    for (std::size_t id = nn; id-- > 1;) {
        const TreeNode& n = tree.node(id);
        std::vector<std::size_t> rows;
        for (std::size_t k = n.begin; k < n.end; ++k) rows.push_back(k);
        const DenseTensor a = matricize(t, ModeSplit::rows(rows, t.order()));
        std::size_t cap = limit[id];
        if (!n.is_leaf()) {
            cap = std::min(cap, ranks[static_cast<std::size_t>(n.left)] * ranks[static_cast<std::size_t>(n.right)]);
        }
        TruncatedBasis tb = leading_left_singular_vectors(a, cap, budget);
        ranks[id] = tb.rank;
        basis[id] = std::move(tb.basis);
    }
    tree.set_ranks(ranks);

    std::vector<DenseTensor> factors(nn);
    for (std::size_t id = 0; id < nn; ++id) {
        const TreeNode& n = tree.node(id);
        if (n.is_leaf()) {
            factors[id] = basis[id];
            continue;
        }
        const auto l = static_cast<std::size_t>(n.left), v = static_cast<std::size_t>(n.right);
        const DenseTensor& ul = basis[l];
        const DenseTensor& uv = basis[v];
        const std::size_t nl = ul.dim(0), nv = uv.dim(0);
        const std::size_t rt = ranks[id];
        DenseTensor ut = id == 0 ? reshape(t, {nl, nv * rt}) : reshape(basis[id], {nl, nv * rt});
        // B[i,j,k] = sum_{a,b} U_l[a,i] U_v[b,j] U_t[(a,b),k]
        DenseTensor b1 = matmul(transpose(ul), ut);    // (r_l, n_v * r_t)
        b1.reshape_inplace({ul.dim(1), nv, rt});
        DenseTensor b2 = contract(b1, 1, uv, 0);         // (r_l, r_t, r_v)
        factors[id] = permute(b2, {0, 2, 1});
    }
    return HTFormat(std::move(tree), dims, std::move(factors));
}

/// HT format with i.i.d. N(0, stddev^2) factors and the given node ranks.
template <typename Rng>
HTFormat random_ht(DimensionTree tree, const Shape& dims, const std::vector<std::size_t>& ranks, Rng& rng,
                   double stddev = 1.0) {
    tree.set_ranks(ranks);
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<DenseTensor> factors;
    for (std::size_t id = 0; id < tree.size(); ++id) {
        const TreeNode& n = tree.node(id);
        Shape s = n.is_leaf() ? Shape{dims.at(n.begin), n.rank}
                              : Shape{tree.rank(static_cast<std::size_t>(n.left)),
                                      tree.rank(static_cast<std::size_t>(n.right)), n.rank};
        DenseTensor f(s);
        for (double& x : f.data()) x = dist(rng);
        factors.push_back(std::move(f));
    }
    return HTFormat(std::move(tree), dims, std::move(factors));
}

}  // namespace htnn
