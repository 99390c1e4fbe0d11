#pragma once

// Tensor-train format: cores G_k of shape r_{k-1} x n_k x r_k, r_0 = r_d = 1.

#include <cstddef>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "ht.hpp"
#include "svd.hpp"
#include "tensor.hpp"

namespace htnn {

class TTFormat {
public:
    explicit TTFormat(std::vector<DenseTensor> cores) : cores_(std::move(cores)) { validate(); }

    std::size_t order() const { return cores_.size(); }
    const DenseTensor& core(std::size_t k) const { return cores_.at(k); }
    DenseTensor& core(std::size_t k) { return cores_.at(k); }
    const std::vector<DenseTensor>& cores() const { return cores_; }
    std::vector<DenseTensor>& cores() { return cores_; }

    Shape dims() const {
        Shape d;
        for (const auto& c : cores_) d.push_back(c.dim(1));
        return d;
    }
    /// Bond ranks r_0..r_d.
    std::vector<std::size_t> ranks() const {
        std::vector<std::size_t> r{1};
        for (const auto& c : cores_) r.push_back(c.dim(2));
        return r;
    }
    std::size_t max_rank() const {
        std::size_t m = 1;
        for (std::size_t r : ranks()) m = std::max(m, r);
        return m;
    }
    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& c : cores_) n += c.size();
        return n;
    }
    std::string factor_name(std::size_t k) const { return "G" + std::to_string(k + 1); }

    void validate() const {
        if (cores_.empty()) throw ShapeError("TT format needs at least one core");
        for (std::size_t k = 0; k < cores_.size(); ++k) {
            if (cores_[k].order() != 3) {
                throw ShapeError("TT core " + std::to_string(k + 1) + " must be order 3, got " + shape_str(cores_[k].shape()));
            }
            if (k > 0 && cores_[k].dim(0) != cores_[k - 1].dim(2)) {
                throw ShapeError("TT rank mismatch between cores " + std::to_string(k) + " and " + std::to_string(k + 1));
            }
        }
        if (cores_.front().dim(0) != 1 || cores_.back().dim(2) != 1) {
            throw ShapeError("TT boundary ranks must be 1");
        }
    }

private:
    std::vector<DenseTensor> cores_;
};

/// Sequential mode-1 contracted products G_1 x G_2 x ... x G_d.
inline DenseTensor tt_reconstruct(const TTFormat& g, OpCounter* counter = nullptr) {
    DenseTensor acc = reshape(g.core(0), {g.core(0).dim(1), g.core(0).dim(2)});
    for (std::size_t k = 1; k < g.order(); ++k) {
        const DenseTensor& c = g.core(k);
        acc = matmul(acc, reshape(c, {c.dim(0), c.dim(1) * c.dim(2)}), counter);
        acc.reshape_inplace({acc.size() / c.dim(2), c.dim(2)});
    }
    return reshape(std::move(acc), g.dims());
}

/// Largest meaningful bond ranks for the given mode lengths.
inline std::vector<std::size_t> tt_clip_ranks(const Shape& dims, const std::vector<std::size_t>& wanted) {
    const std::size_t d = dims.size();
    std::vector<std::size_t> r(d + 1, 1);
    const std::size_t total = shape_product(dims);
    std::size_t left = 1;
    for (std::size_t k = 1; k < d; ++k) {
        left *= dims[k - 1];
        r[k] = std::max<std::size_t>(1, std::min({wanted.at(k), left, total / left, r[k - 1] * dims[k - 1]}));
    }
    return r;
}

/// TT-SVD: sweep left to right, truncating each unfolding's SVD.
/// Explicit ranks, when given, are the d+1 bond ranks.
inline TTFormat tt_decompose(const DenseTensor& t, const RankPolicy& policy) {
    if (!policy.valid()) throw std::invalid_argument("rank policy needs a cap, tolerance, or explicit ranks");
    const Shape& dims = t.shape();
    const std::size_t d = dims.size();
    if (!policy.per_node.empty() && policy.per_node.size() != d + 1) {
        throw std::invalid_argument("explicit TT ranks need d+1 = " + std::to_string(d + 1) + " entries");
    }
    const double norm = t.frobenius_norm();
    std::vector<DenseTensor> cores;
    if (norm == 0.0) {
        for (std::size_t k = 0; k < d; ++k) cores.emplace_back(Shape{1, dims[k], 1});
        return TTFormat(std::move(cores));
    }
    std::vector<std::size_t> wanted(d + 1, std::numeric_limits<std::size_t>::max());
    if (policy.cap > 0) wanted.assign(d + 1, policy.cap);
    if (!policy.per_node.empty())
        for (std::size_t k = 0; k <= d; ++k) wanted[k] = std::min(wanted[k], policy.per_node[k]);
    const std::vector<std::size_t> limit = tt_clip_ranks(dims, wanted);
    const double budget =
        policy.tolerance > 0.0 && d > 1 ? policy.tolerance * policy.tolerance * norm * norm / static_cast<double>(d - 1) : -1.0;

    DenseTensor rest = t;
    std::size_t r_prev = 1;
    for (std::size_t k = 0; k + 1 < d; ++k) {
        const std::size_t rows = r_prev * dims[k];
        rest.reshape_inplace({rows, rest.size() / rows});
        TruncatedSvd s = truncated_svd(rest, limit[k + 1], budget);
        cores.push_back(reshape(s.u, {r_prev, dims[k], s.rank}));
        // rest = diag(s) * V^T
        for (std::size_t i = 0; i < s.rank; ++i)
            for (std::size_t j = 0; j < s.vt.dim(1); ++j) s.vt[i * s.vt.dim(1) + j] *= s.s[i];
        rest = std::move(s.vt);
        r_prev = s.rank;
    }
    cores.push_back(reshape(rest, {r_prev, dims[d - 1], 1}));
    return TTFormat(std::move(cores));
}

/// Converts an HT format on a degenerate tree into TT cores:
/// G_k = reshape(U_k * B_t) for the node t whose left child is leaf k.
inline TTFormat tt_from_degenerate_ht(const HTFormat& h) {
    const DimensionTree& tree = h.tree();
    if (tree.kind() != TreeKind::Degenerate) {
        throw std::invalid_argument("tt_from_degenerate_ht requires a degenerate dimension tree");
    }
    std::vector<DenseTensor> cores;
    std::size_t id = 0;
    while (true) {
        const TreeNode& n = tree.node(id);
        const auto l = static_cast<std::size_t>(n.left);
        const auto v = static_cast<std::size_t>(n.right);
        const DenseTensor& u = h.factor(l);              // (n_k, r_l)
        const DenseTensor& b = h.factor(id);             // (r_l, r_v, r_t)
        const std::size_t rv = b.dim(1), rt = b.dim(2);
        DenseTensor ub = matmul(u, reshape(b, {b.dim(0), rv * rt}));  // (n_k, r_v * r_t)
        ub.reshape_inplace({u.dim(0), rv, rt});
        cores.push_back(permute(ub, {2, 0, 1}));       // (r_t, n_k, r_v)
        if (tree.node(v).is_leaf()) {
            const DenseTensor& ud = h.factor(v);         // (n_d, r_v)
            cores.push_back(reshape(transpose(ud), {ud.dim(1), ud.dim(0), 1}));
            break;
        }
        id = v;
    }
    return TTFormat(std::move(cores));
}

template <typename Rng>
TTFormat random_tt(const Shape& dims, const std::vector<std::size_t>& ranks, Rng& rng, double stddev = 1.0) {
    if (ranks.size() != dims.size() + 1 || ranks.front() != 1 || ranks.back() != 1) {
        throw std::invalid_argument("TT ranks must have d+1 entries with r_0 = r_d = 1");
    }
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<DenseTensor> cores;
    for (std::size_t k = 0; k < dims.size(); ++k) {
        DenseTensor c({ranks[k], dims[k], ranks[k + 1]});
        for (double& x : c.data()) x = dist(rng);
        cores.push_back(std::move(c));
    }
    return TTFormat(std::move(cores));
}

}  // namespace htnn
