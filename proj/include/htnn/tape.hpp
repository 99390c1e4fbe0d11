#pragma once

// Label-driven pairwise contractions and a reverse-mode tape over them.
//
// Every factor network in this library (HT/TT reconstruction, chain
// evaluation of tensorized layers) is a sequence of pairwise contractions.
// Modes carry integer labels; labels shared by both operands are summed.
// The tape records those steps so the adjoint of each contraction can be
// replayed backwards:
//   C = A . B   =>   dA = dC . B,   dB = dC . A
// with the results arranged back into the operand's label order.

#include <algorithm>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace htnn {

using Label = int;

struct LabeledTensor {
    DenseTensor tensor;
    std::vector<Label> labels;

    std::size_t extent(Label l) const {
        for (std::size_t k = 0; k < labels.size(); ++k)
            if (labels[k] == l) return tensor.dim(k);
        throw ShapeError("label " + std::to_string(l) + " not present");
    }
    bool has(Label l) const { return std::find(labels.begin(), labels.end(), l) != labels.end(); }
};

inline void check_labels(const LabeledTensor& t) {
    if (t.labels.size() != t.tensor.order()) {
        throw ShapeError("label count " + std::to_string(t.labels.size()) + " does not match tensor order " +
                         std::to_string(t.tensor.order()));
    }
    for (std::size_t i = 0; i < t.labels.size(); ++i)
        for (std::size_t j = i + 1; j < t.labels.size(); ++j)
            if (t.labels[i] == t.labels[j]) throw ShapeError("duplicate label " + std::to_string(t.labels[i]));
}

/// Sums over every label present in both operands. Result labels are a's
/// free labels followed by b's free labels.
inline LabeledTensor contract_labeled(const LabeledTensor& a, const LabeledTensor& b, OpCounter* counter = nullptr) {
    std::vector<std::size_t> am, bm;
    std::vector<Label> out_labels;
    for (std::size_t i = 0; i < a.labels.size(); ++i) {
        auto it = std::find(b.labels.begin(), b.labels.end(), a.labels[i]);
        if (it != b.labels.end()) {
            am.push_back(i);
            bm.push_back(static_cast<std::size_t>(it - b.labels.begin()));
        } else {
            out_labels.push_back(a.labels[i]);
        }
    }
    for (Label l : b.labels)
        if (!a.has(l)) out_labels.push_back(l);
    LabeledTensor out{tensordot(a.tensor, am, b.tensor, bm, counter), std::move(out_labels)};
    if (out.labels.empty()) out.labels.push_back(-1);  // scalar result
    return out;
}

/// Permutes `t` so its labels appear in `order` (same label set).
inline LabeledTensor arrange(const LabeledTensor& t, std::span<const Label> order) {
    if (order.size() != t.labels.size()) throw ShapeError("arrange: label sets differ in size");
    std::vector<std::size_t> perm(order.size());
    for (std::size_t k = 0; k < order.size(); ++k) {
        auto it = std::find(t.labels.begin(), t.labels.end(), order[k]);
        if (it == t.labels.end()) throw ShapeError("arrange: label " + std::to_string(order[k]) + " missing");
        perm[k] = static_cast<std::size_t>(it - t.labels.begin());
    }
    return {permute(t.tensor, perm), std::vector<Label>(order.begin(), order.end())};
}

/// Records pairwise contractions for reverse-mode differentiation.
class ContractionTape {
public:
    using NodeId = std::size_t;

    NodeId input(LabeledTensor t) {
        check_labels(t);
        nodes_.push_back({std::move(t), npos, npos});
        return nodes_.size() - 1;
    }

    NodeId contract(NodeId a, NodeId b) {
        LabeledTensor v = contract_labeled(nodes_.at(a).value, nodes_.at(b).value, counter_);
        nodes_.push_back({std::move(v), a, b});
        return nodes_.size() - 1;
    }

    NodeId arrange(NodeId a, std::vector<Label> order) {
        LabeledTensor v = htnn::arrange(nodes_.at(a).value, order);
        nodes_.push_back({std::move(v), a, npos});
        return nodes_.size() - 1;
    }

    /// Relabels/reshapes a node without moving data (row-major identity).
    NodeId reshape(NodeId a, Shape shape, std::vector<Label> labels) {
        LabeledTensor v{htnn::reshape(nodes_.at(a).value.tensor, std::move(shape)), std::move(labels)};
        check_labels(v);
        nodes_.push_back({std::move(v), a, npos, true});
        return nodes_.size() - 1;
    }

    const LabeledTensor& value(NodeId id) const { return nodes_.at(id).value; }
    std::size_t size() const { return nodes_.size(); }

    void set_counter(OpCounter* counter) { counter_ = counter; }

    /// Propagates `seed` (gradient of the scalar objective w.r.t. node
    /// `out`) back through the tape. Returns one gradient per node; nodes
    /// not on a path to `out` have no value.
    std::vector<std::optional<DenseTensor>> backward(NodeId out, const DenseTensor& seed) const {
        const Node& o = nodes_.at(out);
        if (seed.size() != o.value.tensor.size()) {
            throw ShapeError("backward seed " + shape_str(seed.shape()) + " does not match output " +
                             shape_str(o.value.tensor.shape()));
        }
        std::vector<std::optional<DenseTensor>> grads(nodes_.size());
        grads[out] = reshape_like(seed, o.value.tensor);
        for (std::size_t id = out + 1; id-- > 0;) {
            if (!grads[id]) continue;
            const Node& n = nodes_[id];
            if (n.lhs == npos) continue;
            const LabeledTensor g{*grads[id], n.value.labels};
            if (n.relabel) {
                accumulate(grads[n.lhs], reshape_like(g.tensor, nodes_[n.lhs].value.tensor));
            } else if (n.rhs == npos) {
                const auto& src = nodes_[n.lhs].value;
                accumulate(grads[n.lhs], htnn::arrange(g, src.labels).tensor);
            } else {
                const auto& a = nodes_[n.lhs].value;
                const auto& b = nodes_[n.rhs].value;
                accumulate(grads[n.lhs], adjoint(g, b, a));
                accumulate(grads[n.rhs], adjoint(g, a, b));
            }
        }
        return grads;
    }

private:
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

    struct Node {
        LabeledTensor value;
        std::size_t lhs;
        std::size_t rhs;
        bool relabel = false;
    };

    static DenseTensor reshape_like(const DenseTensor& t, const DenseTensor& like) {
        return htnn::reshape(t, like.shape());
    }

    // Gradient for `target` given the output gradient and the other operand.
    // Labels target shares with `other` were summed in the forward step and
    // reappear here. A scalar output carries the placeholder label -1.
    DenseTensor adjoint(const LabeledTensor& g, const LabeledTensor& other, const LabeledTensor& target) const {
        if (g.labels.size() == 1 && g.labels[0] == -1) {
            DenseTensor r = htnn::arrange(other, target.labels).tensor;
            r *= g.tensor[0];
            return r;
        }
        return htnn::arrange(contract_labeled(g, other, counter_), target.labels).tensor;
    }

    static void accumulate(std::optional<DenseTensor>& slot, DenseTensor g) {
        if (slot) *slot += g;
        else slot = std::move(g);
    }

    std::vector<Node> nodes_;
    OpCounter* counter_ = nullptr;
};

}  // namespace htnn
