#pragma once

// Tensorized fully-connected layers y = W x with W stored in HT or TT form.
//
// W is M x N with M = prod m_k and N = prod n_k. The weight tensor has fused
// modes (m_1 n_1, ..., m_d n_d); fused index = i_k * n_k + j_k (m-major).
// Batch is the leading dimension of x and y and is never tensorized.
//
// Both evaluation paths are recorded on a ContractionTape:
//   chain     contracts the tensorized input through the factors in in-order
//             traversal of the dimension tree, never forming W;
//   recovery  rebuilds W from the factors and applies one matrix product.
// Backward passes replay the tape.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "format.hpp"
#include "tape.hpp"

namespace htnn {

enum class ForwardMode { Chain, Recovery };

inline std::string to_string(ForwardMode m) { return m == ForwardMode::Chain ? "chain" : "recovery"; }

inline ForwardMode forward_mode_from_string(const std::string& s) {
    if (s == "chain") return ForwardMode::Chain;
    if (s == "recovery") return ForwardMode::Recovery;
    throw std::invalid_argument("unknown forward mode '" + s + "' (expected chain|recovery)");
}

struct TensorizedFCSpec {
    Shape m;  // output factorization
    Shape n;  // input factorization
    FormatKind kind = FormatKind::HT;
    TreeKind tree = TreeKind::Balanced;
    std::size_t rank = 1;            // uniform cap, used when `ranks` is empty
    std::vector<std::size_t> ranks;  // per tree node (HT) or d+1 bonds (TT)

    std::size_t order() const { return m.size(); }
    std::size_t M() const { return shape_product(m); }
    std::size_t N() const { return shape_product(n); }

    Shape fused_dims() const {
        Shape f(m.size());
        for (std::size_t k = 0; k < m.size(); ++k) f[k] = m[k] * n[k];
        return f;
    }

    void validate() const {
        if (m.empty() || m.size() != n.size()) {
            throw ShapeError("FC factorization needs equal-length m and n, got m=" + shape_str(m) + " n=" + shape_str(n));
        }
        for (std::size_t k = 0; k < m.size(); ++k)
            if (m[k] == 0 || n[k] == 0) throw ShapeError("FC mode lengths must be positive");
        if (kind == FormatKind::HT && m.size() < 2) throw ShapeError("HT layers need d >= 2");
        if (ranks.empty() && rank == 0) throw ShapeError("FC rank must be >= 1");
    }

    DimensionTree dimension_tree() const { return DimensionTree::build(order(), tree); }

    /// Ranks after clipping to what the fused weight tensor can support.
    std::vector<std::size_t> resolved_ranks() const {
        const Shape f = fused_dims();
        if (kind == FormatKind::HT) {
            const DimensionTree t = dimension_tree();
            return t.clip_ranks(f, ranks.empty() ? t.uniform(rank) : ranks);
        }
        std::vector<std::size_t> want = ranks.empty() ? std::vector<std::size_t>(order() + 1, rank) : ranks;
        if (want.size() != order() + 1) throw ShapeError("TT layer ranks need d+1 entries");
        return tt_clip_ranks(f, want);
    }

    /// Checks that `params` has the shapes this spec implies.
    void check_params(const Format& params) const {
        validate();
        if (kind_of(params) != kind) throw ShapeError("FC params are " + to_string(kind_of(params)) + ", spec wants " + to_string(kind));
        if (format_dims(params) != fused_dims()) {
            throw ShapeError("FC params have dims " + shape_str(format_dims(params)) + ", spec fuses to " +
                             shape_str(fused_dims()));
        }
        if (const auto* h = std::get_if<HTFormat>(&params); h && h->tree().kind() != tree) {
            throw ShapeError("FC params use a " + to_string(h->tree().kind()) + " tree, spec wants " + to_string(tree));
        }
    }
};

/// Reshape of a length-N vector into the tensor with mode lengths n.
inline DenseTensor tensorize_vector(const DenseTensor& x, const Shape& n) {
    if (x.size() != shape_product(n)) {
        throw ShapeError("cannot tensorize " + std::to_string(x.size()) + " values into " + shape_str(n));
    }
    return reshape(x, n);
}

/// Dense M x N matrix -> weight tensor with fused modes (m_k n_k).
inline DenseTensor fuse_weight(const DenseTensor& w, const Shape& m, const Shape& n) {
    const std::size_t d = m.size();
    Shape split = m;
    split.insert(split.end(), n.begin(), n.end());
    std::vector<std::size_t> order;
    for (std::size_t k = 0; k < d; ++k) {
        order.push_back(k);
        order.push_back(d + k);
    }
    Shape fused(d);
    for (std::size_t k = 0; k < d; ++k) fused[k] = m[k] * n[k];
    return reshape(permute(reshape(w, split), order), fused);
}

/// Inverse of fuse_weight.
inline DenseTensor unfuse_weight(const DenseTensor& t, const Shape& m, const Shape& n) {
    const std::size_t d = m.size();
    Shape inter;
    for (std::size_t k = 0; k < d; ++k) {
        inter.push_back(m[k]);
        inter.push_back(n[k]);
    }
    std::vector<std::size_t> order;
    for (std::size_t k = 0; k < d; ++k) order.push_back(2 * k);
    for (std::size_t k = 0; k < d; ++k) order.push_back(2 * k + 1);
    return reshape(permute(reshape(t, inter), order), {shape_product(m), shape_product(n)});
}

/// Dense M x N weight recovered from the factors.
inline DenseTensor fc_dense_weight(const TensorizedFCSpec& spec, const Format& params) {
    spec.check_params(params);
    return unfuse_weight(reconstruct(params), spec.m, spec.n);
}

/// Decomposes a dense M x N weight into the spec's format and ranks.
inline Format fc_params_from_dense(const TensorizedFCSpec& spec, const DenseTensor& w) {
    spec.validate();
    if (w.shape() != Shape{spec.M(), spec.N()}) {
        throw ShapeError("dense weight " + shape_str(w.shape()) + " does not match spec " + std::to_string(spec.M()) +
                         "x" + std::to_string(spec.N()));
    }
    const DenseTensor t = fuse_weight(w, spec.m, spec.n);
    const auto r = spec.resolved_ranks();
    if (spec.kind == FormatKind::HT) return ht_decompose(t, spec.dimension_tree(), RankPolicy::explicit_ranks(r));
    return tt_decompose(t, RankPolicy::explicit_ranks(r));
}

/// Number of rank indices summed when one entry of W is formed; the
/// variance of a recovered entry is this times the product of factor
/// variances.
inline double rank_paths(const Format& f) {
    double p = 1.0;
    if (const auto* h = std::get_if<HTFormat>(&f)) {
        for (std::size_t id = 1; id < h->tree().size(); ++id) p *= static_cast<double>(h->tree().rank(id));
    } else {
        for (std::size_t r : std::get<TTFormat>(f).ranks()) p *= static_cast<double>(r);
    }
    return p;
}

/// Gaussian factors scaled so recovered entries have variance gain / fan_in.
template <typename Rng>
Format init_factored(const Format& shape_source, std::size_t fan_in, Rng& rng, double gain = 1.0) {
    Format f = shape_source;
    auto& fs = factors_of(f);
    const double target = gain / static_cast<double>(fan_in) / rank_paths(f);
    const double stddev = std::pow(target, 0.5 / static_cast<double>(fs.size()));
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& t : fs)
        for (double& x : t.data()) x = dist(rng);
    return f;
}

/// Zero-filled factors with the spec's shapes.
inline Format fc_zero_params(const TensorizedFCSpec& spec) {
    spec.validate();
    const Shape f = spec.fused_dims();
    const auto r = spec.resolved_ranks();
    if (spec.kind == FormatKind::HT) {
        std::mt19937_64 rng(0);
        HTFormat h = random_ht(spec.dimension_tree(), f, r, rng);
        for (auto& t : h.factors()) t *= 0.0;
        return h;
    }
    std::vector<DenseTensor> cores;
    for (std::size_t k = 0; k < f.size(); ++k) cores.emplace_back(Shape{r[k], f[k], r[k + 1]});
    return TTFormat(std::move(cores));
}

template <typename Rng>
Format fc_init_params(const TensorizedFCSpec& spec, Rng& rng, double gain = 1.0) {
    return init_factored(fc_zero_params(spec), spec.N(), rng, gain);
}

namespace detail {

// Label scheme for a d-mode network.
struct FCLabels {
    std::size_t d;
    Label batch() const { return 0; }
    Label out_all() const { return 1; }
    Label in_all() const { return 2; }
    Label fused(std::size_t k) const { return static_cast<Label>(3 + k); }
    Label out(std::size_t k) const { return static_cast<Label>(3 + d + k); }
    Label in(std::size_t k) const { return static_cast<Label>(3 + 2 * d + k); }
    Label rank(std::size_t i) const { return static_cast<Label>(3 + 3 * d + i); }
};

}  // namespace detail

/// Factor input nodes plus the node holding the full weight tensor with
/// labels fused(0..d-1) in order.
struct RecoveryGraph {
    std::vector<ContractionTape::NodeId> factors;
    ContractionTape::NodeId tensor = 0;
};

/// Records the reconstruction of `f` on `tape`. Labels: fused mode k gets
/// fused(k); rank labels come from `labels.rank`.
inline RecoveryGraph record_recovery(ContractionTape& tape, const Format& f, const detail::FCLabels& lb) {
    RecoveryGraph g;
    const auto& fs = factors_of(f);
    g.factors.assign(fs.size(), 0);
    const std::size_t d = format_dims(f).size();
    if (const auto* h = std::get_if<HTFormat>(&f)) {
        const DimensionTree& tree = h->tree();
        std::function<ContractionTape::NodeId(std::size_t)> rec = [&](std::size_t id) {
            const TreeNode& n = tree.node(id);
            if (n.is_leaf()) {
                g.factors[id] = tape.input({fs[id], {lb.fused(n.begin), lb.rank(id)}});
                return g.factors[id];
            }
            const auto l = static_cast<std::size_t>(n.left), v = static_cast<std::size_t>(n.right);
            const auto left = rec(l);
            const auto right = rec(v);
            const DenseTensor& b = fs[id];
            g.factors[id] = id == 0 ? tape.input({reshape(b, {b.dim(0), b.dim(1)}), {lb.rank(l), lb.rank(v)}})
                                    : tape.input({b, {lb.rank(l), lb.rank(v), lb.rank(id)}});
            return tape.contract(tape.contract(left, g.factors[id]), right);
        };
        const auto root = rec(0);
        std::vector<Label> order;
        for (std::size_t k = 0; k < d; ++k) order.push_back(lb.fused(k));
        g.tensor = tape.arrange(root, order);
        return g;
    }
    // TT: boundary bonds of size 1 are dropped from the inputs.
    ContractionTape::NodeId acc = 0;
    for (std::size_t k = 0; k < d; ++k) {
        const DenseTensor& c = fs[k];
        Shape s;
        std::vector<Label> labels;
        if (k > 0) {
            s.push_back(c.dim(0));
            labels.push_back(lb.rank(k));
        }
        s.push_back(c.dim(1));
        labels.push_back(lb.fused(k));
        if (k + 1 < d) {
            s.push_back(c.dim(2));
            labels.push_back(lb.rank(k + 1));
        }
        g.factors[k] = tape.input({reshape(c, s), labels});
        acc = k == 0 ? g.factors[k] : tape.contract(acc, g.factors[k]);
    }
    g.tensor = acc;
    return g;
}

/// Forward evaluation kept for backward replay.
struct FCTrace {
    ContractionTape tape;
    std::vector<ContractionTape::NodeId> factors;
    ContractionTape::NodeId input = 0;
    ContractionTape::NodeId output = 0;
    std::vector<Shape> factor_shapes;
    Shape input_shape;
    std::size_t batch = 0;
    std::size_t out_features = 0;

    DenseTensor output_value() const {
        return reshape(tape.value(output).tensor, {batch, out_features});
    }
};

/// Runs fc_forward on a tape. x is (batch, N) or a single length-N vector.
inline FCTrace fc_trace(const TensorizedFCSpec& spec, const Format& params, const DenseTensor& x, ForwardMode mode,
                        OpCounter* counter = nullptr) {
    spec.check_params(params);
    const std::size_t N = spec.N(), M = spec.M(), d = spec.order();
    if (x.size() % N != 0 || (x.order() > 1 && x.shape().back() != N) || (x.order() == 1 && x.size() != N)) {
        throw ShapeError("FC input " + shape_str(x.shape()) + " is not a batch of length-" + std::to_string(N) + " vectors");
    }
    FCTrace tr;
    tr.tape.set_counter(counter);
    tr.batch = x.size() / N;
    tr.out_features = M;
    tr.input_shape = x.shape();
    const auto& fs = factors_of(params);
    for (const auto& f : fs) tr.factor_shapes.push_back(f.shape());
    const detail::FCLabels lb{d};

    if (mode == ForwardMode::Recovery) {
        const RecoveryGraph g = record_recovery(tr.tape, params, lb);
        tr.factors = g.factors;
        Shape inter;
        std::vector<Label> inter_labels, order;
        for (std::size_t k = 0; k < d; ++k) {
            inter.push_back(spec.m[k]);
            inter.push_back(spec.n[k]);
            inter_labels.push_back(lb.out(k));
            inter_labels.push_back(lb.in(k));
        }
        for (std::size_t k = 0; k < d; ++k) order.push_back(lb.out(k));
        for (std::size_t k = 0; k < d; ++k) order.push_back(lb.in(k));
        auto w = tr.tape.reshape(g.tensor, inter, inter_labels);
        w = tr.tape.arrange(w, order);
        w = tr.tape.reshape(w, {M, N}, {lb.out_all(), lb.in_all()});
        tr.input = tr.tape.input({reshape(x, {tr.batch, N}), {lb.batch(), lb.in_all()}});
        tr.output = tr.tape.contract(tr.input, w);
        return tr;
    }

    Shape xs{tr.batch};
    std::vector<Label> xl{lb.batch()};
    for (std::size_t k = 0; k < d; ++k) {
        xs.push_back(spec.n[k]);
        xl.push_back(lb.in(k));
    }
    tr.input = tr.tape.input({reshape(x, xs), xl});
    tr.factors.assign(fs.size(), 0);
    ContractionTape::NodeId acc = tr.input;

    if (const auto* h = std::get_if<HTFormat>(&params)) {
        const DimensionTree& tree = h->tree();
        for (std::size_t id : tree.inorder()) {
            const TreeNode& n = tree.node(id);
            const DenseTensor& f = fs[id];
            LabeledTensor in;
            if (n.is_leaf()) {
                const std::size_t k = n.begin;
                in = {reshape(f, {spec.m[k], spec.n[k], f.dim(1)}), {lb.out(k), lb.in(k), lb.rank(id)}};
            } else {
                const auto l = static_cast<std::size_t>(n.left), v = static_cast<std::size_t>(n.right);
                in = id == 0 ? LabeledTensor{reshape(f, {f.dim(0), f.dim(1)}), {lb.rank(l), lb.rank(v)}}
                             : LabeledTensor{f, {lb.rank(l), lb.rank(v), lb.rank(id)}};
            }
            tr.factors[id] = tr.tape.input(std::move(in));
            acc = tr.tape.contract(acc, tr.factors[id]);
        }
    } else {
        for (std::size_t k = 0; k < d; ++k) {
            const DenseTensor& c = fs[k];
            Shape s;
            std::vector<Label> labels;
            if (k > 0) {
                s.push_back(c.dim(0));
                labels.push_back(lb.rank(k));
            }
            s.push_back(spec.m[k]);
            s.push_back(spec.n[k]);
            labels.push_back(lb.out(k));
            labels.push_back(lb.in(k));
            if (k + 1 < d) {
                s.push_back(c.dim(2));
                labels.push_back(lb.rank(k + 1));
            }
            tr.factors[k] = tr.tape.input({reshape(c, s), labels});
            acc = tr.tape.contract(acc, tr.factors[k]);
        }
    }
    std::vector<Label> order{lb.batch()};
    for (std::size_t k = 0; k < d; ++k) order.push_back(lb.out(k));
    acc = tr.tape.arrange(acc, order);
    tr.output = tr.tape.reshape(acc, {tr.batch, M}, {lb.batch(), lb.out_all()});
    return tr;
}

/// y = W x for a batch (batch, N) -> (batch, M).
inline DenseTensor fc_forward(const TensorizedFCSpec& spec, const Format& params, const DenseTensor& x,
                              ForwardMode mode = ForwardMode::Chain, OpCounter* counter = nullptr) {
    return fc_trace(spec, params, x, mode, counter).output_value();
}

struct FactorGradient {
    std::string name;
    DenseTensor grad;
};

/// Per-factor gradients and the input gradient.
struct GradientBundle {
    std::vector<FactorGradient> factors;
    DenseTensor dx;
};

/// Replays the tape with upstream gradient dy (batch, M).
inline GradientBundle fc_backward(const FCTrace& tr, const Format& params, const DenseTensor& dy) {
    if (dy.size() != tr.batch * tr.out_features) {
        throw ShapeError("upstream gradient " + shape_str(dy.shape()) + " does not match FC output (" +
                         std::to_string(tr.batch) + "," + std::to_string(tr.out_features) + ")");
    }
    const auto grads = tr.tape.backward(tr.output, dy);
    GradientBundle b;
    for (std::size_t i = 0; i < tr.factors.size(); ++i) {
        const auto& g = grads[tr.factors[i]];
        b.factors.push_back({factor_name(params, i), g ? reshape(*g, tr.factor_shapes[i]) : DenseTensor(tr.factor_shapes[i])});
    }
    const auto& gx = grads[tr.input];
    b.dx = gx ? reshape(*gx, tr.input_shape) : DenseTensor(tr.input_shape);
    return b;
}

inline GradientBundle fc_backward(const TensorizedFCSpec& spec, const Format& params, const DenseTensor& x,
                                  const DenseTensor& dy, ForwardMode mode = ForwardMode::Chain) {
    return fc_backward(fc_trace(spec, params, x, mode), params, dy);
}

/// ceil(log2 d) for d >= 1.
inline std::size_t ceil_log2(std::size_t d) {
    std::size_t l = 0;
    while ((std::size_t{1} << l) < d) ++l;
    return l;
}

struct FCCost {
    double formula = 0.0;        // closed-form estimate, constant 1
    std::uint64_t measured = 0;  // multiplies counted in one single-sample forward
};

/// Closed-form cost of one forward pass next to an instrumented count.
///   HT chain     (2d-1) n max(M,N) r^(1+log2 d)
///   HT recovery  (log2 d - 1) M N (r^3 + r^2)
///   TT chain     d n max(M,N) r^2
///   TT recovery  (d-1) M N r^2
/// n is the largest input mode length and r the largest rank.
inline FCCost fc_cost_estimate(const TensorizedFCSpec& spec, ForwardMode mode) {
    spec.validate();
    const double d = static_cast<double>(spec.order());
    const double M = static_cast<double>(spec.M()), N = static_cast<double>(spec.N());
    const double n = static_cast<double>(*std::max_element(spec.n.begin(), spec.n.end()));
    const auto ranks = spec.resolved_ranks();
    const double r = static_cast<double>(*std::max_element(ranks.begin(), ranks.end()));
    const double lg = static_cast<double>(ceil_log2(spec.order()));
    FCCost c;
    if (spec.kind == FormatKind::HT) {
        c.formula = mode == ForwardMode::Chain ? (2 * d - 1) * n * std::max(M, N) * std::pow(r, 1 + lg)
                                               : (lg - 1) * M * N * (r * r * r + r * r);
    } else {
        c.formula = mode == ForwardMode::Chain ? d * n * std::max(M, N) * r * r : (d - 1) * M * N * r * r;
    }
    std::mt19937_64 rng(0);
    const Format params = fc_init_params(spec, rng);
    OpCounter counter;
    fc_forward(spec, params, DenseTensor::filled({1, spec.N()}, 1.0), mode, &counter);
    c.measured = counter.multiplies;
    return c;
}

/// Shape of the explicit derivative dW/dW_k as rows x cols.
///   HT leaf k:      r_k x prod_{j != k} n_j
///   TT first core:  n_1 r_1 x prod n
///   TT interior k:  r_{k-1} r_k x prod_{j != k} n_j
///   TT last core:   n_d r_{d-1} x prod n
/// `dims` are the (fused) mode lengths; `ranks` are leaf ranks per mode for
/// HT and the d+1 bond ranks for TT. k is 0-based.
inline Shape gradient_shape(FormatKind kind, const Shape& dims, const std::vector<std::size_t>& ranks, std::size_t k) {
    const std::size_t d = dims.size();
    if (k >= d) throw std::out_of_range("factor index " + std::to_string(k) + " out of range for d=" + std::to_string(d));
    const std::size_t all = shape_product(dims);
    const std::size_t others = all / dims[k];
    if (kind == FormatKind::HT) {
        if (ranks.size() != d) throw ShapeError("HT gradient shape needs one leaf rank per mode");
        return {ranks[k], others};
    }
    if (ranks.size() != d + 1) throw ShapeError("TT gradient shape needs d+1 bond ranks");
    if (k == 0) return {dims[0] * ranks[1], all};
    if (k + 1 == d) return {dims[d - 1] * ranks[d - 1], all};
    return {ranks[k] * ranks[k + 1], others};
}

/// gradient_shape for the factors of an FC layer's parameters.
inline Shape gradient_shape(const Format& params, std::size_t k) {
    const Shape dims = format_dims(params);
    if (const auto* h = std::get_if<HTFormat>(&params)) {
        std::vector<std::size_t> leaf_ranks;
        for (std::size_t j = 0; j < dims.size(); ++j) leaf_ranks.push_back(h->tree().rank(h->tree().leaf_of_mode(j)));
        return gradient_shape(FormatKind::HT, dims, leaf_ranks, k);
    }
    return gradient_shape(FormatKind::TT, dims, std::get<TTFormat>(params).ranks(), k);
}

}  // namespace htnn
