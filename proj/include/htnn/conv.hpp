#pragma once

// Convolution with a factored kernel. The kernel tensor has modes
// (filter volume, c_1 s_1, ..., c_{d-1} s_{d-1}) with fused index
// i_c * s_k + i_s (c-major). Evaluation always recovers the dense kernel
// first; contraction chains do not commute with convolution.
//
// Images are NHWC. The operation is cross-correlation (no kernel flip).

#include <string>
#include <vector>

#include "fc.hpp"

namespace htnn {

struct ConvKernelSpec {
    std::size_t l = 3;   // square filter size
    Shape filter;        // optional explicit filter dims (e.g. w,h,t); defaults to {l,l}
    Shape c;             // input channel factorization
    Shape s;             // output channel factorization
    FormatKind kind = FormatKind::TT;
    TreeKind tree = TreeKind::Balanced;
    std::size_t rank = 1;
    std::vector<std::size_t> ranks;

    Shape filter_dims() const { return filter.empty() ? Shape{l, l} : filter; }
    std::size_t volume() const { return shape_product(filter_dims()); }
    std::size_t C() const { return shape_product(c); }
    std::size_t S() const { return shape_product(s); }
    std::size_t order() const { return c.size() + 1; }

    Shape tensor_dims() const {
        Shape t{volume()};
        for (std::size_t k = 0; k < c.size(); ++k) t.push_back(c[k] * s[k]);
        return t;
    }

    void validate() const {
        if (c.empty() || c.size() != s.size()) {
            throw ShapeError("conv channel factorization needs equal-length c and s, got c=" + shape_str(c) + " s=" + shape_str(s));
        }
        for (std::size_t x : filter_dims())
            if (x == 0) throw ShapeError("filter dims must be positive");
        for (std::size_t k = 0; k < c.size(); ++k)
            if (c[k] == 0 || s[k] == 0) throw ShapeError("channel mode lengths must be positive");
        if (ranks.empty() && rank == 0) throw ShapeError("conv rank must be >= 1");
    }

    DimensionTree dimension_tree() const { return DimensionTree::build(order(), tree); }

    std::vector<std::size_t> resolved_ranks() const {
        const Shape t = tensor_dims();
        if (kind == FormatKind::HT) {
            const DimensionTree dt = dimension_tree();
            return dt.clip_ranks(t, ranks.empty() ? dt.uniform(rank) : ranks);
        }
        std::vector<std::size_t> want = ranks.empty() ? std::vector<std::size_t>(order() + 1, rank) : ranks;
        if (want.size() != order() + 1) throw ShapeError("TT kernel ranks need d+1 entries");
        return tt_clip_ranks(t, want);
    }

    void check_params(const Format& params) const {
        validate();
        if (kind_of(params) != kind) throw ShapeError("kernel params are " + to_string(kind_of(params)) + ", spec wants " + to_string(kind));
        if (format_dims(params) != tensor_dims()) {
            throw ShapeError("kernel params have dims " + shape_str(format_dims(params)) + ", spec wants " +
                             shape_str(tensor_dims()));
        }
    }
};

/// Dense (volume*C, S) matrix -> kernel tensor.
inline DenseTensor fuse_kernel(const DenseTensor& k, const ConvKernelSpec& spec) {
    const std::size_t d1 = spec.c.size();
    Shape split{spec.volume()};
    split.insert(split.end(), spec.c.begin(), spec.c.end());
    split.insert(split.end(), spec.s.begin(), spec.s.end());
    std::vector<std::size_t> order{0};
    for (std::size_t j = 0; j < d1; ++j) {
        order.push_back(1 + j);
        order.push_back(1 + d1 + j);
    }
    return reshape(permute(reshape(k, split), order), spec.tensor_dims());
}

/// Kernel tensor -> dense (volume*C, S) matrix; rows ordered (filter..., C).
inline DenseTensor unfuse_kernel(const DenseTensor& t, const ConvKernelSpec& spec) {
    const std::size_t d1 = spec.c.size();
    Shape inter{spec.volume()};
    for (std::size_t j = 0; j < d1; ++j) {
        inter.push_back(spec.c[j]);
        inter.push_back(spec.s[j]);
    }
    std::vector<std::size_t> order{0};
    for (std::size_t j = 0; j < d1; ++j) order.push_back(1 + 2 * j);
    for (std::size_t j = 0; j < d1; ++j) order.push_back(2 + 2 * j);
    return reshape(permute(reshape(t, inter), order), {spec.volume() * spec.C(), spec.S()});
}

/// Recovered dense kernel with shape (filter dims..., C, S).
inline DenseTensor recover_kernel(const ConvKernelSpec& spec, const Format& params) {
    spec.check_params(params);
    Shape out = spec.filter_dims();
    out.push_back(spec.C());
    out.push_back(spec.S());
    return reshape(unfuse_kernel(reconstruct(params), spec), out);
}

/// Decomposes a dense kernel (filter dims..., C, S) into the spec's format.
inline Format kernel_params_from_dense(const ConvKernelSpec& spec, const DenseTensor& kernel) {
    spec.validate();
    if (kernel.size() != spec.volume() * spec.C() * spec.S()) {
        throw ShapeError("dense kernel " + shape_str(kernel.shape()) + " does not match spec");
    }
    const DenseTensor t = fuse_kernel(reshape(kernel, {spec.volume() * spec.C(), spec.S()}), spec);
    const auto r = spec.resolved_ranks();
    if (spec.kind == FormatKind::HT) return ht_decompose(t, spec.dimension_tree(), RankPolicy::explicit_ranks(r));
    return tt_decompose(t, RankPolicy::explicit_ranks(r));
}

inline Format kernel_zero_params(const ConvKernelSpec& spec) {
    spec.validate();
    const Shape t = spec.tensor_dims();
    const auto r = spec.resolved_ranks();
    if (spec.kind == FormatKind::HT) {
        std::mt19937_64 rng(0);
        HTFormat h = random_ht(spec.dimension_tree(), t, r, rng);
        for (auto& f : h.factors()) f *= 0.0;
        return h;
    }
    std::vector<DenseTensor> cores;
    for (std::size_t k = 0; k < t.size(); ++k) cores.emplace_back(Shape{r[k], t[k], r[k + 1]});
    return TTFormat(std::move(cores));
}

template <typename Rng>
Format kernel_init_params(const ConvKernelSpec& spec, Rng& rng, double gain = 1.0) {
    return init_factored(kernel_zero_params(spec), spec.volume() * spec.C(), rng, gain);
}

struct Conv2dGeometry {
    std::size_t stride = 1;
    std::size_t pad = 0;

    /// Padding that keeps H and W at stride 1 for an odd filter size.
    static Conv2dGeometry same(std::size_t l) { return {1, (l - 1) / 2}; }

    std::size_t out_extent(std::size_t in, std::size_t l) const {
        if (stride == 0) throw ShapeError("stride must be >= 1");
        if (in + 2 * pad < l) throw ShapeError("filter larger than padded input");
        return (in + 2 * pad - l) / stride + 1;
    }
};

/// Patch matrix (B*H'*W', l*l*C); column index (kh*l + kw)*C + c.
inline DenseTensor im2col(const DenseTensor& x, std::size_t l, const Conv2dGeometry& g) {
    if (x.order() != 4) throw ShapeError("images must be (batch,H,W,C), got " + shape_str(x.shape()));
    const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    const std::size_t Ho = g.out_extent(H, l), Wo = g.out_extent(W, l);
    DenseTensor p({B * Ho * Wo, l * l * C});
    const auto src = x.data();
    auto dst = p.data();
    std::size_t row = 0;
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t oh = 0; oh < Ho; ++oh)
            for (std::size_t ow = 0; ow < Wo; ++ow, ++row) {
                double* out = dst.data() + row * l * l * C;
                for (std::size_t kh = 0; kh < l; ++kh) {
                    const long ih = static_cast<long>(oh * g.stride + kh) - static_cast<long>(g.pad);
                    for (std::size_t kw = 0; kw < l; ++kw, out += C) {
                        const long iw = static_cast<long>(ow * g.stride + kw) - static_cast<long>(g.pad);
                        if (ih < 0 || iw < 0 || ih >= static_cast<long>(H) || iw >= static_cast<long>(W)) continue;
                        const double* in = src.data() + ((b * H + static_cast<std::size_t>(ih)) * W + static_cast<std::size_t>(iw)) * C;
                        std::copy(in, in + C, out);
                    }
                }
            }
    return p;
}

/// Adjoint of im2col: scatters patch gradients back onto the image.
inline DenseTensor col2im(const DenseTensor& p, const Shape& image_shape, std::size_t l, const Conv2dGeometry& g) {
    const std::size_t B = image_shape[0], H = image_shape[1], W = image_shape[2], C = image_shape[3];
    const std::size_t Ho = g.out_extent(H, l), Wo = g.out_extent(W, l);
    DenseTensor x(image_shape);
    auto dst = x.data();
    const auto src = p.data();
    std::size_t row = 0;
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t oh = 0; oh < Ho; ++oh)
            for (std::size_t ow = 0; ow < Wo; ++ow, ++row) {
                const double* in = src.data() + row * l * l * C;
                for (std::size_t kh = 0; kh < l; ++kh) {
                    const long ih = static_cast<long>(oh * g.stride + kh) - static_cast<long>(g.pad);
                    for (std::size_t kw = 0; kw < l; ++kw, in += C) {
                        const long iw = static_cast<long>(ow * g.stride + kw) - static_cast<long>(g.pad);
                        if (ih < 0 || iw < 0 || ih >= static_cast<long>(H) || iw >= static_cast<long>(W)) continue;
                        double* out = dst.data() + ((b * H + static_cast<std::size_t>(ih)) * W + static_cast<std::size_t>(iw)) * C;
                        for (std::size_t c = 0; c < C; ++c) out[c] += in[c];
                    }
                }
            }
    return x;
}

/// Dense cross-correlation; kernel (l,l,C,S), images (B,H,W,C).
inline DenseTensor conv2d_dense(const DenseTensor& x, const DenseTensor& kernel, const Conv2dGeometry& g) {
    if (kernel.order() != 4 || kernel.dim(0) != kernel.dim(1)) {
        throw ShapeError("dense kernel must be (l,l,C,S), got " + shape_str(kernel.shape()));
    }
    if (x.order() != 4 || x.dim(3) != kernel.dim(2)) {
        throw ShapeError("images " + shape_str(x.shape()) + " do not match kernel " + shape_str(kernel.shape()));
    }
    const std::size_t l = kernel.dim(0), S = kernel.dim(3);
    const DenseTensor p = im2col(x, l, g);
    const DenseTensor y = matmul(p, reshape(kernel, {l * l * x.dim(3), S}));
    return reshape(y, {x.dim(0), g.out_extent(x.dim(1), l), g.out_extent(x.dim(2), l), S});
}

/// Forward state kept for the backward pass.
struct ConvTrace {
    ContractionTape tape;  // recovery of the (l*l*C, S) kernel matrix
    std::vector<ContractionTape::NodeId> factors;
    ContractionTape::NodeId kernel = 0;
    std::vector<Shape> factor_shapes;
    DenseTensor patches;
    Shape image_shape;
    Shape output_shape;
    DenseTensor output;
};

inline ConvTrace conv_trace(const ConvKernelSpec& spec, const Format& params, const DenseTensor& x,
                            const Conv2dGeometry& g, ForwardMode mode = ForwardMode::Recovery) {
    if (mode == ForwardMode::Chain) {
        throw std::invalid_argument(
            "convolution supports only recovery mode: convolution and factor contraction do not commute");
    }
    spec.check_params(params);
    if (spec.filter_dims().size() != 2 || spec.filter_dims()[0] != spec.filter_dims()[1]) {
        throw ShapeError("2-D convolution needs a square l x l filter, spec has " + shape_str(spec.filter_dims()));
    }
    if (x.order() != 4 || x.dim(3) != spec.C()) {
        throw ShapeError("images " + shape_str(x.shape()) + " do not have C=" + std::to_string(spec.C()) + " channels");
    }
    ConvTrace tr;
    const std::size_t d = spec.order(), d1 = d - 1;
    const detail::FCLabels lb{d};
    for (const auto& f : factors_of(params)) tr.factor_shapes.push_back(f.shape());
    const RecoveryGraph rg = record_recovery(tr.tape, params, lb);
    tr.factors = rg.factors;
    // fused(0) = filter volume; fused(k) splits into (c_k -> in(k), s_k -> out(k))
    Shape inter{spec.volume()};
    std::vector<Label> inter_labels{lb.fused(0)}, order{lb.fused(0)};
    for (std::size_t j = 0; j < d1; ++j) {
        inter.push_back(spec.c[j]);
        inter.push_back(spec.s[j]);
        inter_labels.push_back(lb.in(j));
        inter_labels.push_back(lb.out(j));
    }
    for (std::size_t j = 0; j < d1; ++j) order.push_back(lb.in(j));
    for (std::size_t j = 0; j < d1; ++j) order.push_back(lb.out(j));
    auto k = tr.tape.reshape(rg.tensor, inter, inter_labels);
    k = tr.tape.arrange(k, order);
    tr.kernel = tr.tape.reshape(k, {spec.volume() * spec.C(), spec.S()}, {lb.in_all(), lb.out_all()});

    tr.image_shape = x.shape();
    tr.patches = im2col(x, spec.l, g);
    tr.output_shape = {x.dim(0), g.out_extent(x.dim(1), spec.l), g.out_extent(x.dim(2), spec.l), spec.S()};
    tr.output = reshape(matmul(tr.patches, tr.tape.value(tr.kernel).tensor), tr.output_shape);
    return tr;
}

inline DenseTensor conv_forward(const ConvKernelSpec& spec, const Format& params, const DenseTensor& x,
                                const Conv2dGeometry& g, ForwardMode mode = ForwardMode::Recovery) {
    return conv_trace(spec, params, x, g, mode).output;
}

inline GradientBundle conv_backward(const ConvTrace& tr, const Format& params, const DenseTensor& dout,
                                    const ConvKernelSpec& spec, const Conv2dGeometry& g) {
    if (dout.shape() != tr.output_shape) {
        throw ShapeError("upstream gradient " + shape_str(dout.shape()) + " does not match conv output " +
                         shape_str(tr.output_shape));
    }
    const DenseTensor dy = reshape(dout, {tr.patches.dim(0), spec.S()});
    const DenseTensor& kmat = tr.tape.value(tr.kernel).tensor;
    DenseTensor dk({kmat.dim(0), kmat.dim(1)});
    dk.matrix().noalias() = tr.patches.matrix().transpose() * dy.matrix();
    DenseTensor dp({dy.dim(0), kmat.dim(0)});
    dp.matrix().noalias() = dy.matrix() * kmat.matrix().transpose();

    const auto grads = tr.tape.backward(tr.kernel, dk);
    GradientBundle b;
    for (std::size_t i = 0; i < tr.factors.size(); ++i) {
        const auto& gr = grads[tr.factors[i]];
        b.factors.push_back({factor_name(params, i), gr ? reshape(*gr, tr.factor_shapes[i]) : DenseTensor(tr.factor_shapes[i])});
    }
    b.dx = col2im(dp, tr.image_shape, spec.l, g);
    return b;
}

inline GradientBundle conv_backward(const ConvKernelSpec& spec, const Format& params, const DenseTensor& x,
                                    const DenseTensor& dout, const Conv2dGeometry& g) {
    return conv_backward(conv_trace(spec, params, x, g), params, dout, spec, g);
}

}  // namespace htnn
