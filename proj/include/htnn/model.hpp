#pragma once

// Sequential classification models built from dense, factored FC, factored
// convolution, ReLU, 2x2 max-pool and flatten layers.
//
// Layers are stateless during evaluation: forward() returns the output and
// fills an opaque cache that backward() consumes, so one model can serve
// several batch shards at once.

#include <any>
#include <cmath>
#include <limits>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "conv.hpp"
#include "fc.hpp"
#include "htz.hpp"

namespace htnn {

class Layer {
public:
    virtual ~Layer() = default;

    virtual std::string kind() const = 0;
    const std::string& name() const { return name_; }
    void set_name(std::string n) { name_ = std::move(n); }

    /// Per-sample output shape; throws ShapeError naming the layer on mismatch.
    virtual Shape output_shape(const Shape& in) const = 0;

    /// x has a leading batch dimension.
    virtual DenseTensor forward(const DenseTensor& x, std::any& cache) const = 0;

    /// Adds parameter gradients into `grads` (one per parameter, same order
    /// as parameters()) and returns the input gradient.
    virtual DenseTensor backward(const std::any& cache, const DenseTensor& dy, std::vector<DenseTensor>& grads) const = 0;

    virtual std::vector<DenseTensor*> parameters() { return {}; }
    std::vector<const DenseTensor*> parameters() const {
        std::vector<const DenseTensor*> out;
        for (DenseTensor* p : const_cast<Layer*>(this)->parameters()) out.push_back(p);
        return out;
    }
    virtual std::vector<std::string> parameter_names() const { return {}; }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const DenseTensor* p : parameters()) n += p->size();
        return n;
    }
    /// Parameters the layer would hold without factorization.
    virtual std::size_t dense_param_count() const { return param_count(); }

    virtual std::vector<BundleEntry> checkpoint() const { return {}; }

protected:
    std::string error_prefix() const { return "layer '" + name_ + "' (" + kind() + "): "; }

    std::string name_;
};

class DenseLayer : public Layer {
public:
    template <typename Rng>
    DenseLayer(std::size_t in, std::size_t out, Rng& rng, double gain = 1.0) : w_({out, in}), b_({out}) {
        std::normal_distribution<double> dist(0.0, std::sqrt(gain / static_cast<double>(in)));
        for (double& x : w_.data()) x = dist(rng);
    }

    std::string kind() const override { return "dense"; }
    std::size_t in() const { return w_.dim(1); }
    std::size_t out() const { return w_.dim(0); }
    const DenseTensor& weight() const { return w_; }

    Shape output_shape(const Shape& s) const override {
        if (shape_product(s) != in()) {
            throw ShapeError(error_prefix() + "expects " + std::to_string(in()) + " inputs, got " + shape_str(s));
        }
        return {out()};
    }

    DenseTensor forward(const DenseTensor& x, std::any& cache) const override {
        const std::size_t B = x.dim(0);
        output_shape(Shape(x.shape().begin() + 1, x.shape().end()));
        DenseTensor x2 = reshape(x, {B, in()});
        DenseTensor y({B, out()});
        y.matrix().noalias() = x2.matrix() * w_.matrix().transpose();
        for (std::size_t i = 0; i < B; ++i)
            for (std::size_t j = 0; j < out(); ++j) y[i * out() + j] += b_[j];
        cache = std::make_pair(std::move(x2), x.shape());
        return y;
    }

    DenseTensor backward(const std::any& cache, const DenseTensor& dy, std::vector<DenseTensor>& grads) const override {
        const auto& [x2, shape] = std::any_cast<const std::pair<DenseTensor, Shape>&>(cache);
        grads[0].matrix().noalias() += dy.matrix().transpose() * x2.matrix();
        for (std::size_t i = 0; i < dy.dim(0); ++i)
            for (std::size_t j = 0; j < out(); ++j) grads[1][j] += dy[i * out() + j];
        DenseTensor dx({dy.dim(0), in()});
        dx.matrix().noalias() = dy.matrix() * w_.matrix();
        return reshape(dx, shape);
    }

    std::vector<DenseTensor*> parameters() override { return {&w_, &b_}; }
    std::vector<std::string> parameter_names() const override { return {name_ + ".W", name_ + ".b"}; }
    std::vector<BundleEntry> checkpoint() const override { return {{name_ + ".W", w_}, {name_ + ".b", b_}}; }

private:
    DenseTensor w_;
    DenseTensor b_;
};

/// FC layer with an HT or TT weight; chain or recovery evaluation.
class FactorizedFCLayer : public Layer {
public:
    template <typename Rng>
    FactorizedFCLayer(TensorizedFCSpec spec, Rng& rng, ForwardMode mode = ForwardMode::Chain, double gain = 1.0)
        : spec_(std::move(spec)), params_(fc_init_params(spec_, rng, gain)), b_({spec_.M()}), mode_(mode) {}

    std::string kind() const override { return "fc-" + to_string(spec_.kind); }
    const TensorizedFCSpec& spec() const { return spec_; }
    const Format& params() const { return params_; }
    Format& params() { return params_; }
    ForwardMode mode() const { return mode_; }

    Shape output_shape(const Shape& s) const override {
        if (shape_product(s) != spec_.N()) {
            throw ShapeError(error_prefix() + "expects " + std::to_string(spec_.N()) + " inputs, got " + shape_str(s));
        }
        return {spec_.M()};
    }

    DenseTensor forward(const DenseTensor& x, std::any& cache) const override {
        const std::size_t B = x.dim(0);
        output_shape(Shape(x.shape().begin() + 1, x.shape().end()));
        FCTrace tr = fc_trace(spec_, params_, reshape(x, {B, spec_.N()}), mode_);
        DenseTensor y = tr.output_value();
        for (std::size_t i = 0; i < B; ++i)
            for (std::size_t j = 0; j < spec_.M(); ++j) y[i * spec_.M() + j] += b_[j];
        cache = std::make_pair(std::move(tr), x.shape());
        return y;
    }

    DenseTensor backward(const std::any& cache, const DenseTensor& dy, std::vector<DenseTensor>& grads) const override {
        const auto& [tr, shape] = std::any_cast<const std::pair<FCTrace, Shape>&>(cache);
        GradientBundle g = fc_backward(tr, params_, dy);
        for (std::size_t i = 0; i < g.factors.size(); ++i) grads[i] += g.factors[i].grad;
        DenseTensor& db = grads[g.factors.size()];
        for (std::size_t i = 0; i < dy.dim(0); ++i)
            for (std::size_t j = 0; j < spec_.M(); ++j) db[j] += dy[i * spec_.M() + j];
        return reshape(g.dx, shape);
    }

    std::vector<DenseTensor*> parameters() override {
        std::vector<DenseTensor*> out;
        for (auto& f : factors_of(params_)) out.push_back(&f);
        out.push_back(&b_);
        return out;
    }
    std::vector<std::string> parameter_names() const override {
        std::vector<std::string> out;
        for (std::size_t i = 0; i < factors_of(params_).size(); ++i) out.push_back(name_ + "." + factor_name(params_, i));
        out.push_back(name_ + ".b");
        return out;
    }
    std::size_t dense_param_count() const override { return spec_.M() * spec_.N() + spec_.M(); }
    std::vector<BundleEntry> checkpoint() const override { return {{name_, params_}, {name_ + ".b", b_}}; }

private:
    TensorizedFCSpec spec_;
    Format params_;
    DenseTensor b_;
    ForwardMode mode_;
};

/// Convolution with a factored kernel (recovery evaluation).
class FactorizedConvLayer : public Layer {
public:
    template <typename Rng>
    FactorizedConvLayer(ConvKernelSpec spec, Conv2dGeometry geometry, Rng& rng, double gain = 1.0)
        : spec_(std::move(spec)), geometry_(geometry), params_(kernel_init_params(spec_, rng, gain)), b_({spec_.S()}) {}

    std::string kind() const override { return "conv-" + to_string(spec_.kind); }
    const ConvKernelSpec& spec() const { return spec_; }
    const Format& params() const { return params_; }
    const Conv2dGeometry& geometry() const { return geometry_; }

    Shape output_shape(const Shape& s) const override {
        if (s.size() != 3 || s[2] != spec_.C()) {
            throw ShapeError(error_prefix() + "expects (H,W," + std::to_string(spec_.C()) + ") images, got " + shape_str(s));
        }
        return {geometry_.out_extent(s[0], spec_.l), geometry_.out_extent(s[1], spec_.l), spec_.S()};
    }

    DenseTensor forward(const DenseTensor& x, std::any& cache) const override {
        output_shape(Shape(x.shape().begin() + 1, x.shape().end()));
        ConvTrace tr = conv_trace(spec_, params_, x, geometry_);
        DenseTensor y = tr.output;
        const std::size_t S = spec_.S();
        for (std::size_t i = 0; i < y.size(); ++i) y[i] += b_[i % S];
        cache = std::move(tr);
        return y;
    }

    DenseTensor backward(const std::any& cache, const DenseTensor& dy, std::vector<DenseTensor>& grads) const override {
        const auto& tr = std::any_cast<const ConvTrace&>(cache);
        GradientBundle g = conv_backward(tr, params_, dy, spec_, geometry_);
        for (std::size_t i = 0; i < g.factors.size(); ++i) grads[i] += g.factors[i].grad;
        DenseTensor& db = grads[g.factors.size()];
        const std::size_t S = spec_.S();
        for (std::size_t i = 0; i < dy.size(); ++i) db[i % S] += dy[i];
        return std::move(g.dx);
    }

    std::vector<DenseTensor*> parameters() override {
        std::vector<DenseTensor*> out;
        for (auto& f : factors_of(params_)) out.push_back(&f);
        out.push_back(&b_);
        return out;
    }
    std::vector<std::string> parameter_names() const override {
        std::vector<std::string> out;
        for (std::size_t i = 0; i < factors_of(params_).size(); ++i) out.push_back(name_ + "." + factor_name(params_, i));
        out.push_back(name_ + ".b");
        return out;
    }
    std::size_t dense_param_count() const override { return spec_.volume() * spec_.C() * spec_.S() + spec_.S(); }
    std::vector<BundleEntry> checkpoint() const override { return {{name_, params_}, {name_ + ".b", b_}}; }

private:
    ConvKernelSpec spec_;
    Conv2dGeometry geometry_;
    Format params_;
    DenseTensor b_;
};

class ReLULayer : public Layer {
public:
    std::string kind() const override { return "relu"; }
    Shape output_shape(const Shape& s) const override { return s; }

    DenseTensor forward(const DenseTensor& x, std::any& cache) const override {
        DenseTensor y = x;
        for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
        cache = x;
        return y;
    }
    DenseTensor backward(const std::any& cache, const DenseTensor& dy, std::vector<DenseTensor>&) const override {
        const auto& x = std::any_cast<const DenseTensor&>(cache);
        DenseTensor dx = dy;
        for (std::size_t i = 0; i < dx.size(); ++i)
            if (!(x[i] > 0.0)) dx[i] = 0.0;
        return dx;
    }
};

/// 2x2 max-pool with stride 2 over NHWC images; odd trailing rows/cols are dropped.
class MaxPool2Layer : public Layer {
public:
    std::string kind() const override { return "maxpool"; }

    Shape output_shape(const Shape& s) const override {
        if (s.size() != 3 || s[0] < 2 || s[1] < 2) throw ShapeError(error_prefix() + "expects (H,W,C) images with H,W >= 2, got " + shape_str(s));
        return {s[0] / 2, s[1] / 2, s[2]};
    }

    DenseTensor forward(const DenseTensor& x, std::any& cache) const override {
        const Shape o = output_shape(Shape(x.shape().begin() + 1, x.shape().end()));
        const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
        DenseTensor y({B, o[0], o[1], C});
        std::vector<std::size_t> arg(y.size());
        std::size_t out = 0;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < o[0]; ++i)
                for (std::size_t j = 0; j < o[1]; ++j)
                    for (std::size_t c = 0; c < C; ++c, ++out) {
                        double best = -std::numeric_limits<double>::infinity();
                        std::size_t where = 0;
                        for (std::size_t di = 0; di < 2; ++di)
                            for (std::size_t dj = 0; dj < 2; ++dj) {
                                const std::size_t idx = ((b * H + 2 * i + di) * W + 2 * j + dj) * C + c;
                                if (x[idx] > best) {
                                    best = x[idx];
                                    where = idx;
                                }
                            }
                        y[out] = best;
                        arg[out] = where;
                    }
        cache = std::make_pair(std::move(arg), x.shape());
        return y;
    }

    DenseTensor backward(const std::any& cache, const DenseTensor& dy, std::vector<DenseTensor>&) const override {
        const auto& [arg, shape] = std::any_cast<const std::pair<std::vector<std::size_t>, Shape>&>(cache);
        DenseTensor dx(shape);
        for (std::size_t i = 0; i < dy.size(); ++i) dx[arg[i]] += dy[i];
        return dx;
    }
};

class FlattenLayer : public Layer {
public:
    std::string kind() const override { return "flatten"; }
    Shape output_shape(const Shape& s) const override { return {shape_product(s)}; }
    DenseTensor forward(const DenseTensor& x, std::any& cache) const override {
        cache = x.shape();
        return reshape(x, {x.dim(0), x.size() / x.dim(0)});
    }
    DenseTensor backward(const std::any& cache, const DenseTensor& dy, std::vector<DenseTensor>&) const override {
        return reshape(dy, std::any_cast<const Shape&>(cache));
    }
};

struct LossResult {
    double loss_sum = 0.0;    // summed over the batch
    std::size_t correct = 0;
    std::vector<DenseTensor> grads;  // gradients of loss_sum, model parameter order
};

class Sequential {
public:
    Sequential(Shape input_shape, std::size_t classes) : input_(std::move(input_shape)), classes_(classes) {}

    void add(std::unique_ptr<Layer> layer) {
        if (layer->name().empty()) layer->set_name(layer->kind() + std::to_string(layers_.size() + 1));
        layers_.push_back(std::move(layer));
    }

    const std::vector<std::unique_ptr<Layer>>& layers() const { return layers_; }
    const Shape& input_shape() const { return input_; }
    std::size_t classes() const { return classes_; }

    /// Propagates shapes through every layer; throws naming the first bad layer.
    Shape validate() const {
        Shape s = input_;
        for (const auto& l : layers_) s = l->output_shape(s);
        if (s != Shape{classes_}) {
            throw ShapeError("model output " + shape_str(s) + " does not match " + std::to_string(classes_) + " classes");
        }
        return s;
    }

    std::vector<DenseTensor*> parameters() {
        std::vector<DenseTensor*> out;
        for (auto& l : layers_)
            for (DenseTensor* p : l->parameters()) out.push_back(p);
        return out;
    }
    std::vector<std::string> parameter_names() const {
        std::vector<std::string> out;
        for (const auto& l : layers_)
            for (auto& n : l->parameter_names()) out.push_back(n);
        return out;
    }
    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& l : layers_) n += l->param_count();
        return n;
    }
    std::size_t dense_param_count() const {
        std::size_t n = 0;
        for (const auto& l : layers_) n += l->dense_param_count();
        return n;
    }

    DenseTensor forward(const DenseTensor& x) const {
        DenseTensor h = x;
        std::any cache;
        for (const auto& l : layers_) h = l->forward(h, cache);
        return h;
    }

    /// Softmax cross-entropy summed over the batch, with gradients.
    LossResult loss_and_grad(const DenseTensor& x, std::span<const int> labels) const {
        std::vector<std::any> caches(layers_.size());
        DenseTensor h = x;
        for (std::size_t i = 0; i < layers_.size(); ++i) h = layers_[i]->forward(h, caches[i]);
        LossResult r;
        DenseTensor dh = softmax_cross_entropy(h, labels, r.loss_sum, r.correct);
        for (const auto& l : layers_)
            for (const DenseTensor* p : l->parameters()) r.grads.emplace_back(p->shape());
        std::size_t offset = r.grads.size();
        for (std::size_t i = layers_.size(); i-- > 0;) {
            const std::size_t np = layers_[i]->parameters().size();
            offset -= np;
            std::vector<DenseTensor> g(std::make_move_iterator(r.grads.begin() + static_cast<long>(offset)),
                                       std::make_move_iterator(r.grads.begin() + static_cast<long>(offset + np)));
            dh = layers_[i]->backward(caches[i], dh, g);
            std::move(g.begin(), g.end(), r.grads.begin() + static_cast<long>(offset));
        }
        return r;
    }

    /// Returns d(sum of losses)/d logits; accumulates loss and correct count.
    static DenseTensor softmax_cross_entropy(const DenseTensor& logits, std::span<const int> labels, double& loss_sum,
                                             std::size_t& correct) {
        const std::size_t B = logits.dim(0), K = logits.size() / B;
        if (labels.size() != B) throw ShapeError("label count does not match batch");
        DenseTensor d({B, K});
        for (std::size_t i = 0; i < B; ++i) {
            const double* z = logits.data().data() + i * K;
            const auto y = static_cast<std::size_t>(labels[i]);
            if (labels[i] < 0 || y >= K) throw std::out_of_range("label " + std::to_string(labels[i]) + " out of range");
            double mx = z[0];
            std::size_t arg = 0;
            for (std::size_t k = 1; k < K; ++k)
                if (z[k] > mx) {
                    mx = z[k];
                    arg = k;
                }
            double s = 0.0;
            for (std::size_t k = 0; k < K; ++k) s += std::exp(z[k] - mx);
            loss_sum += std::log(s) + mx - z[y];
            if (arg == y) ++correct;
            for (std::size_t k = 0; k < K; ++k) d[i * K + k] = std::exp(z[k] - mx) / s - (k == y ? 1.0 : 0.0);
        }
        return d;
    }

    std::vector<BundleEntry> checkpoint() const {
        std::vector<BundleEntry> out;
        for (const auto& l : layers_)
            for (auto& e : l->checkpoint()) out.push_back(std::move(e));
        return out;
    }

private:
    Shape input_;
    std::size_t classes_;
    std::vector<std::unique_ptr<Layer>> layers_;
};

}  // namespace htnn
