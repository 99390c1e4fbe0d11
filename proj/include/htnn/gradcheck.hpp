#pragma once

// Central finite-difference checks of analytic gradients.
// Relative error of one entry: |a - fd| / max(|a|, |fd|, 1e-8).

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "conv.hpp"
#include "lstm.hpp"

namespace htnn {

inline double gradient_relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

/// Max relative error over all entries of `param`; `loss` must read the
/// current value of `param`.
inline double finite_difference_error(DenseTensor& param, const DenseTensor& analytic, const std::function<double()>& loss,
                                      double step = 1e-5) {
    if (param.size() != analytic.size()) {
        throw ShapeError("gradient " + shape_str(analytic.shape()) + " does not match parameter " + shape_str(param.shape()));
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double keep = param[i];
        param[i] = keep + step;
        const double up = loss();
        param[i] = keep - step;
        const double down = loss();
        param[i] = keep;
        worst = std::max(worst, gradient_relative_error(analytic[i], (up - down) / (2.0 * step)));
    }
    return worst;
}

inline double inner(const DenseTensor& a, const DenseTensor& b) {
    if (a.size() != b.size()) throw ShapeError("inner product of " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

struct GradCheckRow {
    std::string layer;
    std::string factor;
    double max_rel_error = 0.0;
};

/// Test hook: scales the analytic gradient of one named factor before it is
/// compared, so the checker's failure path can be exercised.
struct GradientCorruption {
    std::string factor;
    double scale = 1.0;
    bool active() const { return !factor.empty(); }
};

namespace detail {
template <typename Rng>
DenseTensor gaussian(Shape s, Rng& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    DenseTensor t(std::move(s));
    for (double& x : t.data()) x = dist(rng);
    return t;
}

inline void corrupt(DenseTensor& g, const std::string& name, const GradientCorruption& c) {
    if (c.active() && c.factor == name) g *= c.scale;
}
}  // namespace detail

/// Checks fc_backward for one spec with random params, input and probe.
inline std::vector<GradCheckRow> gradcheck_fc(const TensorizedFCSpec& spec, std::uint64_t seed, const std::string& layer,
                                              ForwardMode mode = ForwardMode::Chain, std::size_t batch = 2,
                                              const GradientCorruption& corruption = {}) {
    std::mt19937_64 rng(seed);
    Format params = fc_init_params(spec, rng, 4.0);
    DenseTensor x = detail::gaussian({batch, spec.N()}, rng);
    const DenseTensor probe = detail::gaussian({batch, spec.M()}, rng);
    const GradientBundle g = fc_backward(spec, params, x, probe, mode);
    const auto loss = [&] { return inner(probe, fc_forward(spec, params, x, mode)); };
    std::vector<GradCheckRow> rows;
    auto& fs = factors_of(params);
    for (std::size_t i = 0; i < fs.size(); ++i) {
        DenseTensor a = g.factors[i].grad;
        detail::corrupt(a, g.factors[i].name, corruption);
        rows.push_back({layer, g.factors[i].name, finite_difference_error(fs[i], a, loss)});
    }
    DenseTensor dx = g.dx;
    detail::corrupt(dx, "x", corruption);
    rows.push_back({layer, "x", finite_difference_error(x, dx, loss)});
    return rows;
}

inline std::vector<GradCheckRow> gradcheck_conv(const ConvKernelSpec& spec, std::uint64_t seed, const std::string& layer,
                                                std::size_t image = 5, const Conv2dGeometry& geometry = {1, 1},
                                                const GradientCorruption& corruption = {}) {
    std::mt19937_64 rng(seed);
    Format params = kernel_init_params(spec, rng, 4.0);
    DenseTensor x = detail::gaussian({2, image, image, spec.C()}, rng);
    const DenseTensor y0 = conv_forward(spec, params, x, geometry);
    const DenseTensor probe = detail::gaussian(y0.shape(), rng);
    const GradientBundle g = conv_backward(spec, params, x, probe, geometry);
    const auto loss = [&] { return inner(probe, conv_forward(spec, params, x, geometry)); };
    std::vector<GradCheckRow> rows;
    auto& fs = factors_of(params);
    for (std::size_t i = 0; i < fs.size(); ++i) {
        DenseTensor a = g.factors[i].grad;
        detail::corrupt(a, g.factors[i].name, corruption);
        rows.push_back({layer, g.factors[i].name, finite_difference_error(fs[i], a, loss)});
    }
    DenseTensor dx = g.dx;
    detail::corrupt(dx, "x", corruption);
    rows.push_back({layer, "x", finite_difference_error(x, dx, loss)});
    return rows;
}

inline std::vector<GradCheckRow> gradcheck_lstm(const TensorizedFCSpec& input_spec, const TensorizedFCSpec& recurrent_spec,
                                                std::uint64_t seed, const std::string& layer,
                                                const GradientCorruption& corruption = {}) {
    std::mt19937_64 rng(seed);
    LSTMCellParams p = lstm_init(input_spec, recurrent_spec, rng);
    // unit-variance pre-activations keep gates off their flat tails, where
    // step-1e-5 differences fall below roundoff
    for (std::size_t k = 0; k < 4; ++k) {
        p.b[k] = detail::gaussian({p.hidden()}, rng);
        p.b[k] *= 0.5;
    }
    const std::size_t batch = 2, H = p.hidden();
    DenseTensor x = detail::gaussian({batch, p.input_size()}, rng);
    DenseTensor a0 = detail::gaussian({batch, H}, rng);
    DenseTensor c0 = detail::gaussian({batch, H}, rng);
    const DenseTensor pa = detail::gaussian({batch, H}, rng);
    const DenseTensor pc = detail::gaussian({batch, H}, rng);
    const LSTMTrace t = lstm_cell_trace(p, x, a0, c0);
    const LSTMGradients g = lstm_cell_backward(p, t, pa, pc);
    const auto loss = [&] {
        const LSTMStep s = lstm_cell_forward(p, x, a0, c0);
        return inner(pa, s.a) + inner(pc, s.c);
    };
    std::vector<GradCheckRow> rows;
    auto check = [&](DenseTensor& param, DenseTensor analytic, const std::string& name) {
        detail::corrupt(analytic, name, corruption);
        rows.push_back({layer, name, finite_difference_error(param, analytic, loss)});
    };
    for (std::size_t k = 0; k < 4; ++k) {
        auto& wf = factors_of(p.W[k]);
        for (std::size_t i = 0; i < wf.size(); ++i) check(wf[i], g.W[k].factors[i].grad, std::string("W_") + gate_name(k) + "." + g.W[k].factors[i].name);
        auto& rf = factors_of(p.R[k]);
        for (std::size_t i = 0; i < rf.size(); ++i) check(rf[i], g.R[k].factors[i].grad, std::string("R_") + gate_name(k) + "." + g.R[k].factors[i].name);
        check(p.b[k], g.b[k], std::string("b_") + gate_name(k));
    }
    check(x, g.dx, "x");
    check(a0, g.da_prev, "a_prev");
    check(c0, g.dc_prev, "c_prev");
    return rows;
}

inline double max_error(const std::vector<GradCheckRow>& rows) {
    double m = 0.0;
    for (const auto& r : rows) m = std::max(m, r.max_rel_error);
    return m;
}

}  // namespace htnn
