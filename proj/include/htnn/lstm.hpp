#pragma once

// LSTM cell whose input and recurrent weights are factored FC layers.
//   G_u = sigmoid(W_u x + R_u a + b_u)      update gate
//   G_f = sigmoid(W_f x + R_f a + b_f)      forget gate
//   G_o = sigmoid(W_o x + R_o a + b_o)      output gate
//   C~  = tanh(W_c x + R_c a + b_c)
//   C   = G_u * C~ + G_f * C_prev
//   a   = G_o * tanh(C)

#include <array>
#include <cmath>

#include "fc.hpp"

namespace htnn {

enum Gate : std::size_t { GateUpdate = 0, GateForget = 1, GateOutput = 2, GateCell = 3 };

inline const char* gate_name(std::size_t g) {
    static const char* names[] = {"u", "f", "o", "c"};
    return names[g];
}

struct LSTMCellParams {
    TensorizedFCSpec input_spec;      // hidden x input
    TensorizedFCSpec recurrent_spec;  // hidden x hidden
    std::array<Format, 4> W;
    std::array<Format, 4> R;
    std::array<DenseTensor, 4> b;

    std::size_t hidden() const { return input_spec.M(); }
    std::size_t input_size() const { return input_spec.N(); }

    void validate() const {
        if (recurrent_spec.M() != hidden() || recurrent_spec.N() != hidden()) {
            throw ShapeError("recurrent weights must be " + std::to_string(hidden()) + "x" + std::to_string(hidden()));
        }
        for (std::size_t g = 0; g < 4; ++g) {
            input_spec.check_params(W[g]);
            recurrent_spec.check_params(R[g]);
            if (b[g].size() != hidden()) throw ShapeError(std::string("bias b_") + gate_name(g) + " has wrong length");
        }
    }
};

template <typename Rng>
LSTMCellParams lstm_init(const TensorizedFCSpec& input_spec, const TensorizedFCSpec& recurrent_spec, Rng& rng) {
    auto draw = [&](const TensorizedFCSpec& s) { return fc_init_params(s, rng); };
    // draws interleave W_g, R_g per gate
    Format w0 = draw(input_spec), r0 = draw(recurrent_spec);
    Format w1 = draw(input_spec), r1 = draw(recurrent_spec);
    Format w2 = draw(input_spec), r2 = draw(recurrent_spec);
    Format w3 = draw(input_spec), r3 = draw(recurrent_spec);
    const DenseTensor zero({input_spec.M()});
    LSTMCellParams p{input_spec, recurrent_spec, {w0, w1, w2, w3}, {r0, r1, r2, r3}, {zero, zero, zero, zero}};
    p.validate();
    return p;
}

struct LSTMTrace {
    std::array<FCTrace, 4> wx;
    std::array<FCTrace, 4> ra;
    std::array<DenseTensor, 4> gate;  // activated: G_u, G_f, G_o, C~
    DenseTensor c_prev;
    DenseTensor c;
    DenseTensor tanh_c;
    DenseTensor a;
};

/// x (batch, input), a_prev and c_prev (batch, hidden).
inline LSTMTrace lstm_cell_trace(const LSTMCellParams& p, const DenseTensor& x, const DenseTensor& a_prev,
                                 const DenseTensor& c_prev, ForwardMode mode = ForwardMode::Chain) {
    p.validate();
    const std::size_t H = p.hidden();
    if (a_prev.size() % H != 0 || c_prev.size() != a_prev.size()) {
        throw ShapeError("LSTM state shapes " + shape_str(a_prev.shape()) + " / " + shape_str(c_prev.shape()) +
                         " do not match hidden size " + std::to_string(H));
    }
    const std::size_t batch = a_prev.size() / H;
    if (x.size() != batch * p.input_size()) {
        throw ShapeError("LSTM input " + shape_str(x.shape()) + " does not match batch " + std::to_string(batch));
    }
    LSTMTrace t;
    for (std::size_t g = 0; g < 4; ++g) {
        t.wx[g] = fc_trace(p.input_spec, p.W[g], reshape(x, {batch, p.input_size()}), mode);
        t.ra[g] = fc_trace(p.recurrent_spec, p.R[g], reshape(a_prev, {batch, H}), mode);
        DenseTensor z = t.wx[g].output_value();
        z += t.ra[g].output_value();
        for (std::size_t i = 0; i < z.size(); ++i) {
            const double v = z[i] + p.b[g][i % H];
            z[i] = g == GateCell ? std::tanh(v) : 1.0 / (1.0 + std::exp(-v));
        }
        t.gate[g] = std::move(z);
    }
    t.c_prev = reshape(c_prev, {batch, H});
    t.c = DenseTensor({batch, H});
    t.tanh_c = DenseTensor({batch, H});
    t.a = DenseTensor({batch, H});
    for (std::size_t i = 0; i < t.c.size(); ++i) {
        t.c[i] = t.gate[GateUpdate][i] * t.gate[GateCell][i] + t.gate[GateForget][i] * t.c_prev[i];
        t.tanh_c[i] = std::tanh(t.c[i]);
        t.a[i] = t.gate[GateOutput][i] * t.tanh_c[i];
    }
    return t;
}

struct LSTMStep {
    DenseTensor a;
    DenseTensor c;
};

inline LSTMStep lstm_cell_forward(const LSTMCellParams& p, const DenseTensor& x, const DenseTensor& a_prev,
                                  const DenseTensor& c_prev, ForwardMode mode = ForwardMode::Chain) {
    LSTMTrace t = lstm_cell_trace(p, x, a_prev, c_prev, mode);
    return {std::move(t.a), std::move(t.c)};
}

struct LSTMGradients {
    std::array<GradientBundle, 4> W;  // dx stored in each bundle is the per-gate share
    std::array<GradientBundle, 4> R;
    std::array<DenseTensor, 4> b;
    DenseTensor dx;
    DenseTensor da_prev;
    DenseTensor dc_prev;
};

/// Backward from gradients w.r.t. a_t and C_t.
inline LSTMGradients lstm_cell_backward(const LSTMCellParams& p, const LSTMTrace& t, const DenseTensor& da,
                                        const DenseTensor& dc) {
    const std::size_t n = t.a.size(), H = p.hidden();
    if (da.size() != n || dc.size() != n) throw ShapeError("LSTM upstream gradients do not match the cell output");
    std::array<DenseTensor, 4> dz;
    for (auto& z : dz) z = DenseTensor(t.a.shape());
    LSTMGradients g;
    g.dc_prev = DenseTensor(t.a.shape());
    const auto& gu = t.gate[GateUpdate];
    const auto& gf = t.gate[GateForget];
    const auto& go = t.gate[GateOutput];
    const auto& ct = t.gate[GateCell];
    for (std::size_t i = 0; i < n; ++i) {
        const double dct = dc[i] + da[i] * go[i] * (1.0 - t.tanh_c[i] * t.tanh_c[i]);
        dz[GateOutput][i] = da[i] * t.tanh_c[i] * go[i] * (1.0 - go[i]);
        dz[GateUpdate][i] = dct * ct[i] * gu[i] * (1.0 - gu[i]);
        dz[GateForget][i] = dct * t.c_prev[i] * gf[i] * (1.0 - gf[i]);
        dz[GateCell][i] = dct * gu[i] * (1.0 - ct[i] * ct[i]);
        g.dc_prev[i] = dct * gf[i];
    }
    for (std::size_t k = 0; k < 4; ++k) {
        g.W[k] = fc_backward(t.wx[k], p.W[k], dz[k]);
        g.R[k] = fc_backward(t.ra[k], p.R[k], dz[k]);
        g.b[k] = DenseTensor({H});
        for (std::size_t i = 0; i < n; ++i) g.b[k][i % H] += dz[k][i];
        if (k == 0) {
            g.dx = g.W[k].dx;
            g.da_prev = g.R[k].dx;
        } else {
            g.dx += g.W[k].dx;
            g.da_prev += g.R[k].dx;
        }
    }
    return g;
}

}  // namespace htnn
