#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include <htnn/conv.hpp>
#include <htnn/fc.hpp>
#include <htnn/lstm.hpp>

#include "test_util.hpp"

using namespace htnn;
using htnn::test::random_tensor;

namespace {

TensorizedFCSpec random_fc_spec(std::mt19937_64& rng, FormatKind kind) {
    TensorizedFCSpec s;
    s.kind = kind;
    const std::size_t d = rng() % 2 ? 4 : 2;
    const std::size_t cap = d == 4 ? 4 : 16;  // keeps M, N <= 256
    for (std::size_t k = 0; k < d; ++k) {
        s.m.push_back(1 + rng() % cap);
        s.n.push_back(1 + rng() % cap);
    }
    s.rank = 1 + rng() % 3;
    s.tree = kind == FormatKind::HT && rng() % 3 == 0 ? TreeKind::Degenerate : TreeKind::Balanced;
    return s;
}

// Naive dense matrix-vector oracle.
DenseTensor dense_apply(const DenseTensor& w, const DenseTensor& x) {
    const std::size_t M = w.dim(0), N = w.dim(1), B = x.size() / N;
    DenseTensor y({B, M});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < M; ++i) {
            double s = 0;
            for (std::size_t j = 0; j < N; ++j) s += w[i * N + j] * x[b * N + j];
            y[b * M + i] = s;
        }
    return y;
}

// Direct-loop cross-correlation oracle, NHWC, kernel (l,l,C,S).
DenseTensor naive_conv(const DenseTensor& x, const DenseTensor& k, std::size_t stride, std::size_t pad) {
    const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3), l = k.dim(0), S = k.dim(3);
    const std::size_t Ho = (H + 2 * pad - l) / stride + 1, Wo = (W + 2 * pad - l) / stride + 1;
    DenseTensor y({B, Ho, Wo, S});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t oh = 0; oh < Ho; ++oh)
            for (std::size_t ow = 0; ow < Wo; ++ow)
                for (std::size_t s = 0; s < S; ++s) {
                    double acc = 0;
                    for (std::size_t i = 0; i < l; ++i)
                        for (std::size_t j = 0; j < l; ++j) {
                            const long ih = long(oh * stride + i) - long(pad), iw = long(ow * stride + j) - long(pad);
                            if (ih < 0 || iw < 0 || ih >= long(H) || iw >= long(W)) continue;
                            for (std::size_t c = 0; c < C; ++c)
                                acc += x.at({b, std::size_t(ih), std::size_t(iw), c}) * k.at({i, j, c, s});
                        }
                    y.at({b, oh, ow, s}) = acc;
                }
    return y;
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

TEST(Tensorize, ReshapesOnly) {
    const DenseTensor x({4}, {1, 2, 3, 4});
    EXPECT_EQ(tensorize_vector(x, {2, 2}), DenseTensor({2, 2}, {1, 2, 3, 4}));
    const DenseTensor v = htnn::test::iota_tensor({8});
    EXPECT_EQ(reshape(tensorize_vector(v, {2, 2, 2}), {8}), v);
    EXPECT_THROW(tensorize_vector(htnn::test::iota_tensor({6}), {2, 2, 2}), ShapeError);
}

TEST(FuseWeight, RoundTripAndIndexLayout) {
    std::mt19937_64 rng(1);
    const Shape m{2, 3}, n{4, 2};
    const DenseTensor w = random_tensor({6, 8}, rng);
    const DenseTensor t = fuse_weight(w, m, n);
    ASSERT_EQ(t.shape(), (Shape{8, 6}));
    // W[(i1,i2),(j1,j2)] sits at fused (i1*n1 + j1, i2*n2 + j2)
    EXPECT_EQ(t.at({1 * 4 + 3, 2 * 2 + 1}), w.at({1 * 3 + 2, 3 * 2 + 1}));
    EXPECT_EQ(unfuse_weight(t, m, n), w);
}

TEST(FCForward, IdentityWeight) {
    for (FormatKind kind : {FormatKind::HT, FormatKind::TT}) {
        TensorizedFCSpec s{{2, 3, 2}, {2, 3, 2}, kind, TreeKind::Balanced, 144, {}};
        const Format p = fc_params_from_dense(s, DenseTensor::identity(12));
        std::mt19937_64 rng(2);
        const DenseTensor x = random_tensor({3, 12}, rng);
        for (ForwardMode mode : {ForwardMode::Chain, ForwardMode::Recovery})
            EXPECT_LE(max_abs_diff(fc_forward(s, p, x, mode), x), 1e-10);
    }
}

TEST(FCForward, ChainMatchesRecoveryOnRandomSpecs) {
    for (FormatKind kind : {FormatKind::HT, FormatKind::TT}) {
        for (int seed = 0; seed < 100; ++seed) {
            std::mt19937_64 rng(seed);
            TensorizedFCSpec s = random_fc_spec(rng, kind);
            if (kind == FormatKind::TT && seed % 4 == 0) s.m.assign(s.m.size(), 1);
            const Format p = fc_init_params(s, rng);
            const DenseTensor x = random_tensor({2, s.N()}, rng);
            const DenseTensor yc = fc_forward(s, p, x, ForwardMode::Chain);
            const DenseTensor yr = fc_forward(s, p, x, ForwardMode::Recovery);
            ASSERT_LE(relative_error(yc, yr), 1e-8) << to_string(kind) << " seed " << seed;
        }
    }
}

TEST(FCForward, RecoveryMatchesDenseReconstruction) {
    for (FormatKind kind : {FormatKind::HT, FormatKind::TT}) {
        std::mt19937_64 rng(3);
        TensorizedFCSpec s{{2, 2, 2, 2}, {3, 2, 2, 2}, kind, TreeKind::Balanced, 2, {}};
        const Format p = fc_init_params(s, rng);
        const DenseTensor w = unfuse_weight(reconstruct(p), s.m, s.n);
        const DenseTensor x = random_tensor({4, s.N()}, rng);
        EXPECT_LE(relative_error(fc_forward(s, p, x, ForwardMode::Recovery), dense_apply(w, x)), 1e-10);
        EXPECT_LE(relative_error(fc_forward(s, p, x, ForwardMode::Chain), dense_apply(w, x)), 1e-10);
    }
}

TEST(FCForward, SingleVectorInput) {
    std::mt19937_64 rng(4);
    TensorizedFCSpec s{{2, 2}, {3, 2}, FormatKind::HT, TreeKind::Balanced, 2, {}};
    const Format p = fc_init_params(s, rng);
    const DenseTensor x = random_tensor({6}, rng);
    EXPECT_EQ(fc_forward(s, p, x).shape(), (Shape{1, 4}));
    EXPECT_THROW(fc_forward(s, p, random_tensor({5}, rng)), ShapeError);
    EXPECT_THROW(fc_forward(s, p, random_tensor({2, 7}, rng)), ShapeError);
}

TEST(FCForward, Linearity) {
    for (FormatKind kind : {FormatKind::HT, FormatKind::TT}) {
        std::mt19937_64 rng(5);
        TensorizedFCSpec s{{2, 3, 2, 2}, {2, 2, 3, 2}, kind, TreeKind::Balanced, 3, {}};
        const Format p = fc_init_params(s, rng);
        const DenseTensor x1 = random_tensor({2, s.N()}, rng), x2 = random_tensor({2, s.N()}, rng);
        for (ForwardMode mode : {ForwardMode::Chain, ForwardMode::Recovery}) {
            const DenseTensor lhs = fc_forward(s, p, 1.5 * x1 + (-0.7) * x2, mode);
            const DenseTensor rhs = 1.5 * fc_forward(s, p, x1, mode) + (-0.7) * fc_forward(s, p, x2, mode);
            EXPECT_LE(max_abs_diff(lhs, rhs), 1e-10);
        }
    }
}

TEST(FCForward, RejectsMismatchedParams) {
    std::mt19937_64 rng(6);
    TensorizedFCSpec s{{2, 2}, {2, 2}, FormatKind::HT, TreeKind::Balanced, 2, {}};
    TensorizedFCSpec t = s;
    t.kind = FormatKind::TT;
    EXPECT_THROW(fc_forward(s, fc_init_params(t, rng), DenseTensor({1, 4})), ShapeError);
    TensorizedFCSpec u = s;
    u.n = {2, 3};
    EXPECT_THROW(fc_forward(s, fc_init_params(u, rng), DenseTensor({1, 4})), ShapeError);
}

TEST(FCForward, InitializationGivesFanInScaledWeights) {
    std::mt19937_64 rng(7);
    TensorizedFCSpec s{{4, 4, 4, 4}, {4, 4, 4, 4}, FormatKind::HT, TreeKind::Balanced, 4, {}};
    double var = 0;
    const int reps = 20;
    for (int i = 0; i < reps; ++i) {
        const DenseTensor w = fc_dense_weight(s, fc_init_params(s, rng));
        var += std::pow(w.frobenius_norm(), 2) / static_cast<double>(w.size());
    }
    var /= reps;
    EXPECT_GT(var * 256.0, 0.3);
    EXPECT_LT(var * 256.0, 3.0);
}

TEST(FCCost, FormulaValuesAndInstrumentedCount) {
    TensorizedFCSpec s{{2, 2, 2, 2}, {2, 2, 2, 2}, FormatKind::HT, TreeKind::Balanced, 2, {}};
    const FCCost chain = fc_cost_estimate(s, ForwardMode::Chain);
    EXPECT_DOUBLE_EQ(chain.formula, 1792.0);
    EXPECT_GT(chain.measured, 0u);
    EXPECT_LE(static_cast<double>(chain.measured), 4.0 * chain.formula);
    const FCCost rec = fc_cost_estimate(s, ForwardMode::Recovery);
    EXPECT_DOUBLE_EQ(rec.formula, 3072.0);
    EXPECT_GT(rec.measured, 0u);
}

TEST(ConvForward, OneByOneIdentity) {
    ConvKernelSpec s;
    s.l = 1;
    s.c = {1};
    s.s = {1};
    s.kind = FormatKind::TT;
    const Format p = kernel_params_from_dense(s, DenseTensor({1, 1, 1, 1}, {1.0}));
    std::mt19937_64 rng(1);
    const DenseTensor x = random_tensor({2, 5, 5, 1}, rng);
    EXPECT_LE(max_abs_diff(conv_forward(s, p, x, {}), x), 1e-14);
}

TEST(ConvForward, ExactRankKernelMatchesDenseOracle) {
    for (FormatKind kind : {FormatKind::TT, FormatKind::HT}) {
        std::mt19937_64 rng(2);
        ConvKernelSpec s;
        s.l = 3;
        s.c = {2, 2};
        s.s = {2, 2};
        s.kind = kind;
        s.rank = 1000;  // full rank
        const DenseTensor k = random_tensor({3, 3, 4, 4}, rng);
        const Format p = kernel_params_from_dense(s, k);
        EXPECT_LE(relative_error(recover_kernel(s, p), k), 1e-12);
        const DenseTensor x = random_tensor({2, 7, 6, 4}, rng);
        for (const Conv2dGeometry g : {Conv2dGeometry{1, 0}, Conv2dGeometry{1, 1}, Conv2dGeometry{2, 1}})
            EXPECT_LE(relative_error(conv_forward(s, p, x, g), naive_conv(x, k, g.stride, g.pad)), 1e-9);
    }
}

TEST(ConvForward, SamePaddingKeepsSize) {
    std::mt19937_64 rng(3);
    ConvKernelSpec s;
    s.l = 3;
    s.c = {2, 2};
    s.s = {2, 4};
    s.rank = 2;
    const Format p = kernel_init_params(s, rng);
    const DenseTensor y = conv_forward(s, p, random_tensor({1, 8, 8, 4}, rng), Conv2dGeometry::same(3));
    EXPECT_EQ(y.shape(), (Shape{1, 8, 8, 8}));
}

TEST(ConvForward, RejectsChainModeAndWrongChannels) {
    std::mt19937_64 rng(4);
    ConvKernelSpec s;
    s.c = {2};
    s.s = {2};
    const Format p = kernel_init_params(s, rng);
    EXPECT_THROW(conv_forward(s, p, DenseTensor({1, 4, 4, 2}), {}, ForwardMode::Chain), std::invalid_argument);
    EXPECT_THROW(conv_forward(s, p, DenseTensor({1, 4, 4, 3}), {}), ShapeError);
}

TEST(ConvKernel, ThreeDimensionalFilterVolume) {
    std::mt19937_64 rng(5);
    ConvKernelSpec s;
    s.filter = {3, 3, 2};
    s.c = {2};
    s.s = {3};
    s.kind = FormatKind::HT;
    s.rank = 100;
    EXPECT_EQ(s.tensor_dims(), (Shape{18, 6}));
    const DenseTensor k = random_tensor({3, 3, 2, 2, 3}, rng);
    const DenseTensor back = recover_kernel(s, kernel_params_from_dense(s, k));
    EXPECT_EQ(back.shape(), (Shape{3, 3, 2, 2, 3}));
    EXPECT_LE(relative_error(back, k), 1e-12);
}

TEST(LSTMCell, ZeroWeightsGiveHalfGates) {
    std::mt19937_64 rng(1);
    TensorizedFCSpec in{{2, 2}, {2, 3}, FormatKind::HT, TreeKind::Balanced, 2, {}};
    TensorizedFCSpec rec{{2, 2}, {2, 2}, FormatKind::HT, TreeKind::Balanced, 2, {}};
    LSTMCellParams p = lstm_init(in, rec, rng);
    for (std::size_t g = 0; g < 4; ++g) {
        for (auto& f : factors_of(p.W[g])) f *= 0.0;
        for (auto& f : factors_of(p.R[g])) f *= 0.0;
    }
    const DenseTensor c = random_tensor({1, 4}, rng);
    const LSTMStep s = lstm_cell_forward(p, random_tensor({1, 6}, rng), random_tensor({1, 4}, rng), c);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_DOUBLE_EQ(s.c[i], 0.5 * c[i]);
        EXPECT_DOUBLE_EQ(s.a[i], 0.5 * std::tanh(0.5 * c[i]));
    }
}

TEST(LSTMCell, MatchesDenseOracleAndStaysBounded) {
    for (FormatKind kind : {FormatKind::HT, FormatKind::TT}) {
        std::mt19937_64 rng(2);
        TensorizedFCSpec in{{2, 3}, {3, 2}, kind, TreeKind::Balanced, 2, {}};
        TensorizedFCSpec rec{{2, 3}, {2, 3}, kind, TreeKind::Balanced, 2, {}};
        LSTMCellParams p = lstm_init(in, rec, rng);
        for (auto& b : p.b) b = random_tensor({6}, rng);
        const DenseTensor x = random_tensor({3, 6}, rng), a0 = random_tensor({3, 6}, rng), c0 = random_tensor({3, 6}, rng);
        const LSTMStep s = lstm_cell_forward(p, x, a0, c0);
        std::array<DenseTensor, 4> z;
        for (std::size_t g = 0; g < 4; ++g) {
            z[g] = dense_apply(fc_dense_weight(in, p.W[g]), x) + dense_apply(fc_dense_weight(rec, p.R[g]), a0);
            for (std::size_t i = 0; i < z[g].size(); ++i) z[g][i] += p.b[g][i % 6];
        }
        for (std::size_t i = 0; i < 18; ++i) {
            const double c = sigmoid(z[0][i]) * std::tanh(z[3][i]) + sigmoid(z[1][i]) * c0[i];
            EXPECT_NEAR(s.c[i], c, 1e-8);
            EXPECT_NEAR(s.a[i], sigmoid(z[2][i]) * std::tanh(c), 1e-8);
            EXPECT_LT(std::abs(s.a[i]), 1.0);
        }
    }
}
