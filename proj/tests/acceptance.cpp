// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>

#include <htnn/htnn.hpp>

#include "oracles.hpp"
#include "spot_checks.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace htnn;
using namespace htnn::test;

namespace {

struct Outcome {
    bool pass;
    std::string detail;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

Shape random_dims(std::mt19937_64& rng, std::size_t d, std::size_t lo, std::size_t hi) {
    Shape dims(d);
    for (auto& n : dims) n = lo + rng() % (hi - lo + 1);
    return dims;
}

TensorizedFCSpec random_fc_spec(std::mt19937_64& rng, FormatKind kind, std::size_t d, std::size_t cap, std::size_t max_rank) {
    TensorizedFCSpec s;
    s.kind = kind;
    for (std::size_t k = 0; k < d; ++k) {
        s.m.push_back(1 + rng() % cap);
        s.n.push_back(1 + rng() % cap);
    }
    s.rank = 1 + rng() % max_rank;
    s.tree = kind == FormatKind::HT && rng() % 3 == 0 ? TreeKind::Degenerate : TreeKind::Balanced;
    return s;
}

ConvKernelSpec random_conv_spec(std::mt19937_64& rng, FormatKind kind, std::size_t rank) {
    static const std::vector<Shape> splits{{2}, {3}, {4}, {2, 2}, {2, 3}, {2, 4}, {4, 2}, {2, 2, 2}};
    ConvKernelSpec s;
    s.kind = kind;
    s.l = 1 + rng() % 3;
    s.c = splits[rng() % splits.size()];
    do s.s = splits[rng() % splits.size()];
    while (s.s.size() != s.c.size());
    s.rank = rank;
    return s;
}

// Direct-loop cross-correlation, NHWC input, (l,l,C,S) kernel.
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

json read_config(const std::string& name) {
    std::ifstream in(std::string(HTNN_CONFIG_DIR) + "/" + name);
    if (!in) throw std::runtime_error("missing config " + name);
    return json::parse(in);
}

// ---- criteria ----

Outcome exact_round_trips() {
    double worst = 0.0;
    for (int seed = 0; seed < 50; ++seed) {
        std::mt19937_64 rng(1000 + seed);
        const std::size_t d = seed % 2 ? 4 : 2;
        const Shape dims = random_dims(rng, d, 2, 6);
        const std::size_t r = 1 + rng() % 3;
        const TreeKind kind = seed % 3 ? TreeKind::Balanced : TreeKind::Degenerate;
        const DimensionTree tree = DimensionTree::build(d, kind);
        const DenseTensor t = ht_reconstruct(random_ht(tree, dims, tree.clip_ranks(dims, tree.uniform(r)), rng));
        worst = std::max(worst, relative_error(ht_reconstruct(ht_decompose(t, DimensionTree::build(d, kind), RankPolicy::uniform(r))), t));
        const DenseTensor u = tt_reconstruct(random_tt(dims, tt_clip_ranks(dims, std::vector<std::size_t>(d + 1, r)), rng));
        worst = std::max(worst, relative_error(tt_reconstruct(tt_decompose(u, RankPolicy::uniform(r))), u));
    }
    return {worst <= 1e-10, "50 HT + 50 TT, worst rel err " + fmt("%.2e", worst)};
}

Outcome degenerate_bridge() {
    double worst = 0.0;
    for (int seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(2000 + seed);
        const std::size_t d = 2 + seed % 4;
        const Shape dims = random_dims(rng, d, 2, 4);
        const DimensionTree tree = DimensionTree::build(d, TreeKind::Degenerate);
        const HTFormat h = random_ht(tree, dims, tree.clip_ranks(dims, tree.uniform(1 + seed % 3)), rng);
        worst = std::max(worst, relative_error(tt_reconstruct(tt_from_degenerate_ht(h)), ht_reconstruct(h)));
    }
    return {worst <= 1e-12, "20 seeds, worst rel err " + fmt("%.2e", worst)};
}

Outcome chain_equals_recovery() {
    double worst = 0.0;
    for (FormatKind kind : {FormatKind::HT, FormatKind::TT})
        for (int seed = 0; seed < 100; ++seed) {
            std::mt19937_64 rng(3000 + seed);
            const std::size_t d = seed % 2 ? 4 : 2;
            const TensorizedFCSpec s = random_fc_spec(rng, kind, d, d == 4 ? 4 : 16, 3);
            const Format p = fc_init_params(s, rng);
            const DenseTensor x = random_tensor({2, s.N()}, rng);
            worst = std::max(worst, relative_error(fc_forward(s, p, x, ForwardMode::Chain), fc_forward(s, p, x, ForwardMode::Recovery)));
        }
    return {worst <= 1e-8, "100 HT + 100 TT, worst rel diff " + fmt("%.2e", worst)};
}

Outcome finite_differences() {
    double ht = 0, tt_chain = 0, tt_rec = 0, tt_conv = 0, ht_conv = 0, lstm = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(4000 + seed);
        const std::size_t d = 2 + seed % 3;
        ht = std::max(ht, max_error(gradcheck_fc(random_fc_spec(rng, FormatKind::HT, d, 3, 3), seed, "ht", ForwardMode::Chain)));
        const TensorizedFCSpec t = random_fc_spec(rng, FormatKind::TT, d, 3, 3);
        tt_chain = std::max(tt_chain, max_error(gradcheck_fc(t, seed, "tt", ForwardMode::Chain)));
        tt_rec = std::max(tt_rec, max_error(gradcheck_fc(t, seed, "tt", ForwardMode::Recovery)));
        const Conv2dGeometry g{1 + seed % 2, seed % 2};
        tt_conv = std::max(tt_conv, max_error(gradcheck_conv(random_conv_spec(rng, FormatKind::TT, 2), seed, "conv", 5, g)));
        ht_conv = std::max(ht_conv, max_error(gradcheck_conv(random_conv_spec(rng, FormatKind::HT, 2), seed, "conv", 5, g)));
        TensorizedFCSpec in = random_fc_spec(rng, FormatKind::HT, 2, 3, 2);
        TensorizedFCSpec rec = random_fc_spec(rng, FormatKind::HT, 2, 3, 2);
        rec.n = in.m;  // recurrent map is hidden -> hidden
        rec.m = in.m;
        lstm = std::max(lstm, max_error(gradcheck_lstm(in, rec, seed, "lstm")));
    }
    const double worst = std::max({ht, tt_chain, tt_rec, tt_conv, ht_conv, lstm});
    std::string d = "20 specs per kind; max rel err HT-FC " + fmt("%.1e", ht) + ", TT-FC chain " + fmt("%.1e", tt_chain) +
                    ", TT-FC recovery " + fmt("%.1e", tt_rec) + ", TT-conv " + fmt("%.1e", tt_conv) + ", HT-conv " +
                    fmt("%.1e", ht_conv) + ", HT-LSTM " + fmt("%.1e", lstm);
    return {worst <= 1e-4, d};
}

Outcome kronecker_oracles() {
    double worst = 0.0;
    bool shapes_ok = true;
    // HT d = 2: W = U1 B U2^T
    for (int seed = 0; seed < 5; ++seed) {
        std::mt19937_64 rng(5000 + seed);
        TensorizedFCSpec s{{2, 3}, {3, 2}, FormatKind::HT, TreeKind::Balanced, 2, {}};
        const Format p = fc_init_params(s, rng, 16.0);
        const DenseTensor x = random_tensor({2, s.N()}, rng), dy = random_tensor({2, s.M()}, rng);
        const GradientBundle g = fc_backward(s, p, x, dy);
        const auto& f = std::get<HTFormat>(p).factors();
        const PairJacobians pj = pair_jacobians(f[1], reshape(f[0], {f[0].dim(0), f[0].dim(1)}), f[2]);
        const DenseTensor dT = weight_tensor_grad(s, x, dy);
        const DenseTensor v = vec_c(reshape(dT, {dT.dim(0), dT.dim(1)}));
        const DenseTensor jac[2] = {transpose(pj.left), transpose(pj.right)};
        for (std::size_t k = 0; k < 2; ++k) {
            const DenseTensor& u = f[k + 1];
            worst = std::max(worst, max_abs_diff(g.factors[k + 1].grad, unvec_c(matmul(jac[k], v), u.dim(0), u.dim(1))));
            const Shape oracle_shape{jac[k].dim(0) / dT.dim(k), jac[k].dim(1) / dT.dim(k)};
            shapes_ok = shapes_ok && oracle_shape == gradient_shape(p, k);
        }
    }
    // HT d = 4
    for (int seed = 0; seed < 5; ++seed) {
        std::mt19937_64 rng(5100 + seed);
        TensorizedFCSpec s{{2, 1, 2, 1}, {1, 2, 2, 3}, FormatKind::HT, TreeKind::Balanced, 2, {}};
        const Format p = fc_init_params(s, rng, 16.0);
        const DenseTensor x = random_tensor({2, s.N()}, rng), dy = random_tensor({2, s.M()}, rng);
        const GradientBundle g = fc_backward(s, p, x, dy);
        std::vector<Shape> shapes;
        const auto oracle = ht4_oracle_leaf_grads(std::get<HTFormat>(p), weight_tensor_grad(s, x, dy), &shapes);
        const std::size_t leaf_id[4] = {2, 3, 5, 6};
        for (std::size_t k = 0; k < 4; ++k) {
            worst = std::max(worst, max_abs_diff(g.factors[leaf_id[k]].grad, oracle[k]));
            shapes_ok = shapes_ok && shapes[k] == gradient_shape(p, k);
        }
    }
    // TT d = 2, 3, 4
    for (std::size_t d : {2u, 3u, 4u})
        for (int seed = 0; seed < 3; ++seed) {
            std::mt19937_64 rng(5200 + 10 * d + seed);
            TensorizedFCSpec s;
            s.kind = FormatKind::TT;
            s.rank = 3;
            for (std::size_t k = 0; k < d; ++k) {
                s.m.push_back(2);
                s.n.push_back(k % 2 ? 2 : 1);
            }
            const Format p = fc_init_params(s, rng, 16.0);
            const DenseTensor x = random_tensor({2, s.N()}, rng), dy = random_tensor({2, s.M()}, rng);
            const GradientBundle g = fc_backward(s, p, x, dy);
            std::vector<Shape> shapes;
            const auto oracle = tt_oracle_grads(std::get<TTFormat>(p), weight_tensor_grad(s, x, dy), &shapes);
            for (std::size_t k = 0; k < d; ++k) {
                worst = std::max(worst, max_abs_diff(g.factors[k].grad, oracle[k]));
                shapes_ok = shapes_ok && shapes[k] == gradient_shape(p, k);
            }
        }
    return {worst <= 1e-10 && shapes_ok,
            "HT d=2,4 and TT d=2,3,4; max abs diff " + fmt("%.2e", worst) + (shapes_ok ? ", shapes match" : ", SHAPE MISMATCH")};
}

Outcome space_bounds() {
    std::size_t checked = 0, violations = 0, tt_not_tight = 0, spot_bad = 0;
    std::mt19937_64 rng(6000);
    for (int i = 0; i < 100; ++i) {
        const Shape dims = random_dims(rng, 2 + rng() % 4, 1, 6);
        const std::size_t r = 1 + rng() % 4;
        const DimensionTree tree = DimensionTree::build(dims.size(), i % 2 ? TreeKind::Balanced : TreeKind::Degenerate);
        const Format h = random_ht(tree, dims, tree.clip_ranks(dims, tree.uniform(r)), rng);
        const Format t = random_tt(dims, tt_clip_ranks(dims, std::vector<std::size_t>(dims.size() + 1, r)), rng);
        for (const Format& f : {h, t}) {
            ++checked;
            if (!space_bound_check(f).within) ++violations;
        }
    }
    for (std::size_t d = 2; d <= 5; ++d)
        for (std::size_t r = 1; r <= 3; ++r) {
            std::vector<std::size_t> ranks(d + 1, r);
            ranks.front() = ranks.back() = 1;
            const SpaceBoundReport rep = space_bound_check(random_tt(Shape(d, 5), ranks, rng));
            if (rep.exact != rep.formula) ++tt_not_tight;
        }
    const auto spots = complexity_spot_checks();
    for (const auto& c : spots) {
        const Complexity got = complexity_estimate(c.q);
        if (got.space != c.space || got.compute != c.compute) ++spot_bad;
    }
    return {violations == 0 && tt_not_tight == 0 && spot_bad == 0,
            std::to_string(checked) + " formats within bound (" + std::to_string(violations) + " violations), uniform TT tight (" +
                std::to_string(tt_not_tight) + " off), " + std::to_string(spots.size() - spot_bad) + "/" + std::to_string(spots.size()) +
                " table spot checks"};
}

Outcome conv_matches_naive() {
    double worst = 0.0;
    for (int seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(7000 + seed);
        ConvKernelSpec s = random_conv_spec(rng, seed % 2 ? FormatKind::HT : FormatKind::TT, 1000);
        const DenseTensor k = random_tensor({s.l, s.l, s.C(), s.S()}, rng);
        const Format p = kernel_params_from_dense(s, k);
        const DenseTensor x = random_tensor({2, 5 + rng() % 3, 5 + rng() % 3, s.C()}, rng);
        for (const Conv2dGeometry g : {Conv2dGeometry{1, 0}, Conv2dGeometry{1, 1}, Conv2dGeometry{2, 1}})
            worst = std::max(worst, relative_error(conv_forward(s, p, x, g), naive_conv(x, k, g.stride, g.pad)));
    }
    return {worst <= 1e-9, "20 full-rank kernels x 3 geometries, worst rel err " + fmt("%.2e", worst)};
}

Outcome balanced_beats_unbalanced() {
    const json bal = read_config("mnist_balanced.json"), unb = read_config("mnist_unbalanced.json");
    std::size_t wins = 0;
    std::string d;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        json a = bal, b = unb;
        a["seed"] = b["seed"] = seed;
        const double va = run_training(a).metrics.back().val_acc;
        const double vb = run_training(b).metrics.back().val_acc;
        if (va >= vb) ++wins;
        d += (d.empty() ? "" : ", ") + fmt("%.3f", va) + "/" + fmt("%.3f", vb);
    }
    return {wins >= 4, "balanced won " + std::to_string(wins) + "/5 seeds (final val acc balanced/unbalanced: " + d + ")"};
}

Outcome hybrid_builds_converge() {
    const json base = read_config("hybrid_demo.json");
    bool ok = true;
    std::string d;
    for (const char* strategy : {"hybrid", "ht", "tt"}) {
        json cfg = base;
        cfg["model"]["strategy"] = strategy;
        const RunResult r = run_training(cfg);
        double best = 0.0;
        std::size_t epoch = 0;
        for (const auto& m : r.metrics)
            if (m.val_acc > best) {
                best = m.val_acc;
                epoch = m.epoch;
            }
        ok = ok && best >= 0.90 && r.metrics.size() <= 30;
        d += std::string(d.empty() ? "" : "; ") + strategy + " val " + fmt("%.3f", best) + " @ epoch " + std::to_string(epoch) +
             ", compression " + fmt("%.2f", r.summary["compression_factor"].get<double>());
    }
    return {ok, d};
}

Outcome cli_metrics_reproducible() {
    const fs::path dir = fs::temp_directory_path() / "htnn_acceptance_repro";
    fs::remove_all(dir);
    std::string csv[2];
    for (int i = 0; i < 2; ++i) {
        const fs::path out = dir / std::to_string(i);
        const std::string cmd = std::string(HTNN_CLI) + " train --config " + HTNN_CONFIG_DIR + "/hybrid_demo.json --out " + out.string() +
                                " >/dev/null 2>&1";
        const int status = std::system(cmd.c_str());
        if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) return {false, "cli train exited with status " + std::to_string(status)};
        std::ifstream in(out / "metrics.csv", std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        csv[i] = ss.str();
    }
    fs::remove_all(dir);
    return {!csv[0].empty() && csv[0] == csv[1], "two runs, metrics.csv " + std::to_string(csv[0].size()) + " bytes, " +
                                                     (csv[0] == csv[1] ? "byte-identical" : "DIFFERENT")};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"exact-rank HT/TT decompose round trip", exact_round_trips},
        {"degenerate HT to TT bridge", degenerate_bridge},
        {"chain and recovery forward agree", chain_equals_recovery},
        {"backward matches finite differences", finite_differences},
        {"reverse mode matches Kronecker-form oracles", kronecker_oracles},
        {"space bound and cost-table spot checks", space_bounds},
        {"full-rank conv matches naive loops", conv_matches_naive},
        {"balanced factorization beats most unbalanced", balanced_beats_unbalanced},
        {"hybrid, HT and TT builds reach 90% in 30 epochs", hybrid_builds_converge},
        {"CLI training is bit-reproducible", cli_metrics_reproducible},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("[%s] criterion %zu: %s (%.1fs)\n    %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), secs,
                    o.detail.c_str());
        std::fflush(stdout);
        if (!o.pass) ++failed;
    }
    std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
