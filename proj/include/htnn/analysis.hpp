#pragma once

// Closed-form storage/compute costs per method, the space bound check for
// constructed formats, and the gradient-transfer profiler.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "fc.hpp"
#include "gradcheck.hpp"
#include "htz.hpp"

namespace htnn {

enum class Method { FC, HT, TT, TR, BTD };

inline std::string to_string(Method m) {
    static const char* names[] = {"FC", "HT", "TT", "TR", "BTD"};
    return names[static_cast<int>(m)];
}

inline Method method_from_string(const std::string& s) {
    std::string u;
    for (char c : s) u.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    if (u == "FC") return Method::FC;
    if (u == "HT") return Method::HT;
    if (u == "TT") return Method::TT;
    if (u == "TR") return Method::TR;
    if (u == "BTD") return Method::BTD;
    throw std::invalid_argument("unknown method '" + s + "' (FC|HT|TT|TR|BTD)");
}

/// m and n are the largest output and input mode lengths; C is the CP rank
/// used by BTD only.
struct ComplexityQuery {
    Method method = Method::HT;
    std::uint64_t M = 1, N = 1, d = 2, m = 1, n = 1, r = 1, C = 0;

    void validate() const {
        for (std::uint64_t v : {M, N, d, m, n, r})
            if (v == 0) throw std::invalid_argument("complexity query fields must be positive");
        if (method == Method::BTD && C == 0) throw std::invalid_argument("BTD needs the CP rank C");
        if (method == Method::TT && d < 2) throw std::invalid_argument("TT needs d >= 2");
    }
};

struct Complexity {
    std::uint64_t compute = 0;
    std::uint64_t space = 0;
};

namespace detail {
inline std::uint64_t ipow(std::uint64_t b, std::uint64_t e) {
    std::uint64_t r = 1;
    while (e--) r *= b;
    return r;
}
}  // namespace detail

/// Formula values with constant 1; log2 d is rounded up for non-powers of two.
///   FC   space MN                       compute MN
///   HT   space d m n r + (d-1) r^3      compute (2d-1) n max(M,N) r^(1+log2 d)
///   TT   space (d-2) m n r^2 + 2 m n r  compute d n max(M,N) r^2
///   TR   space d (m+n) r^2              compute d (M+N) r^3
///   BTD  space (d m n r + r^d) C        compute d n max(M,N) r^d C
inline Complexity complexity_estimate(const ComplexityQuery& q) {
    q.validate();
    const std::uint64_t mx = std::max(q.M, q.N), r = q.r, d = q.d;
    switch (q.method) {
        case Method::FC: return {q.M * q.N, q.M * q.N};
        case Method::HT:
            return {(2 * d - 1) * q.n * mx * detail::ipow(r, 1 + ceil_log2(d)), d * q.m * q.n * r + (d - 1) * r * r * r};
        case Method::TT: return {d * q.n * mx * r * r, (d - 2) * q.m * q.n * r * r + 2 * q.m * q.n * r};
        case Method::TR: return {d * (q.M + q.N) * r * r * r, d * (q.m + q.n) * r * r};
        case Method::BTD: return {d * q.n * mx * detail::ipow(r, d) * q.C, (d * q.m * q.n * r + detail::ipow(r, d)) * q.C};
    }
    return {};
}

/// Query whose maxima are read off a format: the fused mode length plays
/// m*n (n = 1) and the largest rank plays r.
inline ComplexityQuery query_for(const Format& f) {
    const Shape dims = format_dims(f);
    ComplexityQuery q;
    q.method = kind_of(f) == FormatKind::HT ? Method::HT : Method::TT;
    q.d = dims.size();
    q.m = *std::max_element(dims.begin(), dims.end());
    q.n = 1;
    q.M = shape_product(dims);
    q.N = 1;
    q.r = max_rank(f);
    return q;
}

struct SpaceBoundReport {
    std::uint64_t exact = 0;
    std::uint64_t formula = 0;
    bool within = false;
};

inline SpaceBoundReport space_bound_check(const Format& f, const ComplexityQuery& q) {
    SpaceBoundReport r{param_count(f), complexity_estimate(q).space, false};
    r.within = r.exact <= r.formula;
    return r;
}

inline SpaceBoundReport space_bound_check(const Format& f) { return space_bound_check(f, query_for(f)); }

struct ComplexityRow {
    Method method;
    std::uint64_t d, m, n, r;
    std::uint64_t space_formula;
    std::int64_t space_exact = -1;          // -1 when no layer of that kind is implemented
    std::uint64_t compute_formula;
    std::int64_t multiplies_measured = -1;
};

/// One row per (method, r) for uniform m_k = m, n_k = n. HT/TT/FC rows carry
/// exact parameter counts and multiplies counted in one chain-mode forward;
/// TR/BTD rows are formula-only. BTD uses CP rank `btd_c`.
inline std::vector<ComplexityRow> complexity_sweep(const std::vector<Method>& methods, std::uint64_t d, std::uint64_t m,
                                                   std::uint64_t n, const std::vector<std::uint64_t>& ranks,
                                                   std::uint64_t btd_c = 1) {
    std::vector<ComplexityRow> rows;
    const std::uint64_t M = detail::ipow(m, d), N = detail::ipow(n, d);
    for (Method meth : methods)
        for (std::uint64_t r : ranks) {
            ComplexityQuery q{meth, M, N, d, m, n, r, meth == Method::BTD ? btd_c : 0};
            const Complexity c = complexity_estimate(q);
            ComplexityRow row{meth, d, m, n, r, c.space, -1, c.compute, -1};
            if (meth == Method::FC) {
                row.space_exact = static_cast<std::int64_t>(M * N);
                row.multiplies_measured = static_cast<std::int64_t>(M * N);
            } else if (meth == Method::HT || meth == Method::TT) {
                TensorizedFCSpec spec{Shape(d, m), Shape(d, n), meth == Method::HT ? FormatKind::HT : FormatKind::TT,
                                      TreeKind::Balanced, r, {}};
                row.space_exact = static_cast<std::int64_t>(param_count(fc_zero_params(spec)));
                row.multiplies_measured = static_cast<std::int64_t>(fc_cost_estimate(spec, ForwardMode::Chain).measured);
            }
            rows.push_back(row);
        }
    return rows;
}

inline std::string complexity_csv(const std::vector<ComplexityRow>& rows) {
    std::string out = "method,d,m,n,r,space_formula,space_exact,compute_formula,multiplies_measured\n";
    auto opt = [](std::int64_t v) { return v < 0 ? std::string("NA") : std::to_string(v); };
    for (const auto& r : rows) {
        out += to_string(r.method) + "," + std::to_string(r.d) + "," + std::to_string(r.m) + "," + std::to_string(r.n) + "," +
               std::to_string(r.r) + "," + std::to_string(r.space_formula) + "," + opt(r.space_exact) + "," +
               std::to_string(r.compute_formula) + "," + opt(r.multiplies_measured) + "\n";
    }
    return out;
}

// ---- gradient transfer ----

struct FactorProfile {
    std::string factor;
    Shape oracle_shape;  // rows x cols of dW/dW_k
    std::size_t elements = 0;
    double grad_norm = 0.0;         // mean over seeds
    double mean_abs_update = 0.0;   // mean over seeds, one plain sgd step
};

struct TransferProfile {
    std::string label;
    Shape dims;  // fused mode lengths
    std::vector<FactorProfile> factors;
    std::size_t total_elements = 0;
};

/// One forward/backward per spec and seed with a seeded input and upstream
/// gradient; leaf factors (HT) or cores (TT) are profiled. Specs must share M*N.
inline std::vector<TransferProfile> gradient_transfer_profile(const std::vector<std::pair<std::string, TensorizedFCSpec>>& specs,
                                                              const std::vector<std::uint64_t>& seeds, double lr = 0.01,
                                                              std::size_t batch = 4) {
    if (specs.empty()) throw std::invalid_argument("profile needs at least one spec");
    if (seeds.empty()) throw std::invalid_argument("profile needs at least one seed");
    const std::size_t MN = specs[0].second.M() * specs[0].second.N();
    std::vector<TransferProfile> out;
    for (const auto& [label, spec] : specs) {
        spec.validate();
        if (spec.M() * spec.N() != MN) {
            throw ShapeError("profile spec '" + label + "' has M*N=" + std::to_string(spec.M() * spec.N()) + ", expected " + std::to_string(MN));
        }
        TransferProfile p{label, spec.fused_dims(), {}, 0};
        const std::size_t d = spec.order();
        for (std::uint64_t seed : seeds) {
            std::mt19937_64 rng(seed);
            const Format params = fc_init_params(spec, rng);
            std::mt19937_64 probe_rng(seed ^ 0x9e3779b97f4a7c15ull);
            const DenseTensor x = detail::gaussian({batch, spec.N()}, probe_rng);
            const DenseTensor dy = detail::gaussian({batch, spec.M()}, probe_rng);
            const GradientBundle g = fc_backward(spec, params, x, dy, ForwardMode::Chain);
            for (std::size_t i = 0; i < g.factors.size(); ++i) {
                const bool is_leaf = kind_of(params) == FormatKind::TT ||
                                     std::get<HTFormat>(params).tree().node(i).is_leaf();
                if (!is_leaf) continue;
                const std::size_t mode = kind_of(params) == FormatKind::TT ? i : std::get<HTFormat>(params).tree().node(i).begin;
                if (p.factors.size() < d) p.factors.resize(d);
                FactorProfile& fp = p.factors[mode];
                fp.factor = g.factors[i].name;
                fp.oracle_shape = gradient_shape(params, mode);
                fp.elements = shape_product(fp.oracle_shape);
                double sq = 0.0, abs_sum = 0.0;
                for (double v : g.factors[i].grad.data()) {
                    sq += v * v;
                    abs_sum += std::abs(lr * v);
                }
                fp.grad_norm += std::sqrt(sq) / static_cast<double>(seeds.size());
                fp.mean_abs_update += abs_sum / static_cast<double>(g.factors[i].grad.size()) / static_cast<double>(seeds.size());
            }
        }
        for (const auto& f : p.factors) p.total_elements += f.elements;
        out.push_back(std::move(p));
    }
    return out;
}

inline std::string profile_csv(const std::vector<TransferProfile>& profiles) {
    std::string out = "spec,dims,factor,oracle_rows,oracle_cols,elements,grad_norm,mean_abs_update\n";
    char buf[128];
    for (const auto& p : profiles) {
        std::string dims;
        for (std::size_t k = 0; k < p.dims.size(); ++k) dims += (k ? "x" : "") + std::to_string(p.dims[k]);
        for (const auto& f : p.factors) {
            std::snprintf(buf, sizeof buf, "%.6e,%.6e", f.grad_norm, f.mean_abs_update);
            out += p.label + "," + dims + "," + f.factor + "," + std::to_string(f.oracle_shape[0]) + "," +
                   std::to_string(f.oracle_shape[1]) + "," + std::to_string(f.elements) + "," + buf + "\n";
        }
    }
    return out;
}

}  // namespace htnn
