#pragma once

#include <algorithm>
#include <cstddef>

#include <Eigen/SVD>

#include "tensor.hpp"

namespace htnn {

struct TruncatedSvd {
    DenseTensor u;             // rows x r
    std::vector<double> s;     // r leading singular values
    DenseTensor vt;            // r x cols
    std::size_t rank = 1;
    double discarded = 0.0;    // sum of squared discarded singular values
};

/// Picks the smallest rank whose discarded energy stays within `budget`
/// (ignored when negative), capped at `cap`; never below 1.
inline std::size_t choose_rank(const Eigen::VectorXd& sv, std::size_t cap, double budget) {
    const auto n = static_cast<std::size_t>(sv.size());
    std::size_t r = std::min(cap, n);
    if (budget >= 0.0) {
        double tail = 0.0;
        std::size_t keep = n;
        while (keep > 1) {
            const double next = tail + sv(static_cast<Eigen::Index>(keep - 1)) * sv(static_cast<Eigen::Index>(keep - 1));
            if (next > budget) break;
            tail = next;
            --keep;
        }
        r = std::min(r, keep);
    }
    return std::max<std::size_t>(r, 1);
}

inline TruncatedSvd truncated_svd(const DenseTensor& a, std::size_t cap, double budget, bool want_v = true) {
    if (a.order() != 2) throw ShapeError("truncated_svd expects a matrix");
    const Eigen::MatrixXd m = a.matrix();
    const unsigned opts = want_v ? (Eigen::ComputeThinU | Eigen::ComputeThinV) : Eigen::ComputeThinU;
    Eigen::BDCSVD<Eigen::MatrixXd> svd(m, opts);
    const Eigen::VectorXd& sv = svd.singularValues();
    const std::size_t r = choose_rank(sv, cap, budget);
    const auto re = static_cast<Eigen::Index>(r);

    TruncatedSvd out;
    out.rank = r;
    out.u = DenseTensor::from_matrix(svd.matrixU().leftCols(re));
    out.s.assign(sv.data(), sv.data() + r);
    if (want_v) out.vt = DenseTensor::from_matrix(svd.matrixV().leftCols(re).transpose());
    for (Eigen::Index i = re; i < sv.size(); ++i) out.discarded += sv(i) * sv(i);
    return out;
}

struct TruncatedBasis {
    DenseTensor basis;
    std::size_t rank = 1;
};

inline TruncatedBasis leading_left_singular_vectors(const DenseTensor& a, std::size_t cap, double budget) {
    TruncatedSvd s = truncated_svd(a, cap, budget, false);
    return {std::move(s.u), s.rank};
}

}  // namespace htnn
