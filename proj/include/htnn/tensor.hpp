#pragma once

// Dense row-major tensors and the reshaping / contraction primitives the
// factored formats are built from.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace htnn {

using Shape = std::vector<std::size_t>;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline std::string shape_str(std::span<const std::size_t> shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t k = 0; k < shape.size(); ++k) {
        if (k) os << ',';
        os << shape[k];
    }
    os << ')';
    return os.str();
}

inline std::size_t shape_product(std::span<const std::size_t> shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

/// Counts scalar multiplications performed by contractions. Passed
/// explicitly; there is no global counter.
struct OpCounter {
    std::uint64_t multiplies = 0;
};

class DenseTensor {
public:
    DenseTensor() : shape_{1}, data_(1, 0.0) {}

    explicit DenseTensor(Shape shape) : shape_(std::move(shape)) {
        validate_shape(shape_);
        data_.assign(shape_product(shape_), 0.0);
    }

    DenseTensor(Shape shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        validate_shape(shape_);
        if (data_.size() != shape_product(shape_)) {
            throw ShapeError("data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
        }
    }

    static DenseTensor filled(Shape shape, double value) {
        DenseTensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), value);
        return t;
    }

    static DenseTensor identity(std::size_t n) {
        DenseTensor t({n, n});
        for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = 1.0;
        return t;
    }

    static DenseTensor from_matrix(const RowMatrix& m) {
        DenseTensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
        std::copy(m.data(), m.data() + m.size(), t.data_.begin());
        return t;
    }

    const Shape& shape() const { return shape_; }
    std::size_t order() const { return shape_.size(); }
    std::size_t dim(std::size_t k) const { return shape_.at(k); }
    std::size_t size() const { return data_.size(); }

    std::span<const double> data() const { return data_; }
    std::span<double> data() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }

    std::size_t offset(std::span<const std::size_t> index) const {
        if (index.size() != shape_.size()) throw ShapeError("index order mismatch");
        std::size_t off = 0;
        for (std::size_t k = 0; k < index.size(); ++k) {
            if (index[k] >= shape_[k]) throw ShapeError("index out of range");
            off = off * shape_[k] + index[k];
        }
        return off;
    }
    double at(std::initializer_list<std::size_t> index) const {
        return data_[offset(std::span(index.begin(), index.size()))];
    }
    double& at(std::initializer_list<std::size_t> index) {
        return data_[offset(std::span(index.begin(), index.size()))];
    }
    double at(std::span<const std::size_t> index) const { return data_[offset(index)]; }
    double& at(std::span<const std::size_t> index) { return data_[offset(index)]; }

    /// Matrix view; only valid for order-2 tensors.
    ConstMatrixMap matrix() const {
        require_matrix();
        return ConstMatrixMap(data_.data(), static_cast<Eigen::Index>(shape_[0]),
                              static_cast<Eigen::Index>(shape_[1]));
    }
    MatrixMap matrix() {
        require_matrix();
        return MatrixMap(data_.data(), static_cast<Eigen::Index>(shape_[0]),
                         static_cast<Eigen::Index>(shape_[1]));
    }
    /// Reinterprets the row-major buffer as rows x cols without copying.
    ConstMatrixMap as_matrix(std::size_t rows, std::size_t cols) const {
        if (rows * cols != data_.size()) throw ShapeError("as_matrix size mismatch");
        return ConstMatrixMap(data_.data(), static_cast<Eigen::Index>(rows),
                              static_cast<Eigen::Index>(cols));
    }

    double frobenius_norm() const {
        double s = 0.0;
        for (double v : data_) s += v * v;
        return std::sqrt(s);
    }

    DenseTensor& operator+=(const DenseTensor& o) {
        if (o.shape_ != shape_) throw ShapeError("shape mismatch in +=: " + shape_str(shape_) + " vs " + shape_str(o.shape_));
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }
    DenseTensor& operator-=(const DenseTensor& o) {
        if (o.shape_ != shape_) throw ShapeError("shape mismatch in -=: " + shape_str(shape_) + " vs " + shape_str(o.shape_));
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
        return *this;
    }
    DenseTensor& operator*=(double s) {
        for (double& v : data_) v *= s;
        return *this;
    }
    friend DenseTensor operator-(DenseTensor a, const DenseTensor& b) { return a -= b; }
    friend DenseTensor operator+(DenseTensor a, const DenseTensor& b) { return a += b; }
    friend DenseTensor operator*(double s, DenseTensor a) { return a *= s; }

    friend bool operator==(const DenseTensor& a, const DenseTensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

    // Relinearization is free for row-major storage; the checked public
    // entry point is htnn::reshape.
    void reshape_inplace(Shape new_shape) {
        validate_shape(new_shape);
        if (shape_product(new_shape) != data_.size()) {
            throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(new_shape));
        }
        shape_ = std::move(new_shape);
    }

private:
    static void validate_shape(const Shape& shape) {
        if (shape.empty()) throw ShapeError("tensor order must be >= 1");
        for (std::size_t n : shape) {
            if (n == 0) throw ShapeError("zero-length mode in shape " + shape_str(shape));
        }
    }
    void require_matrix() const {
        if (shape_.size() != 2) throw ShapeError("expected a matrix, got shape " + shape_str(shape_));
    }

    Shape shape_;
    std::vector<double> data_;
};

inline DenseTensor reshape(const DenseTensor& t, Shape new_shape) {
    DenseTensor out = t;
    out.reshape_inplace(std::move(new_shape));
    return out;
}

inline DenseTensor reshape(DenseTensor&& t, Shape new_shape) {
    t.reshape_inplace(std::move(new_shape));
    return std::move(t);
}

inline bool is_permutation_of_modes(std::span<const std::size_t> order, std::size_t d) {
    if (order.size() != d) return false;
    std::vector<bool> seen(d, false);
    for (std::size_t p : order) {
        if (p >= d || seen[p]) return false;
        seen[p] = true;
    }
    return true;
}

/// out.shape[k] = t.shape[order[k]]; element t[i] lands at the index whose
/// k-th entry is i[order[k]]. Modes are 0-based.
inline DenseTensor permute(const DenseTensor& t, std::span<const std::size_t> order) {
    const std::size_t d = t.order();
    if (!is_permutation_of_modes(order, d)) {
        throw ShapeError("permute: order is not a permutation of " + std::to_string(d) + " modes");
    }
    bool identity = true;
    for (std::size_t k = 0; k < d; ++k) identity = identity && order[k] == k;
    if (identity) return t;

    Shape in_strides(d);
    {
        std::size_t s = 1;
        for (std::size_t k = d; k-- > 0;) {
            in_strides[k] = s;
            s *= t.dim(k);
        }
    }
    // Merge output modes that stay adjacent in the input.
    Shape dims, strides;
    for (std::size_t k = 0; k < d; ++k) {
        const std::size_t n = t.dim(order[k]);
        const std::size_t st = in_strides[order[k]];
        if (!dims.empty() && strides.back() == st * n) {
            dims.back() *= n;
            strides.back() = st;
        } else if (n == 1) {
            continue;
        } else {
            dims.push_back(n);
            strides.push_back(st);
        }
    }
    Shape out_shape(d);
    for (std::size_t k = 0; k < d; ++k) out_shape[k] = t.dim(order[k]);
    DenseTensor out(out_shape);
    if (dims.empty()) {
        out[0] = t[0];
        return out;
    }

    const std::size_t m = dims.size();
    const std::size_t inner = dims[m - 1];
    const std::size_t inner_stride = strides[m - 1];
    const double* src = t.data().data();
    double* dst = out.data().data();
    std::vector<std::size_t> idx(m, 0);
    std::size_t off = 0;
    const std::size_t total = t.size();
    for (std::size_t lin = 0; lin < total; lin += inner) {
        for (std::size_t i = 0; i < inner; ++i) dst[lin + i] = src[off + i * inner_stride];
        for (std::size_t k = m - 1; k-- > 0;) {
            ++idx[k];
            off += strides[k];
            if (idx[k] < dims[k]) break;
            off -= strides[k] * dims[k];
            idx[k] = 0;
        }
    }
    return out;
}

inline DenseTensor permute(const DenseTensor& t, std::initializer_list<std::size_t> order) {
    return permute(t, std::span(order.begin(), order.size()));
}

inline std::vector<std::size_t> inverse_permutation(std::span<const std::size_t> order) {
    std::vector<std::size_t> inv(order.size());
    for (std::size_t k = 0; k < order.size(); ++k) inv[order[k]] = k;
    return inv;
}

/// Row modes t and column modes s of a matricization A^(t).
struct ModeSplit {
    std::vector<std::size_t> row_modes;
    std::vector<std::size_t> col_modes;

    /// Rows are the given modes in order; columns are the remaining modes
    /// in increasing order.
    static ModeSplit rows(std::vector<std::size_t> row_modes, std::size_t d) {
        ModeSplit s;
        s.row_modes = std::move(row_modes);
        for (std::size_t k = 0; k < d; ++k) {
            if (std::find(s.row_modes.begin(), s.row_modes.end(), k) == s.row_modes.end()) {
                s.col_modes.push_back(k);
            }
        }
        return s;
    }

    void validate(std::size_t d) const {
        std::vector<std::size_t> all = row_modes;
        all.insert(all.end(), col_modes.begin(), col_modes.end());
        if (!is_permutation_of_modes(all, d)) {
            throw ShapeError("mode split does not cover modes 0.." + std::to_string(d - 1) + " exactly once");
        }
        if (d > 1 && (row_modes.empty() || col_modes.empty())) {
            throw ShapeError("mode split must have nonempty row and column sets");
        }
    }
};

inline DenseTensor matricize(const DenseTensor& t, const ModeSplit& split) {
    split.validate(t.order());
    std::vector<std::size_t> order = split.row_modes;
    order.insert(order.end(), split.col_modes.begin(), split.col_modes.end());
    std::size_t rows = 1;
    for (std::size_t k : split.row_modes) rows *= t.dim(k);
    return reshape(permute(t, order), {rows, t.size() / rows});
}

/// Inverse of matricize; `shape` is the original tensor shape.
inline DenseTensor dematricize(const DenseTensor& m, const ModeSplit& split, const Shape& shape) {
    split.validate(shape.size());
    if (m.order() != 2 || m.size() != shape_product(shape)) {
        throw ShapeError("dematricize: matrix " + shape_str(m.shape()) + " incompatible with " + shape_str(shape));
    }
    std::vector<std::size_t> order = split.row_modes;
    order.insert(order.end(), split.col_modes.begin(), split.col_modes.end());
    Shape permuted(order.size());
    for (std::size_t k = 0; k < order.size(); ++k) permuted[k] = shape[order[k]];
    const auto inv = inverse_permutation(order);
    return permute(reshape(m, permuted), inv);
}

inline DenseTensor matmul(const DenseTensor& a, const DenseTensor& b, OpCounter* counter = nullptr) {
    if (a.order() != 2 || b.order() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    DenseTensor out({a.dim(0), b.dim(1)});
    out.matrix().noalias() = a.matrix() * b.matrix();
    if (counter) counter->multiplies += a.dim(0) * a.dim(1) * b.dim(1);
    return out;
}

inline DenseTensor transpose(const DenseTensor& a) {
    if (a.order() != 2) throw ShapeError("transpose expects a matrix");
    return permute(a, {1, 0});
}

/// Kronecker product: block (i,j) of the result is a[i,j] * b.
inline DenseTensor kron(const DenseTensor& a, const DenseTensor& b) {
    if (a.order() != 2 || b.order() != 2) {
        throw ShapeError("kron expects matrices, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
    const std::size_t ma = a.dim(0), na = a.dim(1), mb = b.dim(0), nb = b.dim(1);
    DenseTensor out({ma * mb, na * nb});
    const std::size_t cols = na * nb;
    for (std::size_t i = 0; i < ma; ++i)
        for (std::size_t j = 0; j < na; ++j) {
            const double s = a[i * na + j];
            for (std::size_t p = 0; p < mb; ++p)
                for (std::size_t q = 0; q < nb; ++q)
                    out[(i * mb + p) * cols + j * nb + q] = s * b[p * nb + q];
        }
    return out;
}

/// Sums over paired modes. Result modes: a's free modes in order, then b's.
inline DenseTensor tensordot(const DenseTensor& a, std::span<const std::size_t> a_modes,
                             const DenseTensor& b, std::span<const std::size_t> b_modes,
                             OpCounter* counter = nullptr) {
    if (a_modes.size() != b_modes.size()) throw ShapeError("tensordot: mode lists differ in length");
    std::vector<bool> a_used(a.order(), false), b_used(b.order(), false);
    std::size_t k = 1;
    for (std::size_t i = 0; i < a_modes.size(); ++i) {
        const std::size_t am = a_modes[i], bm = b_modes[i];
        if (am >= a.order() || bm >= b.order() || a_used[am] || b_used[bm]) {
            throw ShapeError("tensordot: invalid contraction modes");
        }
        if (a.dim(am) != b.dim(bm)) {
            throw ShapeError("contraction mode length mismatch: " + shape_str(a.shape()) + " mode " +
                             std::to_string(am) + " vs " + shape_str(b.shape()) + " mode " + std::to_string(bm));
        }
        a_used[am] = b_used[bm] = true;
        k *= a.dim(am);
    }
    std::vector<std::size_t> a_order, b_order;
    Shape out_shape;
    for (std::size_t m = 0; m < a.order(); ++m)
        if (!a_used[m]) {
            a_order.push_back(m);
            out_shape.push_back(a.dim(m));
        }
    a_order.insert(a_order.end(), a_modes.begin(), a_modes.end());
    b_order.assign(b_modes.begin(), b_modes.end());
    for (std::size_t m = 0; m < b.order(); ++m)
        if (!b_used[m]) {
            b_order.push_back(m);
            out_shape.push_back(b.dim(m));
        }
    if (out_shape.empty()) out_shape.push_back(1);

    const DenseTensor ap = permute(a, a_order);
    const DenseTensor bp = permute(b, b_order);
    const std::size_t rows = a.size() / k;
    const std::size_t cols = b.size() / k;
    DenseTensor out(out_shape);
    MatrixMap(out.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)).noalias() =
        ap.as_matrix(rows, k) * bp.as_matrix(k, cols);
    if (counter) counter->multiplies += rows * cols * k;
    return out;
}

/// Pairwise contraction of a single mode of `a` with a single mode of `b`.
/// The mode-1 contracted product of a chain is contract(A, last, B, first).
inline DenseTensor contract(const DenseTensor& a, std::size_t a_mode, const DenseTensor& b,
                            std::size_t b_mode, OpCounter* counter = nullptr) {
    if (a_mode >= a.order() || b_mode >= b.order()) throw ShapeError("contract: mode out of range");
    if (a.dim(a_mode) != b.dim(b_mode)) {
        throw ShapeError("contract: mode length mismatch between " + shape_str(a.shape()) + "[" +
                         std::to_string(a_mode) + "] and " + shape_str(b.shape()) + "[" +
                         std::to_string(b_mode) + "]");
    }
    const std::size_t am[1] = {a_mode};
    const std::size_t bm[1] = {b_mode};
    return tensordot(a, am, b, bm, counter);
}

inline double max_abs_diff(const DenseTensor& a, const DenseTensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

/// ||a - b||_F / ||b||_F, or the absolute error when b is zero.
inline double relative_error(const DenseTensor& a, const DenseTensor& b) {
    if (a.size() != b.size()) {
        throw ShapeError("relative_error: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        num += d * d;
        den += b[i] * b[i];
    }
    return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

}  // namespace htnn
