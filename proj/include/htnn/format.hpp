#pragma once

#include <cstddef>
#include <string>
#include <variant>

#include "ht.hpp"
#include "tt.hpp"

namespace htnn {

enum class FormatKind { HT, TT };

inline std::string to_string(FormatKind k) { return k == FormatKind::HT ? "ht" : "tt"; }

inline FormatKind format_kind_from_string(const std::string& s) {
    if (s == "ht" || s == "HT") return FormatKind::HT;
    if (s == "tt" || s == "TT") return FormatKind::TT;
    throw std::invalid_argument("unknown format '" + s + "' (expected ht|tt)");
}

using Format = std::variant<HTFormat, TTFormat>;

inline FormatKind kind_of(const Format& f) { return std::holds_alternative<HTFormat>(f) ? FormatKind::HT : FormatKind::TT; }

inline std::size_t param_count(const Format& f) {
    return std::visit([](const auto& x) { return x.param_count(); }, f);
}

inline Shape format_dims(const Format& f) {
    return std::visit([](const auto& x) -> Shape { return x.dims(); }, f);
}

inline std::size_t max_rank(const Format& f) {
    return std::visit([](const auto& x) { return x.max_rank(); }, f);
}

inline DenseTensor reconstruct(const Format& f, OpCounter* counter = nullptr) {
    if (const auto* h = std::get_if<HTFormat>(&f)) return ht_reconstruct(*h, counter);
    return tt_reconstruct(std::get<TTFormat>(f), counter);
}

/// Factor tensors in a fixed order (tree node order for HT, core order for TT).
inline std::vector<DenseTensor>& factors_of(Format& f) {
    if (auto* h = std::get_if<HTFormat>(&f)) return h->factors();
    return std::get<TTFormat>(f).cores();
}
inline const std::vector<DenseTensor>& factors_of(const Format& f) {
    if (const auto* h = std::get_if<HTFormat>(&f)) return h->factors();
    return std::get<TTFormat>(f).cores();
}

inline std::string factor_name(const Format& f, std::size_t i) {
    return std::visit([i](const auto& x) { return x.factor_name(i); }, f);
}

struct FormatStats {
    std::size_t param_count = 0;
    double compression_factor = 0.0;
};

/// Compression factor is the uncompressed element count over the stored
/// parameter count.
inline FormatStats format_stats(const Format& f, const Shape& original_dims) {
    const Shape dims = format_dims(f);
    if (shape_product(original_dims) != shape_product(dims)) {
        throw ShapeError("original dims " + shape_str(original_dims) + " hold " +
                         std::to_string(shape_product(original_dims)) + " elements, format represents " +
                         std::to_string(shape_product(dims)));
    }
    const std::size_t p = param_count(f);
    return {p, static_cast<double>(shape_product(original_dims)) / static_cast<double>(p)};
}

}  // namespace htnn
