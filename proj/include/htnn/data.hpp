#pragma once

// Classification datasets: IDX and CSV loaders, centered zero-padding, and
// the bundled synthetic sets (stroke digits, toy images, separable points).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "htk1.hpp"

namespace htnn {

struct Dataset {
    DenseTensor x;            // (count, sample dims...)
    std::vector<int> labels;
    std::size_t classes = 0;

    std::size_t size() const { return labels.size(); }
    Shape sample_shape() const { return Shape(x.shape().begin() + 1, x.shape().end()); }
    std::size_t sample_size() const { return size() == 0 ? 0 : x.size() / size(); }

    void validate() const {
        if (x.order() == 0 || x.dim(0) != labels.size()) throw ShapeError("dataset has " + shape_str(x.shape()) + " samples but " + std::to_string(labels.size()) + " labels");
        for (int y : labels)
            if (y < 0 || static_cast<std::size_t>(y) >= classes) {
                throw std::out_of_range("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
            }
    }

    /// Gathers the given rows into a batch.
    Dataset subset(std::span<const std::size_t> rows) const {
        Shape s = x.shape();
        s[0] = rows.size();
        Dataset d{DenseTensor(s), {}, classes};
        const std::size_t n = sample_size();
        for (std::size_t i = 0; i < rows.size(); ++i) {
            std::copy_n(x.data().begin() + static_cast<long>(rows[i] * n), n, d.x.data().begin() + static_cast<long>(i * n));
            d.labels.push_back(labels[rows[i]]);
        }
        return d;
    }
};

namespace detail {
inline std::uint32_t read_be32(const std::string& b, std::size_t pos, const std::string& path) {
    if (pos + 4 > b.size()) throw FormatError(path + ": truncated IDX header");
    return (std::uint32_t(std::uint8_t(b[pos])) << 24) | (std::uint32_t(std::uint8_t(b[pos + 1])) << 16) |
           (std::uint32_t(std::uint8_t(b[pos + 2])) << 8) | std::uint32_t(std::uint8_t(b[pos + 3]));
}
}  // namespace detail

/// IDX u8 tensor (magic 0x0000080N, big-endian dims). Values scaled by 1/255
/// unless `raw` is set.
inline DenseTensor load_idx(const std::string& path, bool raw = false) {
    const std::string b = read_file(path);
    const std::uint32_t magic = detail::read_be32(b, 0, path);
    if ((magic >> 8) != 0x08) throw FormatError(path + ": not an unsigned-byte IDX file");
    const std::size_t nd = magic & 0xff;
    if (nd == 0) throw FormatError(path + ": IDX file has no dimensions");
    Shape s;
    for (std::size_t i = 0; i < nd; ++i) s.push_back(detail::read_be32(b, 4 + 4 * i, path));
    const std::size_t off = 4 + 4 * nd;
    const std::size_t n = shape_product(s);
    if (b.size() != off + n) throw FormatError(path + ": IDX payload is " + std::to_string(b.size() - off) + " bytes, header says " + std::to_string(n));
    DenseTensor t(s);
    for (std::size_t i = 0; i < n; ++i) t[i] = static_cast<double>(std::uint8_t(b[off + i])) / (raw ? 1.0 : 255.0);
    return t;
}

inline std::string encode_idx(const Shape& s, const std::vector<std::uint8_t>& values) {
    std::string b;
    auto put = [&](std::uint32_t v) {
        for (int sh = 24; sh >= 0; sh -= 8) b.push_back(static_cast<char>((v >> sh) & 0xff));
    };
    put(0x0800u | static_cast<std::uint32_t>(s.size()));
    for (std::size_t d : s) put(static_cast<std::uint32_t>(d));
    b.append(values.begin(), values.end());
    return b;
}

/// Images (count, rows, cols[, channels]) plus labels; images gain a trailing
/// channel mode when they have none.
inline Dataset load_idx_dataset(const std::string& images, const std::string& labels, std::size_t classes = 10) {
    DenseTensor x = load_idx(images);
    const DenseTensor y = load_idx(labels, true);
    if (y.order() != 1 || y.size() != x.dim(0)) {
        throw FormatError(labels + ": " + std::to_string(y.size()) + " labels for " + std::to_string(x.dim(0)) + " images");
    }
    if (x.order() == 3) x = reshape(std::move(x), {x.dim(0), x.dim(1), x.dim(2), 1});
    Dataset d{std::move(x), {}, classes};
    for (double v : y.data()) d.labels.push_back(static_cast<int>(v));
    d.validate();
    return d;
}

/// Rows of "label,f1,f2,...". Blank lines and lines starting with '#' are skipped.
inline Dataset load_csv_dataset(const std::string& path, std::size_t classes = 0) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path);
    std::vector<double> values;
    std::vector<int> labels;
    std::size_t width = 0, line_no = 0;
    std::string line;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> row;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t used = 0;
                row.push_back(std::stod(cell, &used));
            } catch (const std::exception&) {
                throw FormatError(path + ":" + std::to_string(line_no) + ": bad number '" + cell + "'");
            }
        }
        if (row.size() < 2) throw FormatError(path + ":" + std::to_string(line_no) + ": need a label and features");
        if (width == 0) width = row.size() - 1;
        if (row.size() - 1 != width) throw FormatError(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(width) + " features");
        labels.push_back(static_cast<int>(row[0]));
        values.insert(values.end(), row.begin() + 1, row.end());
    }
    if (labels.empty()) throw FormatError(path + ": no rows");
    Dataset d{DenseTensor({labels.size(), width}, std::move(values)), std::move(labels), classes};
    if (d.classes == 0) d.classes = static_cast<std::size_t>(*std::max_element(d.labels.begin(), d.labels.end())) + 1;
    d.validate();
    return d;
}

/// Centered zero padding of (count, H, W, C) images to (count, size, size, C).
inline Dataset pad_images(const Dataset& d, std::size_t size) {
    if (d.x.order() != 4) throw ShapeError("padding needs (count,H,W,C) images, got " + shape_str(d.x.shape()));
    const std::size_t B = d.x.dim(0), H = d.x.dim(1), W = d.x.dim(2), C = d.x.dim(3);
    if (size < H || size < W) throw ShapeError("cannot pad " + std::to_string(H) + "x" + std::to_string(W) + " images to " + std::to_string(size));
    const std::size_t top = (size - H) / 2, left = (size - W) / 2;
    Dataset out{DenseTensor({B, size, size, C}), d.labels, d.classes};
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < H; ++i)
            for (std::size_t j = 0; j < W; ++j)
                for (std::size_t c = 0; c < C; ++c)
                    out.x[((b * size + i + top) * size + j + left) * C + c] = d.x[((b * H + i) * W + j) * C + c];
    return out;
}

/// Seeded Fisher-Yates permutation of 0..n-1 (portable across standard libraries).
inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::mt19937_64& rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

/// Shuffled split; the validation part holds round(fraction * n) samples.
inline std::pair<Dataset, Dataset> train_val_split(const Dataset& d, double fraction, std::uint64_t seed) {
    if (fraction < 0.0 || fraction >= 1.0) throw std::invalid_argument("validation fraction must be in [0, 1)");
    std::mt19937_64 rng(seed);
    const auto idx = shuffled_indices(d.size(), rng);
    const auto nval = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(d.size())));
    std::vector<std::size_t> val(idx.begin(), idx.begin() + static_cast<long>(nval));
    std::vector<std::size_t> train(idx.begin() + static_cast<long>(nval), idx.end());
    if (train.empty()) throw std::invalid_argument("validation split leaves no training samples");
    Dataset v = val.empty() ? Dataset{DenseTensor(), {}, d.classes} : d.subset(val);
    return {d.subset(train), std::move(v)};
}

// ---- synthetic sets ----

namespace detail {
struct Stroke {
    double x0, y0, x1, y1;
};

// Glyph strokes on a unit box, y pointing down.
inline const std::vector<Stroke>& digit_strokes(int digit) {
    static const std::array<std::vector<Stroke>, 10> glyphs = {{
        {{0.2, 0.1, 0.8, 0.1}, {0.8, 0.1, 0.8, 0.9}, {0.8, 0.9, 0.2, 0.9}, {0.2, 0.9, 0.2, 0.1}},
        {{0.35, 0.25, 0.55, 0.1}, {0.55, 0.1, 0.55, 0.9}, {0.35, 0.9, 0.75, 0.9}},
        {{0.2, 0.2, 0.5, 0.1}, {0.5, 0.1, 0.8, 0.25}, {0.8, 0.25, 0.2, 0.9}, {0.2, 0.9, 0.8, 0.9}},
        {{0.2, 0.1, 0.8, 0.1}, {0.8, 0.1, 0.45, 0.5}, {0.45, 0.5, 0.8, 0.7}, {0.8, 0.7, 0.5, 0.9}, {0.5, 0.9, 0.2, 0.8}},
        {{0.65, 0.9, 0.65, 0.1}, {0.65, 0.1, 0.15, 0.65}, {0.15, 0.65, 0.85, 0.65}},
        {{0.8, 0.1, 0.25, 0.1}, {0.25, 0.1, 0.2, 0.45}, {0.2, 0.45, 0.75, 0.5}, {0.75, 0.5, 0.75, 0.85}, {0.75, 0.85, 0.2, 0.9}},
        {{0.7, 0.1, 0.25, 0.5}, {0.25, 0.5, 0.25, 0.9}, {0.25, 0.9, 0.8, 0.9}, {0.8, 0.9, 0.8, 0.55}, {0.8, 0.55, 0.25, 0.55}},
        {{0.2, 0.1, 0.8, 0.1}, {0.8, 0.1, 0.4, 0.9}},
        {{0.25, 0.1, 0.75, 0.1}, {0.75, 0.1, 0.25, 0.9}, {0.25, 0.9, 0.75, 0.9}, {0.75, 0.9, 0.25, 0.1}, {0.25, 0.5, 0.75, 0.5}},
        {{0.8, 0.45, 0.2, 0.45}, {0.2, 0.45, 0.2, 0.1}, {0.2, 0.1, 0.8, 0.1}, {0.8, 0.1, 0.8, 0.9}, {0.8, 0.9, 0.3, 0.9}},
    }};
    return glyphs[static_cast<std::size_t>(digit)];
}

inline double segment_distance(double px, double py, const Stroke& s) {
    const double dx = s.x1 - s.x0, dy = s.y1 - s.y0;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0 ? ((px - s.x0) * dx + (py - s.y0) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double ex = s.x0 + t * dx - px, ey = s.y0 + t * dy - py;
    return std::sqrt(ex * ex + ey * ey);
}
}  // namespace detail

/// Handwriting-like digits: stroke glyphs under a random affine jitter
/// (rotation, scale, shear, shift), random pen width and pixel noise.
/// Images are (count, side, side, 1) in [0,1]; classes cycle 0..9.
inline Dataset synthetic_digits(std::size_t count, std::uint64_t seed, std::size_t side = 28) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::normal_distribution<double> noise(0.0, 0.15);
    Dataset d{DenseTensor({count, side, side, 1}), {}, 10};
    const double S = static_cast<double>(side);
    for (std::size_t n = 0; n < count; ++n) {
        const int digit = static_cast<int>(n % 10);
        d.labels.push_back(digit);
        const double angle = 0.25 * u(rng), scale = 1.0 + 0.15 * u(rng), shear = 0.25 * u(rng);
        const double sx = 0.12 * u(rng), sy = 0.12 * u(rng), pen = 0.07 + 0.03 * u(rng);
        const double ca = std::cos(angle), sa = std::sin(angle);
        // glyph box spans the central ~70% of the image
        for (std::size_t i = 0; i < side; ++i)
            for (std::size_t j = 0; j < side; ++j) {
                const double px = (static_cast<double>(j) + 0.5) / S - 0.5 - sx;
                const double py = (static_cast<double>(i) + 0.5) / S - 0.5 - sy;
                // inverse map image point to glyph coordinates
                const double rx = (ca * px + sa * py) / (0.7 * scale);
                const double ry = (-sa * px + ca * py) / (0.7 * scale);
                const double gx = rx - shear * ry + 0.5, gy = ry + 0.5;
                double dist = 1e9;
                for (const auto& s : detail::digit_strokes(digit)) dist = std::min(dist, detail::segment_distance(gx, gy, s));
                double v = std::clamp(1.5 - dist / pen, 0.0, 1.0) + noise(rng);
                d.x[(n * side + i) * side + j] = std::clamp(v, 0.0, 1.0);
            }
    }
    return d;
}

/// Ten classes of (side, side, channels) images: a smooth random template per
/// class, randomly shifted by up to one pixel, plus Gaussian noise.
inline Dataset toy_images(std::size_t count, std::uint64_t seed, std::size_t side = 8, std::size_t channels = 4,
                          double noise_std = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    const std::size_t classes = 10, n = side * side * channels;
    std::vector<std::vector<double>> templates(classes, std::vector<double>(n));
    for (auto& t : templates) {
        std::vector<double> raw(n);
        for (double& v : raw) v = g(rng);
        for (std::size_t i = 0; i < side; ++i)
            for (std::size_t j = 0; j < side; ++j)
                for (std::size_t c = 0; c < channels; ++c) {
                    double s = 0.0;
                    for (int di = -1; di <= 1; ++di)
                        for (int dj = -1; dj <= 1; ++dj) {
                            const std::size_t ii = (i + side + static_cast<std::size_t>(di + 1) - 1) % side;
                            const std::size_t jj = (j + side + static_cast<std::size_t>(dj + 1) - 1) % side;
                            s += raw[(ii * side + jj) * channels + c];
                        }
                    t[(i * side + j) * channels + c] = s / 3.0;
                }
    }
    std::uniform_int_distribution<int> shift(-1, 1);
    Dataset d{DenseTensor({count, side, side, channels}), {}, classes};
    for (std::size_t s = 0; s < count; ++s) {
        const std::size_t k = s % classes;
        d.labels.push_back(static_cast<int>(k));
        const int di = shift(rng), dj = shift(rng);
        for (std::size_t i = 0; i < side; ++i)
            for (std::size_t j = 0; j < side; ++j)
                for (std::size_t c = 0; c < channels; ++c) {
                    const std::size_t ii = (i + side + static_cast<std::size_t>(di + 1) - 1) % side;
                    const std::size_t jj = (j + side + static_cast<std::size_t>(dj + 1) - 1) % side;
                    d.x[((s * side + i) * side + j) * channels + c] = templates[k][(ii * side + jj) * channels + c] + noise_std * g(rng);
                }
    }
    return d;
}

/// Two linearly separable classes: label = [w.x > 0] with every point pushed
/// at least `margin` away from the hyperplane.
inline Dataset separable_points(std::size_t count, std::size_t features, std::uint64_t seed, double margin = 0.5) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> w(features);
    double norm = 0.0;
    for (double& v : w) {
        v = g(rng);
        norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : w) v /= norm;
    Dataset d{DenseTensor({count, features}), {}, 2};
    for (std::size_t s = 0; s < count; ++s) {
        const int label = static_cast<int>(s % 2);
        std::vector<double> x(features);
        double proj = 0.0;
        for (std::size_t f = 0; f < features; ++f) {
            x[f] = g(rng);
            proj += x[f] * w[f];
        }
        const double target = (label == 1 ? 1.0 : -1.0) * (margin + std::abs(proj));
        for (std::size_t f = 0; f < features; ++f) d.x[s * features + f] = x[f] + (target - proj) * w[f];
        d.labels.push_back(label);
    }
    return d;
}

}  // namespace htnn
