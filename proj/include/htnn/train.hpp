#pragma once

// Mini-batch SGD with momentum over a Sequential model.
// Batch gradients may be sharded over threads; shard results are reduced in
// shard order, so a fixed thread count gives bit-identical runs.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "data.hpp"
#include "model.hpp"
#include "optim.hpp"

namespace htnn {

class NumericalError : public std::runtime_error {
public:
    NumericalError(const std::string& what, json dump) : std::runtime_error(what), dump_(std::move(dump)) {}
    const json& dump() const { return dump_; }

private:
    json dump_;
};

struct EpochMetrics {
    std::size_t epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_acc = 0.0;
    double wall_seconds = -1.0;  // negative when timing is off
};

struct TrainOptions {
    TrainSchedule schedule;
    std::size_t threads = 1;
    bool timing = false;  // wall_seconds is written as NA otherwise, keeping metrics byte-stable
    std::function<void(const EpochMetrics&)> on_epoch;
};

inline std::string metrics_csv_header() { return "epoch,lr,train_loss,train_acc,val_acc,wall_seconds\n"; }

inline std::string metrics_csv_row(const EpochMetrics& m) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%zu,%.10g,%.10g,%.6f,%.6f,", m.epoch, m.lr, m.train_loss, m.train_acc, m.val_acc);
    std::string row = buf;
    if (m.wall_seconds < 0) {
        row += "NA";
    } else {
        std::snprintf(buf, sizeof buf, "%.3f", m.wall_seconds);
        row += buf;
    }
    return row + "\n";
}

inline std::string metrics_csv(const std::vector<EpochMetrics>& rows) {
    std::string out = metrics_csv_header();
    for (const auto& r : rows) out += metrics_csv_row(r);
    return out;
}

/// Summed loss, correct count and gradients over a batch, split into
/// contiguous shards evaluated concurrently.
inline LossResult batch_loss_and_grad(const Sequential& model, const Dataset& batch, std::size_t threads) {
    const std::size_t B = batch.size();
    const std::size_t shards = std::max<std::size_t>(1, std::min(threads, B));
    if (shards == 1) return model.loss_and_grad(batch.x, batch.labels);
    std::vector<LossResult> parts(shards);
    std::vector<std::exception_ptr> errors(shards);
    std::vector<std::thread> pool;
    for (std::size_t s = 0; s < shards; ++s) {
        pool.emplace_back([&, s] {
            try {
                const std::size_t lo = B * s / shards, hi = B * (s + 1) / shards;
                std::vector<std::size_t> rows;
                for (std::size_t i = lo; i < hi; ++i) rows.push_back(i);
                const Dataset part = batch.subset(rows);
                parts[s] = model.loss_and_grad(part.x, part.labels);
            } catch (...) {
                errors[s] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    LossResult total = std::move(parts[0]);
    for (std::size_t s = 1; s < shards; ++s) {
        total.loss_sum += parts[s].loss_sum;
        total.correct += parts[s].correct;
        for (std::size_t i = 0; i < total.grads.size(); ++i) total.grads[i] += parts[s].grads[i];
    }
    return total;
}

inline std::vector<int> predict(const Sequential& model, const DenseTensor& x, std::size_t chunk = 256) {
    std::vector<int> out;
    const std::size_t n = x.dim(0), per = x.size() / std::max<std::size_t>(n, 1);
    for (std::size_t lo = 0; lo < n; lo += chunk) {
        const std::size_t hi = std::min(n, lo + chunk);
        Shape s = x.shape();
        s[0] = hi - lo;
        DenseTensor part(s, std::vector<double>(x.data().begin() + static_cast<long>(lo * per), x.data().begin() + static_cast<long>(hi * per)));
        const DenseTensor logits = model.forward(part);
        const std::size_t K = logits.size() / (hi - lo);
        for (std::size_t i = 0; i < hi - lo; ++i) {
            std::size_t best = 0;
            for (std::size_t k = 1; k < K; ++k)
                if (logits[i * K + k] > logits[i * K + best]) best = k;
            out.push_back(static_cast<int>(best));
        }
    }
    return out;
}

inline double accuracy(const Sequential& model, const Dataset& d) {
    if (d.size() == 0) return 0.0;
    const auto pred = predict(model, d.x);
    std::size_t ok = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == d.labels[i];
    return static_cast<double>(ok) / static_cast<double>(d.size());
}

namespace detail {
inline json numerical_dump(const Sequential& model, std::size_t epoch, std::size_t batch, double loss) {
    json params = json::array();
    auto names = model.parameter_names();
    auto ps = const_cast<Sequential&>(model).parameters();
    for (std::size_t i = 0; i < ps.size(); ++i) {
        double sq = 0.0;
        std::size_t bad = 0;
        for (double v : ps[i]->data()) {
            if (!std::isfinite(v)) ++bad;
            else sq += v * v;
        }
        params.push_back({{"name", names[i]}, {"shape", ps[i]->shape()}, {"finite_norm", std::sqrt(sq)}, {"non_finite", bad}});
    }
    return {{"epoch", epoch}, {"batch", batch}, {"loss", std::isfinite(loss) ? json(loss) : json(std::to_string(loss))}, {"parameters", params}};
}
}  // namespace detail

/// Trains in place. Throws NumericalError (with a state dump) on a non-finite loss.
inline std::vector<EpochMetrics> train(Sequential& model, const Dataset& train_set, const Dataset& val_set,
                                       const TrainOptions& opt) {
    opt.schedule.validate();
    train_set.validate();
    // every layer checks the dataset's own sample shape, so errors name the layer
    const Shape want = train_set.sample_shape();
    {
        Shape s = want;
        for (const auto& l : model.layers()) s = l->output_shape(s);
        if (s != Shape{model.classes()}) throw ShapeError("model output " + shape_str(s) + " does not match " + std::to_string(model.classes()) + " classes");
    }
    if (val_set.size() > 0 && val_set.sample_shape() != want) {
        throw ShapeError("validation samples are " + shape_str(val_set.sample_shape()) + ", training samples " + shape_str(want));
    }
    if (train_set.classes > model.classes()) {
        throw ShapeError("dataset has " + std::to_string(train_set.classes) + " classes, model outputs " + std::to_string(model.classes()));
    }

    std::mt19937_64 rng(opt.schedule.seed);
    std::vector<DenseTensor> velocity;
    std::vector<EpochMetrics> out;
    const auto params = model.parameters();
    for (std::size_t epoch = 0; epoch < opt.schedule.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr = opt.schedule.lr_at(epoch);
        const auto order = shuffled_indices(train_set.size(), rng);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t lo = 0, b = 0; lo < order.size(); lo += opt.schedule.batch_size, ++b) {
            const std::size_t hi = std::min(order.size(), lo + opt.schedule.batch_size);
            const Dataset batch = train_set.subset(std::span(order).subspan(lo, hi - lo));
            LossResult r = batch_loss_and_grad(model, batch, opt.threads);
            if (!std::isfinite(r.loss_sum)) {
                throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b),
                                     detail::numerical_dump(model, epoch, b, r.loss_sum));
            }
            loss_sum += r.loss_sum;
            correct += r.correct;
            const double scale = 1.0 / static_cast<double>(hi - lo);
            for (auto& g : r.grads) g *= scale;
            sgd_momentum_step(params, r.grads, velocity, lr, opt.schedule.momentum, opt.schedule.weight_decay);
        }
        EpochMetrics m;
        m.epoch = epoch + 1;
        m.lr = lr;
        m.train_loss = loss_sum / static_cast<double>(train_set.size());
        m.train_acc = static_cast<double>(correct) / static_cast<double>(train_set.size());
        if (val_set.size() > 0) m.val_acc = accuracy(model, val_set);
        if (opt.timing) m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        out.push_back(m);
        if (opt.on_epoch) opt.on_epoch(m);
    }
    return out;
}

inline json schedule_json(const TrainSchedule& s) {
    return {{"learning_rate", s.learning_rate}, {"momentum", s.momentum}, {"decay_factor", s.decay_factor},
            {"decay_every", s.decay_every},     {"epochs", s.epochs},     {"batch_size", s.batch_size},
            {"seed", s.seed},                   {"weight_decay", s.weight_decay}};
}

inline TrainSchedule schedule_from_json(const json& j) {
    TrainSchedule s;
    s.learning_rate = j.value("learning_rate", s.learning_rate);
    s.momentum = j.value("momentum", s.momentum);
    s.decay_factor = j.value("decay_factor", s.decay_factor);
    s.decay_every = j.value("decay_every", s.decay_every);
    s.epochs = j.value("epochs", s.epochs);
    s.batch_size = j.value("batch_size", s.batch_size);
    s.seed = j.value("seed", s.seed);
    s.weight_decay = j.value("weight_decay", s.weight_decay);
    s.validate();
    return s;
}

}  // namespace htnn
