#pragma once

// JSON-driven datasets and training runs shared by the CLI and tests.
//
// Dataset sources:
//   {"source": "synthetic-digits", "samples": 4000, "seed": 11}
//   {"source": "mnist", "dir": "data/mnist", "samples": 4000}   falls back to synthetic digits
//   {"source": "idx", "images": "...", "labels": "..."}
//   {"source": "csv", "path": "..."}
//   {"source": "toy-images", "samples": 1000, "side": 8, "channels": 4, "noise": 1.0}
//   {"source": "separable", "samples": 64, "features": 16}
// Shared keys: "pad_to" (centered zero padding of images), "val_fraction",
// "split_seed", "classes".

#include <filesystem>
#include <string>
#include <vector>

#include "hybrid.hpp"
#include "train.hpp"

namespace htnn {

struct LoadedData {
    Dataset train;
    Dataset val;
    std::string source;           // what was actually loaded
    std::vector<std::string> notes;
};

namespace detail {
inline std::string require_file(const json& j, const char* key) {
    if (!j.contains(key) || !j[key].is_string()) throw ConfigError(std::string("dataset needs a \"") + key + "\" path");
    const std::string p = j[key];
    if (!std::filesystem::exists(p)) throw FormatError("cannot open " + p + ": no such file");
    return p;
}

inline Dataset take_first(const Dataset& d, std::size_t n) {
    if (n == 0 || n >= d.size()) return d;
    std::vector<std::size_t> rows(n);
    for (std::size_t i = 0; i < n; ++i) rows[i] = i;
    return d.subset(rows);
}
}  // namespace detail

inline LoadedData load_dataset(const json& j) {
    if (!j.is_object() || !j.contains("source")) throw ConfigError("dataset config needs a \"source\"");
    const std::string src = j["source"];
    const std::uint64_t seed = j.value("seed", std::uint64_t{11});
    const std::size_t samples = j.value("samples", std::size_t{0});
    LoadedData out;
    Dataset all;
    if (src == "synthetic-digits") {
        all = synthetic_digits(samples ? samples : 4000, seed);
        out.source = "synthetic-digits";
    } else if (src == "mnist") {
        const std::filesystem::path dir = j.value("dir", std::string("data/mnist"));
        const auto images = dir / "train-images-idx3-ubyte", labels = dir / "train-labels-idx1-ubyte";
        if (std::filesystem::exists(images) && std::filesystem::exists(labels)) {
            all = detail::take_first(load_idx_dataset(images.string(), labels.string()), samples);
            out.source = "mnist";
        } else {
            all = synthetic_digits(samples ? samples : 4000, seed);
            out.source = "synthetic-digits";
            out.notes.push_back("MNIST not found under " + dir.string() + "; using the bundled synthetic digits");
        }
    } else if (src == "idx") {
        all = detail::take_first(load_idx_dataset(detail::require_file(j, "images"), detail::require_file(j, "labels"),
                                                  j.value("classes", std::size_t{10})),
                                 samples);
        out.source = "idx";
    } else if (src == "csv") {
        all = detail::take_first(load_csv_dataset(detail::require_file(j, "path"), j.value("classes", std::size_t{0})), samples);
        out.source = "csv";
    } else if (src == "toy-images") {
        all = toy_images(samples ? samples : 1000, seed, j.value("side", std::size_t{8}), j.value("channels", std::size_t{4}),
                         j.value("noise", 1.0));
        out.source = "toy-images";
    } else if (src == "separable") {
        all = separable_points(samples ? samples : 64, j.value("features", std::size_t{16}), seed, j.value("margin", 0.5));
        out.source = "separable";
    } else {
        throw ConfigError("unknown dataset source '" + src + "'");
    }
    if (j.contains("pad_to")) {
        const std::size_t to = j["pad_to"];
        out.notes.push_back("images zero-padded (centered) from " + std::to_string(all.x.dim(1)) + "x" +
                            std::to_string(all.x.dim(2)) + " to " + std::to_string(to) + "x" + std::to_string(to));
        all = pad_images(all, to);
    }
    const double vf = j.value("val_fraction", 0.0);
    if (vf > 0.0) {
        auto [tr, va] = train_val_split(all, vf, j.value("split_seed", std::uint64_t{1}));
        out.train = std::move(tr);
        out.val = std::move(va);
    } else {
        out.train = std::move(all);
        out.val = Dataset{DenseTensor(), {}, out.train.classes};
    }
    return out;
}

struct RunResult {
    std::vector<EpochMetrics> metrics;
    json summary;
    std::vector<BundleEntry> checkpoint;
    std::vector<std::string> notes;
};

/// Config: {"model": {...}, "dataset": {...}, "schedule": {...}, "seed": s}.
/// The seed drives model initialization and the schedule's shuffling unless
/// the schedule sets its own.
inline RunResult run_training(const json& cfg, std::size_t threads = 1, bool timing = false,
                              const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
    if (!cfg.is_object()) throw ConfigError("experiment config must be an object");
    for (const char* key : {"model", "dataset"})
        if (!cfg.contains(key)) throw ConfigError(std::string("experiment config needs \"") + key + "\"");
    const std::uint64_t seed = cfg.value("seed", std::uint64_t{0});
    LoadedData data = load_dataset(cfg["dataset"]);
    std::mt19937_64 rng(seed);
    Sequential model = build_model(cfg["model"], rng);
    TrainOptions opt;
    json sched = cfg.value("schedule", json::object());
    if (!sched.contains("seed")) sched["seed"] = seed;
    opt.schedule = schedule_from_json(sched);
    opt.threads = threads;
    opt.timing = timing;
    opt.on_epoch = on_epoch;
    RunResult r;
    r.notes = data.notes;
    r.metrics = train(model, data.train, data.val, opt);
    r.summary = summary_json(model);
    r.summary["dataset"] = data.source;
    r.summary["train_samples"] = data.train.size();
    r.summary["val_samples"] = data.val.size();
    if (!r.metrics.empty()) {
        r.summary["final_train_acc"] = r.metrics.back().train_acc;
        r.summary["final_val_acc"] = r.metrics.back().val_acc;
        r.summary["final_train_loss"] = r.metrics.back().train_loss;
    }
    r.checkpoint = model.checkpoint();
    return r;
}

}  // namespace htnn
