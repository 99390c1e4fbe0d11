#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <htnn/experiment.hpp>
#include <htnn/gradcheck.hpp>

#include "test_util.hpp"

using namespace htnn;
using htnn::test::random_tensor;

namespace {

json small_cnn() {
    return json::parse(R"({"input": [6, 6, 2], "classes": 3, "layers": [
        {"name": "conv", "type": "conv", "filter": 3, "c": [2], "s": [3], "format": "tt", "rank": 2, "pad": 1},
        {"type": "relu"}, {"type": "maxpool"}, {"type": "flatten"},
        {"name": "fc", "type": "fc", "m": [2, 2], "n": [3, 9], "format": "ht", "rank": 2, "mode": "recovery"},
        {"type": "relu"}, {"name": "out", "type": "dense", "out": 3}]})");
}

double total_loss(const Sequential& m, const DenseTensor& x, const std::vector<int>& y) {
    double loss = 0.0;
    std::size_t correct = 0;
    Sequential::softmax_cross_entropy(m.forward(x), y, loss, correct);
    return loss;
}

}  // namespace

TEST(Loss, UniformLogitsGiveLogK) {
    double loss = 0.0;
    std::size_t correct = 0;
    const DenseTensor g = Sequential::softmax_cross_entropy(DenseTensor({2, 5}), std::vector<int>{1, 3}, loss, correct);
    EXPECT_NEAR(loss, 2.0 * std::log(5.0), 1e-12);
    EXPECT_NEAR(g.at({0, 1}), 0.2 - 1.0, 1e-12);
    EXPECT_NEAR(g.at({0, 0}), 0.2, 1e-12);
    EXPECT_THROW(Sequential::softmax_cross_entropy(DenseTensor({1, 5}), std::vector<int>{7}, loss, correct), std::out_of_range);
}

TEST(Model, EndToEndGradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(3);
    Sequential m = build_model(small_cnn(), rng);
    const DenseTensor x = random_tensor({3, 6, 6, 2}, rng);
    const std::vector<int> y{0, 2, 1};
    const LossResult r = m.loss_and_grad(x, y);
    EXPECT_NEAR(r.loss_sum, total_loss(m, x, y), 1e-12);
    const auto params = m.parameters();
    const auto names = m.parameter_names();
    ASSERT_EQ(params.size(), r.grads.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double err = finite_difference_error(*params[i], r.grads[i], [&] { return total_loss(m, x, y); });
        EXPECT_LE(err, 1e-4) << names[i];
    }
}

TEST(Model, MaxPoolRoutesGradientToArgmax) {
    MaxPool2Layer pool;
    DenseTensor x({1, 2, 2, 1}, {1.0, 4.0, 3.0, 2.0});
    std::any cache;
    const DenseTensor y = pool.forward(x, cache);
    EXPECT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
    EXPECT_EQ(y[0], 4.0);
    std::vector<DenseTensor> none;
    const DenseTensor dx = pool.backward(cache, DenseTensor({1, 1, 1, 1}, {5.0}), none);
    EXPECT_EQ(dx.values(), (std::vector<double>{0.0, 5.0, 0.0, 0.0}));
}

TEST(Model, ShardedGradientsMatchSingleShard) {
    std::mt19937_64 rng(4);
    Sequential m = build_model(small_cnn(), rng);
    Dataset batch{random_tensor({5, 6, 6, 2}, rng), {0, 1, 2, 0, 1}, 3};
    const LossResult one = batch_loss_and_grad(m, batch, 1);
    const LossResult three = batch_loss_and_grad(m, batch, 3);
    EXPECT_NEAR(one.loss_sum, three.loss_sum, 1e-12);
    for (std::size_t i = 0; i < one.grads.size(); ++i) EXPECT_LE(max_abs_diff(one.grads[i], three.grads[i]), 1e-12);
    // same shard count twice is bit-identical
    const LossResult again = batch_loss_and_grad(m, batch, 3);
    for (std::size_t i = 0; i < one.grads.size(); ++i) EXPECT_EQ(three.grads[i].values(), again.grads[i].values());
}

TEST(Data, IdxRoundTripAndErrors) {
    const auto dir = std::filesystem::temp_directory_path() / "htnn_idx_test";
    std::filesystem::create_directories(dir);
    const std::vector<std::uint8_t> px{0, 255, 51, 102, 0, 0, 255, 255};
    write_file((dir / "img").string(), encode_idx({2, 2, 2}, px));
    write_file((dir / "lbl").string(), encode_idx({2}, {3, 7}));
    const Dataset d = load_idx_dataset((dir / "img").string(), (dir / "lbl").string());
    EXPECT_EQ(d.x.shape(), (Shape{2, 2, 2, 1}));
    EXPECT_EQ(d.labels, (std::vector<int>{3, 7}));
    EXPECT_DOUBLE_EQ(d.x[1], 1.0);
    EXPECT_DOUBLE_EQ(d.x[2], 0.2);
    write_file((dir / "bad").string(), encode_idx({2, 2, 2}, {1, 2, 3}));
    EXPECT_THROW(load_idx((dir / "bad").string()), FormatError);
    write_file((dir / "lbl3").string(), encode_idx({3}, {1, 2, 3}));
    EXPECT_THROW(load_idx_dataset((dir / "img").string(), (dir / "lbl3").string()), FormatError);
    std::filesystem::remove_all(dir);
}

TEST(Data, CsvLoader) {
    const auto path = std::filesystem::temp_directory_path() / "htnn_csv_test.csv";
    {
        std::ofstream out(path);
        out << "# label,f1,f2\n1,0.5,2\n0,1,-1\n\n2,3,4\n";
    }
    const Dataset d = load_csv_dataset(path.string());
    EXPECT_EQ(d.x.shape(), (Shape{3, 2}));
    EXPECT_EQ(d.classes, 3u);
    EXPECT_EQ(d.x.at({2, 1}), 4.0);
    {
        std::ofstream out(path);
        out << "1,0.5,2\n0,abc,1\n";
    }
    EXPECT_THROW(load_csv_dataset(path.string()), FormatError);
    std::filesystem::remove(path);
}

TEST(Data, CenteredPadding) {
    Dataset d{DenseTensor({1, 28, 28, 1}), {0}, 10};
    d.x.at({0, 0, 0, 0}) = 1.0;
    d.x.at({0, 27, 27, 0}) = 2.0;
    const Dataset p = pad_images(d, 32);
    EXPECT_EQ(p.x.shape(), (Shape{1, 32, 32, 1}));
    EXPECT_EQ(p.x.at({0, 2, 2, 0}), 1.0);
    EXPECT_EQ(p.x.at({0, 29, 29, 0}), 2.0);
    double sum = 0.0;
    for (double v : p.x.data()) sum += v;
    EXPECT_EQ(sum, 3.0);
}

TEST(Data, SplitIsDisjointAndDeterministic) {
    const Dataset d = separable_points(50, 4, 1);
    const auto [tr, va] = train_val_split(d, 0.2, 9);
    EXPECT_EQ(tr.size(), 40u);
    EXPECT_EQ(va.size(), 10u);
    const auto [tr2, va2] = train_val_split(d, 0.2, 9);
    EXPECT_EQ(tr.x.values(), tr2.x.values());
    std::mt19937_64 rng(0);
    auto idx = shuffled_indices(100, rng);
    std::sort(idx.begin(), idx.end());
    for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(idx[i], i);
}

TEST(Data, SyntheticSetsAreDeterministicAndBalanced) {
    const Dataset a = synthetic_digits(40, 5), b = synthetic_digits(40, 5);
    EXPECT_EQ(a.x.values(), b.x.values());
    EXPECT_EQ(a.x.shape(), (Shape{40, 28, 28, 1}));
    for (double v : a.x.data()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
    std::vector<int> counts(10);
    for (int y : a.labels) ++counts[static_cast<std::size_t>(y)];
    for (int c : counts) EXPECT_EQ(c, 4);
    const Dataset t = toy_images(30, 1);
    EXPECT_EQ(t.x.shape(), (Shape{30, 8, 8, 4}));
}

TEST(Train, SeparableDenseReachesFullAccuracy) {
    const json cfg = json::parse(R"({"seed": 0, "dataset": {"source": "separable", "samples": 64, "features": 16, "seed": 3},
        "model": {"input": [16], "classes": 2, "layers": [{"type": "dense", "out": 2}]},
        "schedule": {"learning_rate": 0.1, "momentum": 0.9, "epochs": 50, "batch_size": 16}})");
    const RunResult r = run_training(cfg);
    EXPECT_EQ(r.metrics.back().train_acc, 1.0);
}

TEST(Train, SeparableHTLayerOverFiveSeeds) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        json cfg = json::parse(R"({"dataset": {"source": "separable", "samples": 64, "features": 16, "seed": 3},
            "model": {"input": [16], "classes": 2, "layers": [
                {"type": "fc", "m": [1, 2], "n": [4, 4], "format": "ht", "rank": 2, "gain": 1.0}]},
            "schedule": {"learning_rate": 0.05, "momentum": 0.9, "epochs": 200, "batch_size": 16}})");
        cfg["seed"] = seed;
        const RunResult r = run_training(cfg);
        double best = 0.0;
        for (const auto& m : r.metrics) best = std::max(best, m.train_acc);
        EXPECT_GE(best, 0.95) << "seed " << seed;
    }
}

TEST(Train, ScheduleAppliedPerEpoch) {
    json cfg = json::parse(R"({"dataset": {"source": "separable", "samples": 16, "features": 4},
        "model": {"input": [4], "classes": 2, "layers": [{"type": "dense", "out": 2}]},
        "schedule": {"learning_rate": 0.2, "epochs": 32, "batch_size": 8}})");
    const RunResult r = run_training(cfg);
    EXPECT_EQ(r.metrics[29].lr, 0.2);
    EXPECT_EQ(r.metrics[30].lr, 0.2 / 10.0);
}

TEST(Train, BitReproducibleForFixedSeed) {
    json cfg = json::parse(R"({"seed": 4, "dataset": {"source": "toy-images", "samples": 120, "val_fraction": 0.25},
        "model": {"input": [8, 8, 4], "classes": 10, "strategy": "hybrid", "layers": [
            {"type": "conv", "filter": 3, "c": [2, 2], "s": [2, 4], "rank": 2, "pad": "same"},
            {"type": "relu"}, {"type": "maxpool"}, {"type": "flatten"},
            {"type": "fc", "m": [4, 8], "n": [8, 16], "rank": 4}, {"type": "relu"}, {"type": "dense", "out": 10}]},
        "schedule": {"epochs": 3, "batch_size": 16}})");
    EXPECT_EQ(metrics_csv(run_training(cfg).metrics), metrics_csv(run_training(cfg).metrics));
    EXPECT_EQ(metrics_csv(run_training(cfg, 2).metrics), metrics_csv(run_training(cfg, 2).metrics));
    cfg["seed"] = 5;
    const std::string other = metrics_csv(run_training(cfg).metrics);
    cfg["seed"] = 4;
    EXPECT_NE(other, metrics_csv(run_training(cfg).metrics));
}

TEST(Train, MetricsCsvLayout) {
    EpochMetrics m{3, 0.01, 0.5, 0.75, 0.5, -1.0};
    EXPECT_EQ(metrics_csv_header(), "epoch,lr,train_loss,train_acc,val_acc,wall_seconds\n");
    EXPECT_EQ(metrics_csv_row(m), "3,0.01,0.5,0.750000,0.500000,NA\n");
    m.wall_seconds = 1.25;
    EXPECT_EQ(metrics_csv_row(m), "3,0.01,0.5,0.750000,0.500000,1.250\n");
}

TEST(Train, NonFiniteLossAbortsWithDump) {
    std::mt19937_64 rng(0);
    Sequential m = build_model(json::parse(R"({"input": [2], "classes": 2, "layers": [{"name": "d", "type": "dense", "out": 2}]})"), rng);
    Dataset d{DenseTensor({2, 2}, {1.0, std::nan(""), 0.0, 1.0}), {0, 1}, 2};
    TrainOptions opt;
    opt.schedule.epochs = 1;
    try {
        train(m, d, Dataset{DenseTensor(), {}, 2}, opt);
        FAIL() << "expected NumericalError";
    } catch (const NumericalError& e) {
        EXPECT_EQ(e.dump()["epoch"], 0);
        EXPECT_EQ(e.dump()["parameters"][0]["name"], "d.W");
    }
}

TEST(Train, DatasetMismatchNamesLayer) {
    std::mt19937_64 rng(0);
    Sequential m = build_model(json::parse(R"({"input": [16], "classes": 2, "layers": [
        {"name": "first", "type": "fc", "m": [2, 2], "n": [4, 4], "rank": 2}, {"type": "dense", "out": 2}]})"), rng);
    const Dataset d = separable_points(8, 12, 0);
    try {
        train(m, d, Dataset{DenseTensor(), {}, 2}, TrainOptions{});
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        EXPECT_NE(std::string(e.what()).find("first"), std::string::npos) << e.what();
    }
}

TEST(Train, CheckpointBundleRoundTrips) {
    std::mt19937_64 rng(2);
    Sequential m = build_model(small_cnn(), rng);
    const auto entries = decode_bundle(encode_bundle(m.checkpoint()));
    ASSERT_EQ(entries.size(), 6u);
    EXPECT_EQ(entries[0].name, "conv");
    const auto& conv = dynamic_cast<const FactorizedConvLayer&>(*m.layers()[0]);
    EXPECT_LE(max_abs_diff(reconstruct(std::get<Format>(entries[0].value)), reconstruct(conv.params())), 0.0);
}
