#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <htnn/htnn.hpp>

#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace htnn;

namespace {

struct CliResult {
    int code;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("htnn_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

CliResult cli(const std::string& args) {
    static int counter = 0;
    const fs::path dir = fs::temp_directory_path() / "htnn_cli_io";
    fs::create_directories(dir);
    const fs::path out = dir / ("o" + std::to_string(counter));
    const fs::path err = dir / ("e" + std::to_string(counter++));
    const std::string cmd = std::string(HTNN_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

std::string config(const std::string& name) { return std::string(HTNN_CONFIG_DIR) + "/" + name; }

fs::path write_json(const fs::path& dir, const std::string& name, const json& j) {
    const fs::path p = dir / name;
    std::ofstream(p) << j.dump();
    return p;
}

json last_json_line(const std::string& out) {
    const auto end = out.find_last_not_of('\n');
    const auto begin = out.rfind('\n', end);
    return json::parse(out.substr(begin == std::string::npos ? 0 : begin + 1, end - (begin == std::string::npos ? 0 : begin + 1) + 1));
}

json tiny_train_config() {
    return json::parse(R"({"seed": 2, "dataset": {"source": "separable", "samples": 40, "features": 16, "val_fraction": 0.25},
        "model": {"input": [16], "classes": 2, "layers": [
            {"name": "fc1", "type": "fc", "m": [2, 2], "n": [4, 4], "format": "ht", "rank": 2}, {"type": "relu"},
            {"type": "dense", "out": 2}]},
        "schedule": {"learning_rate": 0.05, "epochs": 4, "batch_size": 8}})");
}

}  // namespace

TEST(Cli, DecomposeExactAndTruncated) {
    const fs::path dir = scratch("decompose");
    std::mt19937_64 rng(1);
    const DenseTensor t = htnn::test::random_tensor({3, 4, 2, 5}, rng);
    save_htk1((dir / "t.htk1").string(), t);
    for (const char* fmt : {"ht", "tt"}) {
        const CliResult r = cli("decompose " + (dir / "t.htk1").string() + " --format " + fmt + " --rank 64 --out " + (dir / "full.htz").string());
        ASSERT_EQ(r.code, 0) << r.err;
        EXPECT_LE(last_json_line(r.out)["relative_error"].get<double>(), 1e-10);
        const CliResult back = cli("reconstruct " + (dir / "full.htz").string() + " --reference " + (dir / "t.htk1").string() + " --out " +
                             (dir / "back.htk1").string());
        ASSERT_EQ(back.code, 0) << back.err;
        EXPECT_LE(max_abs_diff(load_htk1((dir / "back.htk1").string()), t), 1e-10);
    }
    const CliResult low = cli("decompose " + (dir / "t.htk1").string() + " --rank 1 --out " + (dir / "low.htz").string());
    ASSERT_EQ(low.code, 0) << low.err;
    const json s = last_json_line(low.out);
    EXPECT_GT(s["relative_error"].get<double>(), 0.0);
    EXPECT_EQ(s["max_rank"], 1);
}

TEST(Cli, DecomposeErrorsAreUsageErrors) {
    const CliResult missing = cli("decompose /nonexistent/x.htk1 --rank 2");
    EXPECT_EQ(missing.code, 2);
    EXPECT_NE(missing.err.find("/nonexistent/x.htk1"), std::string::npos) << missing.err;
    EXPECT_EQ(cli("").code, 2);
    EXPECT_EQ(cli("frobnicate").code, 2);
}

TEST(Cli, GradcheckPassesAndFlagsCorruptFactor) {
    const CliResult ok = cli("gradcheck --config " + config("gradcheck_default.json"));
    ASSERT_EQ(ok.code, 0) << ok.err;
    EXPECT_NE(ok.out.find("PASS"), std::string::npos);
    EXPECT_EQ(ok.out.find("FAIL"), std::string::npos);
    const CliResult bad = cli("gradcheck --config " + config("gradcheck_default.json") + " --corrupt U1");
    EXPECT_EQ(bad.code, 3);
    EXPECT_NE(bad.err.find("U1"), std::string::npos) << bad.err;

    const fs::path dir = scratch("gradcheck");
    EXPECT_EQ(cli("gradcheck --config " + write_json(dir, "empty.json", json{{"layers", json::array()}}).string()).code, 2);
    EXPECT_EQ(cli("gradcheck").code, 2);
}

TEST(Cli, TrainWritesArtifactsDeterministically) {
    const fs::path dir = scratch("train");
    const fs::path cfg = write_json(dir, "cfg.json", tiny_train_config());
    for (const char* run : {"a", "b"}) {
        const CliResult r = cli("train --config " + cfg.string() + " --out " + (dir / run).string());
        ASSERT_EQ(r.code, 0) << r.err;
    }
    for (const char* f : {"metrics.csv", "checkpoint.htz", "schedule.json", "report.json"}) EXPECT_TRUE(fs::exists(dir / "a" / f)) << f;
    const std::string a = slurp(dir / "a" / "metrics.csv");
    EXPECT_EQ(a, slurp(dir / "b" / "metrics.csv"));
    EXPECT_EQ(a.substr(0, a.find('\n')), "epoch,lr,train_loss,train_acc,val_acc,wall_seconds");
    EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 5);
    const auto entries = decode_bundle(slurp(dir / "a" / "checkpoint.htz"));
    EXPECT_EQ(entries.front().name, "fc1");

    const CliResult other = cli("train --config " + cfg.string() + " --seed 9 --out " + (dir / "c").string());
    ASSERT_EQ(other.code, 0);
    EXPECT_NE(slurp(dir / "c" / "metrics.csv"), a);
}

TEST(Cli, TrainShapeMismatchNamesLayer) {
    const fs::path dir = scratch("mismatch");
    json cfg = tiny_train_config();
    cfg["dataset"]["features"] = 12;
    cfg["model"]["input"] = {12};
    const CliResult r = cli("train --config " + write_json(dir, "cfg.json", cfg).string() + " --out " + (dir / "run").string());
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("fc1"), std::string::npos) << r.err;
}

TEST(Cli, TrainNonFiniteInputExitsNumerical) {
    const fs::path dir = scratch("nan");
    std::ofstream(dir / "d.csv") << "0,1,2\n1,nan,0\n0,0.5,1\n1,1,1\n";
    json cfg = json::parse(R"({"dataset": {"source": "csv"}, "model": {"input": [2], "classes": 2, "layers": [{"type": "dense", "out": 2}]},
        "schedule": {"epochs": 2, "batch_size": 4}})");
    cfg["dataset"]["path"] = (dir / "d.csv").string();
    const CliResult r = cli("train --config " + write_json(dir, "cfg.json", cfg).string() + " --out " + (dir / "run").string());
    EXPECT_EQ(r.code, 3) << r.err;
    EXPECT_TRUE(fs::exists(dir / "run" / "numerical_dump.json"));
}

TEST(Cli, ProfileComplexityTable) {
    const CliResult r = cli("profile --config " + config("profile_complexity.json"));
    ASSERT_EQ(r.code, 0) << r.err;
    std::istringstream lines(r.out);
    std::string line;
    std::getline(lines, line);
    EXPECT_EQ(line.rfind("method,d,m,n,r,", 0), 0u);
    std::size_t rows = 0;
    while (std::getline(lines, line) && line.front() != '{') ++rows;
    EXPECT_EQ(rows, 12u);
    EXPECT_EQ(last_json_line(r.out)["complexity_rows"], 12);

    const fs::path dir = scratch("profile");
    const json bad{{"complexity", {{"methods", {"XYZ"}}}}};
    EXPECT_EQ(cli("profile --config " + write_json(dir, "bad.json", bad).string()).code, 2);
}

TEST(Cli, MakeDatasetFeedsIdxTraining) {
    const fs::path dir = scratch("dataset");
    const CliResult made = cli("make-dataset --kind digits --samples 60 --out " + (dir / "mnist").string());
    ASSERT_EQ(made.code, 0) << made.err;
    json cfg = json::parse(R"({"dataset": {"source": "idx", "pad_to": 32, "val_fraction": 0.2},
        "model": {"input": [32, 32, 1], "classes": 10, "layers": [{"type": "flatten"},
            {"type": "fc", "m": [4, 4, 8, 8], "n": [8, 8, 4, 4], "rank": 2}, {"type": "relu"}, {"type": "dense", "out": 10}]},
        "schedule": {"epochs": 1, "batch_size": 16}})");
    cfg["dataset"]["images"] = (dir / "mnist" / "train-images-idx3-ubyte").string();
    cfg["dataset"]["labels"] = (dir / "mnist" / "train-labels-idx1-ubyte").string();
    const CliResult r = cli("train --config " + write_json(dir, "cfg.json", cfg).string() + " --out " + (dir / "run").string());
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(cli("make-dataset --kind bogus --out " + (dir / "x").string()).code, 2);
}
