// htnn: decompose / reconstruct tensors, check gradients, train, profile.
// Exit codes: 0 success, 2 usage or config error, 3 numerical failure.
// Every successful command ends with one JSON summary line on stdout.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <htnn/htnn.hpp>

namespace fs = std::filesystem;
using namespace htnn;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 2;
constexpr int kNumerical = 3;

struct NumericalFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::size_t threads = 1;
    std::string format = "ht";
    std::size_t rank = 0;
    double tol = 0.0;
    std::string tree = "balanced";
};

json read_json(const std::string& path) {
    if (path.empty()) throw ConfigError("--config is required");
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path + ": no such file");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

void write_text(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw FormatError("cannot write " + p.string());
    out << text;
}

void summary(json j) { std::cout << j.dump() << std::endl; }

// ---- decompose / reconstruct ----

int cmd_decompose(const Common& c, const std::string& input) {
    const DenseTensor t = load_htk1(input);
    if (c.rank == 0 && !(c.tol > 0.0)) throw ConfigError("decompose needs --rank or --tol");
    RankPolicy policy;
    policy.cap = c.rank;
    policy.tolerance = c.tol;
    const FormatKind kind = format_kind_from_string(c.format);
    const TreeKind tree = tree_kind_from_string(c.tree);
    if (t.order() < 2) throw ShapeError("decompose needs a tensor of order >= 2, got " + shape_str(t.shape()));
    const Format f = kind == FormatKind::HT ? Format(ht_decompose(t, DimensionTree::build(t.order(), tree), policy))
                                            : Format(tt_decompose(t, policy));
    const double err = relative_error(reconstruct(f), t);
    const FormatStats st = format_stats(f, t.shape());
    const std::string out = c.out.empty() ? fs::path(input).replace_extension(".htz").string() : c.out;
    save_htz(out, f);
    std::printf("format            %s\n", to_string(kind).c_str());
    std::printf("relative_error    %.6e\n", err);
    std::printf("param_count       %zu\n", st.param_count);
    std::printf("compression       %.4f\n", st.compression_factor);
    summary({{"command", "decompose"}, {"format", to_string(kind)}, {"relative_error", err}, {"param_count", st.param_count},
             {"compression_factor", st.compression_factor}, {"max_rank", max_rank(f)}, {"out", out}});
    return kOk;
}

int cmd_reconstruct(const Common& c, const std::string& input, const std::string& reference) {
    const Format f = load_htz(input);
    const DenseTensor t = reconstruct(f);
    const std::string out = c.out.empty() ? fs::path(input).replace_extension(".htk1").string() : c.out;
    save_htk1(out, t);
    json j{{"command", "reconstruct"}, {"shape", t.shape()}, {"out", out}};
    if (!reference.empty()) {
        const double err = relative_error(t, load_htk1(reference));
        std::printf("relative_error    %.6e\n", err);
        j["relative_error"] = err;
    }
    summary(j);
    return kOk;
}

// ---- gradcheck ----

int cmd_gradcheck(const Common& c, const std::string& corrupt) {
    const json cfg = read_json(c.config);
    if (!cfg.contains("layers") || !cfg["layers"].is_array() || cfg["layers"].empty()) {
        throw ConfigError("gradcheck config needs a non-empty \"layers\" list");
    }
    const double tol = cfg.value("tolerance", 1e-4);
    const std::uint64_t seed = c.seed.value_or(cfg.value("seed", std::uint64_t{0}));
    const std::size_t specs = cfg.value("seeds", std::size_t{1});
    GradientCorruption corruption;
    if (!corrupt.empty()) {
        corruption.factor = corrupt;
        corruption.scale = 1.5;
    }
    std::vector<GradCheckRow> rows;
    std::size_t index = 0;
    for (const json& l : cfg["layers"]) {
        ++index;
        const std::string type = l.value("type", std::string());
        const std::string name = l.value("name", type + std::to_string(index));
        const std::string who = "layer '" + name + "'";
        for (std::size_t s = 0; s < specs; ++s) {
            std::vector<GradCheckRow> r;
            if (type == "fc") {
                r = gradcheck_fc(fc_spec_from_json(l, who), seed + s, name,
                                 forward_mode_from_string(l.value("mode", std::string("chain"))), l.value("batch", std::size_t{2}),
                                 corruption);
            } else if (type == "conv") {
                const ConvKernelSpec spec = conv_spec_from_json(l, who);
                Conv2dGeometry g = conv_geometry_from_json(l, spec, who);
                if (!l.contains("pad")) g.pad = 1;
                r = gradcheck_conv(spec, seed + s, name, l.value("image", std::size_t{5}), g, corruption);
            } else if (type == "lstm") {
                if (!l.contains("input") || !l.contains("recurrent")) throw ConfigError(who + ": lstm needs \"input\" and \"recurrent\"");
                r = gradcheck_lstm(fc_spec_from_json(l["input"], who + " input"), fc_spec_from_json(l["recurrent"], who + " recurrent"),
                                   seed + s, name, corruption);
            } else {
                throw ConfigError(who + ": unknown layer type '" + type + "' (fc|conv|lstm)");
            }
            rows.insert(rows.end(), r.begin(), r.end());
        }
    }
    // fold repeated (layer, factor) rows into their worst error
    std::vector<GradCheckRow> table;
    for (const auto& r : rows) {
        auto it = std::find_if(table.begin(), table.end(), [&](const GradCheckRow& t) { return t.layer == r.layer && t.factor == r.factor; });
        if (it == table.end()) table.push_back(r);
        else it->max_rel_error = std::max(it->max_rel_error, r.max_rel_error);
    }
    std::vector<std::string> failed;
    std::printf("%-16s %-16s %-14s %s\n", "layer", "factor", "max_rel_error", "status");
    for (const auto& r : table) {
        const bool ok = r.max_rel_error <= tol;
        std::printf("%-16s %-16s %-14.3e %s\n", r.layer.c_str(), r.factor.c_str(), r.max_rel_error, ok ? "PASS" : "FAIL");
        if (!ok) failed.push_back(r.layer + "." + r.factor);
    }
    if (!failed.empty()) {
        std::string names;
        for (const auto& f : failed) names += (names.empty() ? "" : ", ") + f;
        throw NumericalFailure("gradient check failed for " + names);
    }
    summary({{"command", "gradcheck"}, {"passed", true}, {"checked", table.size()}, {"max_rel_error", max_error(table)}, {"tolerance", tol}});
    return kOk;
}

// ---- train ----

int cmd_train(const Common& c) {
    json cfg = read_json(c.config);
    if (c.seed) cfg["seed"] = *c.seed;
    const fs::path out = c.out.empty() ? fs::path(cfg.value("out", std::string("runs/latest"))) : fs::path(c.out);
    if (c.threads == 0) throw ConfigError("--threads must be >= 1");
    fs::create_directories(out);
    const fs::path metrics_path = out / "metrics.csv";
    std::string csv = metrics_csv_header();
    RunResult r;
    try {
        r = run_training(cfg, c.threads, cfg.value("timing", false), [&](const EpochMetrics& m) {
            csv += metrics_csv_row(m);
            std::fputs(metrics_csv_row(m).c_str(), stderr);
        });
    } catch (const NumericalError& e) {
        write_text(out / "numerical_dump.json", e.dump().dump(2) + "\n");
        write_text(metrics_path, csv);
        throw NumericalFailure(std::string(e.what()) + "; state dumped to " + (out / "numerical_dump.json").string());
    }
    write_text(metrics_path, csv);
    write_text(out / "checkpoint.htz", encode_bundle(r.checkpoint));
    json sched = cfg.value("schedule", json::object());
    if (!sched.contains("seed")) sched["seed"] = cfg.value("seed", std::uint64_t{0});
    write_text(out / "schedule.json", schedule_json(schedule_from_json(sched)).dump(2) + "\n");
    json report{{"config", cfg}, {"preprocessing", r.notes}, {"summary", r.summary}};
    write_text(out / "report.json", report.dump(2) + "\n");
    for (const auto& n : r.notes) std::printf("note: %s\n", n.c_str());
    json s = r.summary;
    s.erase("layers");
    s["command"] = "train";
    s["metrics"] = metrics_path.string();
    s["checkpoint"] = (out / "checkpoint.htz").string();
    summary(s);
    return kOk;
}

// ---- profile ----

int cmd_profile(const Common& c) {
    const json cfg = read_json(c.config);
    std::string csv;
    json s{{"command", "profile"}};
    if (cfg.contains("complexity")) {
        const json& q = cfg["complexity"];
        std::vector<Method> methods;
        for (const auto& m : q.value("methods", json::array({"FC", "HT", "TT", "TR", "BTD"}))) methods.push_back(method_from_string(m));
        const auto rows = complexity_sweep(methods, q.value("d", 4), q.value("m", 4), q.value("n", 4),
                                           q.value("ranks", std::vector<std::uint64_t>{2, 4, 8}), q.value("btd_c", 1));
        csv += complexity_csv(rows);
        s["complexity_rows"] = rows.size();
    }
    if (cfg.contains("transfer")) {
        const json& t = cfg["transfer"];
        std::vector<std::pair<std::string, TensorizedFCSpec>> specs;
        std::size_t i = 0;
        for (const json& l : t.value("specs", json::array())) {
            const std::string label = l.value("label", "spec" + std::to_string(++i));
            specs.emplace_back(label, fc_spec_from_json(l, "spec '" + label + "'"));
        }
        const std::uint64_t seed = c.seed.value_or(t.value("seed", std::uint64_t{0}));
        std::vector<std::uint64_t> seeds;
        for (std::size_t k = 0; k < t.value("seeds", std::size_t{10}); ++k) seeds.push_back(seed + k);
        const auto profiles = gradient_transfer_profile(specs, seeds, t.value("lr", 0.01));
        if (!csv.empty()) csv += "\n";
        csv += profile_csv(profiles);
        s["transfer_specs"] = profiles.size();
        s["seeds"] = seeds.size();
    }
    if (csv.empty()) throw ConfigError("profile config needs \"complexity\" and/or \"transfer\"");
    if (c.out.empty()) {
        std::fputs(csv.c_str(), stdout);
    } else {
        write_text(c.out, csv);
        s["out"] = c.out;
    }
    summary(s);
    return kOk;
}

// ---- make-dataset ----

int cmd_make_dataset(const Common& c, const std::string& kind, std::size_t samples) {
    if (c.out.empty()) throw ConfigError("make-dataset needs --out");
    const std::uint64_t seed = c.seed.value_or(11);
    const fs::path out = c.out;
    fs::create_directories(out);
    json s{{"command", "make-dataset"}, {"kind", kind}};
    if (kind == "digits") {
        const Dataset d = synthetic_digits(samples ? samples : 4000, seed);
        std::vector<std::uint8_t> px(d.x.size()), lb;
        for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<std::uint8_t>(std::lround(d.x[i] * 255.0));
        for (int y : d.labels) lb.push_back(static_cast<std::uint8_t>(y));
        write_text(out / "train-images-idx3-ubyte", encode_idx({d.size(), d.x.dim(1), d.x.dim(2)}, px));
        write_text(out / "train-labels-idx1-ubyte", encode_idx({d.size()}, lb));
        s["samples"] = d.size();
    } else if (kind == "separable" || kind == "toy") {
        const Dataset d = kind == "toy" ? toy_images(samples ? samples : 1000, seed) : separable_points(samples ? samples : 64, 16, seed);
        std::string csv;
        char buf[32];
        const std::size_t w = d.sample_size();
        for (std::size_t i = 0; i < d.size(); ++i) {
            csv += std::to_string(d.labels[i]);
            for (std::size_t f = 0; f < w; ++f) {
                std::snprintf(buf, sizeof buf, ",%.17g", d.x[i * w + f]);
                csv += buf;
            }
            csv += "\n";
        }
        write_text(out / (kind + ".csv"), csv);
        s["samples"] = d.size();
    } else {
        throw ConfigError("unknown dataset kind '" + kind + "' (digits|toy|separable)");
    }
    s["out"] = out.string();
    summary(s);
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hierarchical Tucker / tensor-train layers: decomposition, gradient checks, training, profiling"};
    app.require_subcommand(1);
    Common c;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", c.config, "JSON config file");
        sub->add_option("--seed", c.seed, "Seed override");
        sub->add_option("--out", c.out, "Output path or directory");
        sub->add_option("--threads", c.threads, "Batch shards evaluated concurrently");
        sub->add_option("--format", c.format, "ht or tt");
        sub->add_option("--rank", c.rank, "Uniform rank cap");
        sub->add_option("--tol", c.tol, "Relative Frobenius tolerance");
        sub->add_option("--tree", c.tree, "balanced or degenerate");
    };
    std::string input, reference, corrupt, kind = "digits";
    std::size_t samples = 0;

    auto* dec = app.add_subcommand("decompose", "Decompose an HTK1 tensor into an .htz format");
    add_common(dec);
    dec->add_option("input", input, "HTK1 tensor")->required();
    auto* rec = app.add_subcommand("reconstruct", "Rebuild the dense tensor of an .htz format");
    add_common(rec);
    rec->add_option("input", input, ".htz file")->required();
    rec->add_option("--reference", reference, "HTK1 tensor to compare against");
    auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of layer gradients");
    add_common(gc);
    gc->add_option("--corrupt", corrupt, "Scale one factor's analytic gradient (test hook)")->group("");
    auto* tr = app.add_subcommand("train", "Train a model described by a JSON config");
    add_common(tr);
    auto* pr = app.add_subcommand("profile", "Complexity table and gradient-transfer profile");
    add_common(pr);
    auto* md = app.add_subcommand("make-dataset", "Write a bundled synthetic dataset to disk");
    add_common(md);
    md->add_option("--kind", kind, "digits (IDX), toy or separable (CSV)");
    md->add_option("--samples", samples, "Sample count");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*dec) return cmd_decompose(c, input);
        if (*rec) return cmd_reconstruct(c, input, reference);
        if (*gc) return cmd_gradcheck(c, corrupt);
        if (*tr) return cmd_train(c);
        if (*pr) return cmd_profile(c);
        if (*md) return cmd_make_dataset(c, kind, samples);
    } catch (const NumericalFailure& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    }
    return kUsage;
}
