#pragma once

// Builds Sequential models from JSON.
//
//   {"input": [8,8,4], "classes": 10, "strategy": "hybrid",
//    "layers": [
//      {"type": "conv", "filter": 3, "c": [2,2], "s": [2,4], "rank": 2, "pad": "same"},
//      {"type": "relu"}, {"type": "maxpool"}, {"type": "flatten"},
//      {"type": "fc", "m": [4,8], "n": [8,16], "rank": 4},
//      {"type": "relu"}, {"type": "dense", "out": 10}]}
//
// strategy: "hybrid" (TT kernels, HT weights on balanced trees), "ht", "tt",
// or "explicit" (default; each layer's own "format", falling back to ht).
// Input widths are inferred from the running shape and checked against each
// layer's factorization.

#include <memory>
#include <random>
#include <string>

#include "model.hpp"

namespace htnn {

enum class BuildStrategy { Explicit, Hybrid, HT, TT };

inline BuildStrategy build_strategy_from_string(const std::string& s) {
    if (s == "explicit") return BuildStrategy::Explicit;
    if (s == "hybrid") return BuildStrategy::Hybrid;
    if (s == "ht") return BuildStrategy::HT;
    if (s == "tt") return BuildStrategy::TT;
    throw std::invalid_argument("unknown build strategy '" + s + "' (explicit|hybrid|ht|tt)");
}

inline std::string to_string(BuildStrategy s) {
    switch (s) {
        case BuildStrategy::Hybrid: return "hybrid";
        case BuildStrategy::HT: return "ht";
        case BuildStrategy::TT: return "tt";
        default: return "explicit";
    }
}

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

namespace detail {
inline FormatKind layer_format(const json& l, BuildStrategy s, bool conv) {
    switch (s) {
        case BuildStrategy::Hybrid: return conv ? FormatKind::TT : FormatKind::HT;
        case BuildStrategy::HT: return FormatKind::HT;
        case BuildStrategy::TT: return FormatKind::TT;
        default: return format_kind_from_string(l.value("format", std::string("ht")));
    }
}

inline Shape shape_field(const json& l, const char* key, const std::string& who) {
    if (!l.contains(key)) throw ConfigError(who + ": missing \"" + key + "\"");
    try {
        return l.at(key).get<Shape>();
    } catch (const json::exception&) {
        throw ConfigError(who + ": \"" + key + "\" must be a list of positive integers");
    }
}
}  // namespace detail

inline TensorizedFCSpec fc_spec_from_json(const json& l, const std::string& who,
                                          BuildStrategy strategy = BuildStrategy::Explicit) {
    TensorizedFCSpec spec;
    spec.m = detail::shape_field(l, "m", who);
    spec.n = detail::shape_field(l, "n", who);
    spec.kind = detail::layer_format(l, strategy, false);
    spec.tree = strategy == BuildStrategy::Hybrid ? TreeKind::Balanced
                                                  : tree_kind_from_string(l.value("tree", std::string("balanced")));
    spec.rank = l.value("rank", std::size_t{1});
    if (l.contains("ranks")) spec.ranks = l["ranks"].get<std::vector<std::size_t>>();
    try {
        spec.validate();
        spec.resolved_ranks();
    } catch (const std::exception& e) {
        throw ShapeError(who + ": " + e.what());
    }
    return spec;
}

inline ConvKernelSpec conv_spec_from_json(const json& l, const std::string& who,
                                          BuildStrategy strategy = BuildStrategy::Explicit) {
    ConvKernelSpec spec;
    spec.l = l.value("filter", std::size_t{3});
    spec.c = detail::shape_field(l, "c", who);
    spec.s = detail::shape_field(l, "s", who);
    spec.kind = detail::layer_format(l, strategy, true);
    spec.tree = tree_kind_from_string(l.value("tree", std::string("balanced")));
    spec.rank = l.value("rank", std::size_t{1});
    if (l.contains("ranks")) spec.ranks = l["ranks"].get<std::vector<std::size_t>>();
    try {
        spec.validate();
        if (spec.kind == FormatKind::HT && spec.order() < 2) throw ShapeError("HT kernels need d >= 2");
        spec.resolved_ranks();
    } catch (const std::exception& e) {
        throw ShapeError(who + ": " + e.what());
    }
    return spec;
}

/// "stride" (default 1) and "pad": integer or "same".
inline Conv2dGeometry conv_geometry_from_json(const json& l, const ConvKernelSpec& spec, const std::string& who) {
    Conv2dGeometry g{l.value("stride", std::size_t{1}), 0};
    if (g.stride == 0) throw ConfigError(who + ": stride must be >= 1");
    if (l.contains("pad")) {
        if (l["pad"].is_string()) {
            if (l["pad"] != "same") throw ConfigError(who + ": pad must be an integer or \"same\"");
            g.pad = Conv2dGeometry::same(spec.l).pad;
        } else {
            g.pad = l["pad"].get<std::size_t>();
        }
    }
    return g;
}

/// Throws ConfigError for malformed configs and ShapeError (naming the
/// layer) for factorizations that do not match the running shape.
template <typename Rng>
Sequential build_model(const json& cfg, Rng& rng) {
    if (!cfg.is_object()) throw ConfigError("model config must be an object");
    if (!cfg.contains("input")) throw ConfigError("model config needs \"input\"");
    if (!cfg.contains("layers") || !cfg["layers"].is_array() || cfg["layers"].empty()) {
        throw ConfigError("model config needs a non-empty \"layers\" list");
    }
    const BuildStrategy strategy = build_strategy_from_string(cfg.value("strategy", std::string("explicit")));
    Sequential model(detail::shape_field(cfg, "input", "model"), cfg.value("classes", std::size_t{10}));
    Shape shape = model.input_shape();
    std::size_t index = 0;
    for (const json& l : cfg["layers"]) {
        ++index;
        const std::string type = l.value("type", std::string());
        const std::string name = l.value("name", type + std::to_string(index));
        const std::string who = "layer '" + name + "'";
        std::unique_ptr<Layer> layer;
        try {
            if (type == "dense") {
                const std::size_t in = shape_product(shape);
                if (!l.contains("out")) throw ConfigError(who + ": missing \"out\"");
                layer = std::make_unique<DenseLayer>(in, l["out"].get<std::size_t>(), rng, l.value("gain", 1.0));
            } else if (type == "fc") {
                TensorizedFCSpec spec = fc_spec_from_json(l, who, strategy);
                if (spec.N() != shape_product(shape)) {
                    throw ShapeError(who + ": n=" + shape_str(spec.n) + " multiplies to " + std::to_string(spec.N()) +
                                     " but the incoming shape " + shape_str(shape) + " has " + std::to_string(shape_product(shape)));
                }
                const ForwardMode mode = forward_mode_from_string(l.value("mode", std::string("chain")));
                layer = std::make_unique<FactorizedFCLayer>(spec, rng, mode, l.value("gain", 2.0));
            } else if (type == "conv") {
                ConvKernelSpec spec = conv_spec_from_json(l, who, strategy);
                const Conv2dGeometry g = conv_geometry_from_json(l, spec, who);
                if (shape.size() != 3 || shape[2] != spec.C()) {
                    throw ShapeError(who + ": c=" + shape_str(spec.c) + " gives " + std::to_string(spec.C()) +
                                     " input channels, incoming shape is " + shape_str(shape));
                }
                layer = std::make_unique<FactorizedConvLayer>(spec, g, rng, l.value("gain", 2.0));
            } else if (type == "relu") {
                layer = std::make_unique<ReLULayer>();
            } else if (type == "maxpool") {
                layer = std::make_unique<MaxPool2Layer>();
            } else if (type == "flatten") {
                layer = std::make_unique<FlattenLayer>();
            } else {
                throw ConfigError(who + ": unknown layer type '" + type + "'");
            }
        } catch (const json::exception& e) {
            throw ConfigError(who + ": " + e.what());
        }
        layer->set_name(name);
        shape = layer->output_shape(shape);
        model.add(std::move(layer));
    }
    model.validate();
    return model;
}

struct LayerSummary {
    std::string name;
    std::string kind;
    std::size_t params = 0;
    std::size_t dense_params = 0;
    double compression_factor = 1.0;
};

inline std::vector<LayerSummary> summarize(const Sequential& model) {
    std::vector<LayerSummary> out;
    for (const auto& l : model.layers()) {
        const std::size_t p = l->param_count();
        if (p == 0) continue;
        const std::size_t dp = l->dense_param_count();
        out.push_back({l->name(), l->kind(), p, dp, static_cast<double>(dp) / static_cast<double>(p)});
    }
    return out;
}

inline json summary_json(const Sequential& model) {
    json layers = json::array();
    for (const auto& s : summarize(model)) {
        layers.push_back({{"name", s.name}, {"kind", s.kind}, {"params", s.params}, {"dense_params", s.dense_params},
                          {"compression_factor", s.compression_factor}});
    }
    const double cf = static_cast<double>(model.dense_param_count()) / static_cast<double>(model.param_count());
    return {{"layers", layers}, {"params", model.param_count()}, {"dense_params", model.dense_param_count()}, {"compression_factor", cf}};
}

}  // namespace htnn
