#pragma once

// .htz archives: a JSON manifest plus one HTK1 blob per factor, zipped.
// Manifest keys: kind, dims, tree, ranks, factors.

#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "format.hpp"
#include "htk1.hpp"
#include "zip.hpp"

namespace htnn {

using json = nlohmann::json;

namespace detail {

inline json tree_json(const DimensionTree& t) {
    json nodes = json::array();
    for (const auto& n : t.nodes()) {
        json modes = json::array();
        for (std::size_t k = n.begin; k < n.end; ++k) modes.push_back(k);
        nodes.push_back({{"modes", modes}, {"left", n.left}, {"right", n.right}});
    }
    return {{"kind", to_string(t.kind())}, {"nodes", nodes}};
}

inline DimensionTree tree_from_json(const json& j, std::size_t d) {
    DimensionTree t = DimensionTree::build(d, tree_kind_from_string(j.at("kind").get<std::string>()));
    const json& nodes = j.at("nodes");
    if (nodes.size() != t.size()) throw FormatError("manifest tree has " + std::to_string(nodes.size()) + " nodes, expected " + std::to_string(t.size()));
    for (std::size_t i = 0; i < t.size(); ++i) {
        const auto& n = t.node(i);
        const auto modes = nodes[i].at("modes").get<std::vector<std::size_t>>();
        if (modes.size() != n.width() || modes.front() != n.begin || nodes[i].at("left").get<int>() != n.left ||
            nodes[i].at("right").get<int>() != n.right) {
            throw FormatError("manifest tree node " + std::to_string(i) + " does not match a " +
                              to_string(t.kind()) + " tree");
        }
    }
    return t;
}

/// Manifest for one format; blobs are appended to `blobs` under `prefix`.
inline json format_manifest(const Format& f, const std::string& prefix, zip::Entries& blobs) {
    json m;
    m["kind"] = to_string(kind_of(f));
    m["dims"] = format_dims(f);
    json names = json::array();
    const auto& fs = factors_of(f);
    for (std::size_t i = 0; i < fs.size(); ++i) {
        std::string name = prefix + factor_name(f, i) + ".htk";
        blobs.emplace_back(name, encode_htk1(fs[i]));
        names.push_back(name);
    }
    m["factors"] = names;
    if (const auto* h = std::get_if<HTFormat>(&f)) {
        m["tree"] = tree_json(h->tree());
        m["ranks"] = h->tree().ranks();
    } else {
        m["tree"] = nullptr;
        m["ranks"] = std::get<TTFormat>(f).ranks();
    }
    return m;
}

inline const std::string& blob(const std::map<std::string, std::string>& files, const std::string& name) {
    auto it = files.find(name);
    if (it == files.end()) throw FormatError("archive is missing entry '" + name + "'");
    return it->second;
}

inline Format format_from_manifest(const json& m, const std::map<std::string, std::string>& files) {
    const std::string kind = m.at("kind").get<std::string>();
    const auto dims = m.at("dims").get<Shape>();
    std::vector<DenseTensor> factors;
    for (const auto& name : m.at("factors")) factors.push_back(decode_htk1(blob(files, name.get<std::string>())));
    if (kind == "ht") {
        DimensionTree tree = tree_from_json(m.at("tree"), dims.size());
        tree.set_ranks(m.at("ranks").get<std::vector<std::size_t>>());
        return HTFormat(std::move(tree), dims, std::move(factors));
    }
    if (kind == "tt") {
        TTFormat t(std::move(factors));
        if (t.dims() != dims || t.ranks() != m.at("ranks").get<std::vector<std::size_t>>()) {
            throw FormatError("TT manifest dims/ranks disagree with the stored cores");
        }
        return t;
    }
    throw FormatError("unknown format kind '" + kind + "' in manifest");
}

}  // namespace detail

inline std::string encode_htz(const Format& f) {
    zip::Entries entries;
    zip::Entries blobs;
    const json m = detail::format_manifest(f, "factors/", blobs);
    entries.emplace_back("manifest.json", m.dump(2));
    entries.insert(entries.end(), blobs.begin(), blobs.end());
    return zip::write(entries);
}

inline Format decode_htz(const std::string& bytes) {
    const auto files = zip::read(bytes);
    const json m = json::parse(detail::blob(files, "manifest.json"));
    return detail::format_from_manifest(m, files);
}

inline void save_htz(const std::string& path, const Format& f) { write_file(path, encode_htz(f)); }
inline Format load_htz(const std::string& path) { return decode_htz(read_file(path)); }

/// A named collection of factored formats and plain dense tensors, used for
/// model checkpoints. Top-level manifest kind is "bundle".
struct BundleEntry {
    std::string name;
    std::variant<Format, DenseTensor> value;
};

inline std::string encode_bundle(const std::vector<BundleEntry>& entries) {
    zip::Entries blobs;
    json list = json::array();
    for (const auto& e : entries) {
        const std::string prefix = e.name + "/";
        if (const auto* f = std::get_if<Format>(&e.value)) {
            json m = detail::format_manifest(*f, prefix, blobs);
            m["name"] = e.name;
            list.push_back(m);
        } else {
            const auto& t = std::get<DenseTensor>(e.value);
            const std::string blob_name = prefix + "dense.htk";
            blobs.emplace_back(blob_name, encode_htk1(t));
            list.push_back({{"name", e.name}, {"kind", "dense"}, {"dims", t.shape()}, {"tree", nullptr},
                            {"ranks", json::array()}, {"factors", {blob_name}}});
        }
    }
    json m = {{"kind", "bundle"}, {"dims", json::array()}, {"tree", nullptr}, {"ranks", json::array()},
              {"factors", json::array()}, {"entries", list}};
    zip::Entries all{{"manifest.json", m.dump(2)}};
    all.insert(all.end(), blobs.begin(), blobs.end());
    return zip::write(all);
}

inline std::vector<BundleEntry> decode_bundle(const std::string& bytes) {
    const auto files = zip::read(bytes);
    const json m = json::parse(detail::blob(files, "manifest.json"));
    if (m.at("kind") != "bundle") throw FormatError("archive is not a bundle");
    std::vector<BundleEntry> out;
    for (const auto& e : m.at("entries")) {
        const std::string name = e.at("name").get<std::string>();
        if (e.at("kind") == "dense") {
            out.push_back({name, decode_htk1(detail::blob(files, e.at("factors").at(0).get<std::string>()))});
        } else {
            out.push_back({name, detail::format_from_manifest(e, files)});
        }
    }
    return out;
}

}  // namespace htnn
