#pragma once

// Text formats:
//   nodes.tsv     node_id<TAB>type_name
//   edges.tsv     src_id<TAB>dst_id<TAB>relation[<TAB>directed|undirected]
//   <type>.csv    node_id,f1,f2,...   (optional header starting with node_id)
//   labels.tsv    node_id<TAB>class_index
// Lines starting with '#' and blank lines are ignored.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mapn/error.hpp"
#include "mapn/graph.hpp"

namespace mapn {

namespace fs = std::filesystem;

namespace io_detail {

inline std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

inline bool skip_line(const std::string& line) {
    for (char c : line) {
        if (c == '#') return true;
        if (c != ' ' && c != '\t' && c != '\r') return false;
    }
    return true;
}

inline std::ifstream open_input(const fs::path& p) {
    std::ifstream in(p);
    require(in.good(), ErrorCode::io, "cannot open file '" + p.string() + "'");
    return in;
}

inline double parse_double(const std::string& s, const fs::path& file, std::size_t line_no) {
    double x = 0.0;
    const char* b = s.data();
    const char* e = s.data() + s.size();
    while (b < e && *b == ' ') ++b;
    auto [ptr, ec] = std::from_chars(b, e, x);
    require(ec == std::errc() && ptr == e, ErrorCode::parse,
            file.string() + ":" + std::to_string(line_no) + ": malformed number '" + s + "'");
    return x;
}

inline int parse_int(const std::string& s, const fs::path& file, std::size_t line_no) {
    int x = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
    require(ec == std::errc() && ptr == s.data() + s.size(), ErrorCode::parse,
            file.string() + ":" + std::to_string(line_no) + ": malformed integer '" + s + "'");
    return x;
}

inline std::string format_double(double x) {
    std::ostringstream os;
    os << std::setprecision(17) << x;
    return os.str();
}

} // namespace io_detail

/// Reads a graph from the text formats above. Every node type must have a
/// `<type>.csv` file in `features_dir` unless `features_dir` is empty.
inline HeteroGraph load_graph(const fs::path& nodes_path, const fs::path& edges_path, const fs::path& features_dir,
                              const std::optional<fs::path>& labels_path = std::nullopt) {
    using namespace io_detail;
    GraphBuilder b;

    {
        auto in = open_input(nodes_path);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (skip_line(line)) continue;
            const auto cols = split(line, '\t');
            require(cols.size() == 2 && !cols[0].empty() && !cols[1].empty(), ErrorCode::parse,
                    nodes_path.string() + ":" + std::to_string(line_no) + ": expected node_id<TAB>type_name");
            require(!b.find_node(cols[0]).has_value(), ErrorCode::validation,
                    nodes_path.string() + ":" + std::to_string(line_no) + ": duplicate node id '" + cols[0] + "'");
            b.add_node(cols[0], b.add_type(cols[1]));
        }
    }

    {
        auto in = open_input(edges_path);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (skip_line(line)) continue;
            const auto cols = split(line, '\t');
            const std::string where = edges_path.string() + ":" + std::to_string(line_no) + ": ";
            require(cols.size() == 3 || cols.size() == 4, ErrorCode::parse,
                    where + "expected src<TAB>dst<TAB>relation[<TAB>directed|undirected]");
            bool directed = false;
            if (cols.size() == 4) {
                require(cols[3] == "directed" || cols[3] == "undirected", ErrorCode::parse,
                        where + "direction must be 'directed' or 'undirected'");
                directed = cols[3] == "directed";
            }
            auto s = b.find_node(cols[0]);
            auto d = b.find_node(cols[1]);
            require(s.has_value(), ErrorCode::validation, where + "edge references unknown node '" + cols[0] + "'");
            require(d.has_value(), ErrorCode::validation, where + "edge references unknown node '" + cols[1] + "'");
            b.add_edge(*s, *d, b.add_relation(cols[2], directed));
        }
    }
    // A graph with no edges still needs a relation vocabulary entry.
    if (b.num_relations() == 0) b.add_relation("link");

    if (!features_dir.empty()) {
        // Type names are needed in id order; rebuild them from a throwaway build.
        const HeteroGraph skeleton = b.build();
        for (TypeId t = 0; t < skeleton.num_types(); ++t) {
            const fs::path file = features_dir / (skeleton.type_name(t) + ".csv");
            require(fs::exists(file), ErrorCode::io, "missing features file '" + file.string() + "'");
            auto in = open_input(file);
            const std::size_t rows = skeleton.nodes_of_type(t).size();
            std::vector<std::vector<double>> data(rows);
            std::vector<bool> seen(rows, false);
            std::optional<std::size_t> dim;
            std::string line;
            std::size_t line_no = 0;
            while (std::getline(in, line)) {
                ++line_no;
                if (skip_line(line)) continue;
                const auto cols = split(line, ',');
                if (cols[0] == "node_id") continue;
                const std::string where = file.string() + ":" + std::to_string(line_no) + ": ";
                auto v = skeleton.find_node(cols[0]);
                require(v.has_value(), ErrorCode::validation, where + "unknown node '" + cols[0] + "'");
                require(skeleton.type_of(*v) == t, ErrorCode::validation,
                        where + "node '" + cols[0] + "' is not of type '" + skeleton.type_name(t) + "'");
                const std::size_t d = cols.size() - 1;
                if (!dim) dim = d;
                require(*dim == d, ErrorCode::validation,
                        where + "feature dimension mismatch: expected " + std::to_string(*dim) + ", got " +
                            std::to_string(d));
                const std::size_t row = skeleton.local_index(*v);
                require(!seen[row], ErrorCode::validation, where + "duplicate feature row for '" + cols[0] + "'");
                seen[row] = true;
                for (std::size_t j = 1; j < cols.size(); ++j) data[row].push_back(parse_double(cols[j], file, line_no));
            }
            for (std::size_t r = 0; r < rows; ++r)
                require(seen[r], ErrorCode::validation,
                        file.string() + ": no feature row for node '" +
                            skeleton.original_id(skeleton.nodes_of_type(t)[r]) + "'");
            const std::size_t d = dim.value_or(0);
            ad::Tensor m(ad::Shape::mat(rows, d));
            for (std::size_t r = 0; r < rows; ++r) std::copy(data[r].begin(), data[r].end(), m.values.begin() + r * d);
            b.set_features(t, std::move(m));
        }
    }

    if (labels_path) {
        auto in = open_input(*labels_path);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (skip_line(line)) continue;
            const auto cols = split(line, '\t');
            const std::string where = labels_path->string() + ":" + std::to_string(line_no) + ": ";
            require(cols.size() == 2, ErrorCode::parse, where + "expected node_id<TAB>class_index");
            auto v = b.find_node(cols[0]);
            require(v.has_value(), ErrorCode::validation, where + "unknown node '" + cols[0] + "'");
            const int cls = parse_int(cols[1], *labels_path, line_no);
            require(cls >= 0, ErrorCode::validation, where + "class index must be non-negative");
            b.set_label(*v, cls);
        }
    }
    return b.build();
}

/// Loads a dataset directory laid out as written by save_graph().
inline HeteroGraph load_graph_dir(const fs::path& dir) {
    const fs::path labels = dir / "labels.tsv";
    return load_graph(dir / "nodes.tsv", dir / "edges.tsv", dir / "features",
                      fs::exists(labels) ? std::optional<fs::path>(labels) : std::nullopt);
}

/// Writes nodes.tsv, edges.tsv, features/<type>.csv and (when present)
/// labels.tsv. Output is a pure function of the graph.
inline void save_graph(const HeteroGraph& g, const fs::path& dir) {
    using io_detail::format_double;
    fs::create_directories(dir / "features");
    {
        std::ofstream out(dir / "nodes.tsv");
        require(out.good(), ErrorCode::io, "cannot write '" + (dir / "nodes.tsv").string() + "'");
        for (NodeId v = 0; v < g.num_nodes(); ++v) out << g.original_id(v) << '\t' << g.type_name(g.type_of(v)) << '\n';
    }
    {
        std::ofstream out(dir / "edges.tsv");
        require(out.good(), ErrorCode::io, "cannot write '" + (dir / "edges.tsv").string() + "'");
        for (const auto& e : g.edges())
            out << g.original_id(e.src) << '\t' << g.original_id(e.dst) << '\t' << g.relation_name(e.relation) << '\t'
                << (g.relation_directed(e.relation) ? "directed" : "undirected") << '\n';
    }
    for (TypeId t = 0; t < g.num_types(); ++t) {
        std::ofstream out(dir / "features" / (g.type_name(t) + ".csv"));
        const std::size_t d = g.feature_dim(t);
        out << "node_id";
        for (std::size_t j = 0; j < d; ++j) out << ",f" << j;
        out << '\n';
        for (NodeId v : g.nodes_of_type(t)) {
            out << g.original_id(v);
            for (double x : g.feature_row(v)) out << ',' << format_double(x);
            out << '\n';
        }
    }
    if (g.has_labels()) {
        std::ofstream out(dir / "labels.tsv");
        for (NodeId v = 0; v < g.num_nodes(); ++v)
            if (g.label(v) >= 0) out << g.original_id(v) << '\t' << g.label(v) << '\n';
    }
}

/// Graph-corpus manifest:
/// {"graphs": [{"nodes": "...", "edges": "...", "features": "...",
///              "labels": "..." (optional), "graph_label": 0}, ...]}
/// Paths are relative to the manifest's directory.
inline std::vector<HeteroGraph> load_corpus(const fs::path& manifest_path) {
    auto in = io_detail::open_input(manifest_path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::parse, manifest_path.string() + ": " + e.what());
    }
    require(j.contains("graphs") && j["graphs"].is_array(), ErrorCode::parse,
            manifest_path.string() + ": expected a 'graphs' array");
    const fs::path base = manifest_path.parent_path();
    std::vector<HeteroGraph> out;
    for (const auto& entry : j["graphs"]) {
        for (const char* key : {"nodes", "edges", "features", "graph_label"})
            require(entry.contains(key), ErrorCode::parse, manifest_path.string() + ": graph entry missing '" + key + "'");
        std::optional<fs::path> labels;
        if (entry.contains("labels")) labels = base / entry["labels"].get<std::string>();
        HeteroGraph g = load_graph(base / entry["nodes"].get<std::string>(), base / entry["edges"].get<std::string>(),
                                   base / entry["features"].get<std::string>(), labels);
        out.push_back(GraphBuilder::with_graph_label(std::move(g), entry["graph_label"].get<int>()));
    }
    return out;
}

/// Writes a corpus as one sub-directory per graph plus manifest.json.
inline void save_corpus(const std::vector<HeteroGraph>& graphs, const fs::path& dir) {
    nlohmann::json j;
    j["graphs"] = nlohmann::json::array();
    for (std::size_t i = 0; i < graphs.size(); ++i) {
        const std::string sub = "g" + std::to_string(i);
        save_graph(graphs[i], dir / sub);
        nlohmann::json e{{"nodes", sub + "/nodes.tsv"}, {"edges", sub + "/edges.tsv"}, {"features", sub + "/features"},
                         {"graph_label", graphs[i].graph_label().value_or(0)}};
        if (graphs[i].has_labels()) e["labels"] = sub + "/labels.tsv";
        j["graphs"].push_back(e);
    }
    std::ofstream out(dir / "manifest.json");
    out << j.dump(2) << '\n';
}

/// FNV-1a 64-bit digest of a file's bytes, as 16 hex digits.
inline std::string file_checksum(const fs::path& p) {
    auto in = std::ifstream(p, std::ios::binary);
    require(in.good(), ErrorCode::io, "cannot open file '" + p.string() + "'");
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[4096];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

} // namespace mapn
