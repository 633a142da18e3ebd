#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "mapn/error.hpp"
#include "mapn/tensor.hpp"

namespace mapn {

using NodeId = std::uint32_t;
using TypeId = std::uint32_t;
using RelationId = std::uint32_t;

struct Edge {
    NodeId src;
    NodeId dst;
    RelationId relation;

    friend bool operator==(const Edge&, const Edge&) = default;
};

class GraphBuilder;

/// Immutable heterogeneous graph. Node ids are dense 0..|V|-1; every node
/// has exactly one type and every edge one relation. Homogeneous graphs are
/// the one-type, one-relation case.
class HeteroGraph {
public:
    std::size_t num_nodes() const { return node_type_.size(); }
    std::size_t num_edges() const { return edges_.size(); }
    std::size_t num_types() const { return type_names_.size(); }
    std::size_t num_relations() const { return relation_names_.size(); }

    TypeId type_of(NodeId v) const { return node_type_[v]; }
    const std::string& type_name(TypeId t) const { return type_names_[t]; }
    const std::string& relation_name(RelationId r) const { return relation_names_[r]; }
    bool relation_directed(RelationId r) const { return relation_directed_[r]; }

    std::optional<TypeId> find_type(const std::string& name) const {
        for (TypeId t = 0; t < type_names_.size(); ++t)
            if (type_names_[t] == name) return t;
        return std::nullopt;
    }

    std::optional<RelationId> find_relation(const std::string& name) const {
        for (RelationId r = 0; r < relation_names_.size(); ++r)
            if (relation_names_[r] == name) return r;
        return std::nullopt;
    }

    const std::vector<Edge>& edges() const { return edges_; }

    /// Successors of v along relation r (both directions for undirected r).
    std::span<const NodeId> neighbors(NodeId v, RelationId r) const {
        const auto& adj = rel_adj_[r];
        return {adj.targets.data() + adj.offsets[v], adj.offsets[v + 1] - adj.offsets[v]};
    }

    /// Predecessors of v along relation r.
    std::span<const NodeId> in_neighbors(NodeId v, RelationId r) const {
        const auto& adj = rel_rev_[r];
        return {adj.targets.data() + adj.offsets[v], adj.offsets[v + 1] - adj.offsets[v]};
    }

    /// Successors of v over all relations pooled, with multiplicity.
    std::span<const NodeId> neighbors(NodeId v) const {
        return {pooled_.targets.data() + pooled_.offsets[v], pooled_.offsets[v + 1] - pooled_.offsets[v]};
    }

    /// Neighbors in the type-erased undirected simple skeleton (sorted,
    /// deduplicated, no self loops).
    std::span<const NodeId> skeleton_neighbors(NodeId v) const {
        return {skeleton_.targets.data() + skeleton_.offsets[v], skeleton_.offsets[v + 1] - skeleton_.offsets[v]};
    }

    std::size_t skeleton_degree(NodeId v) const { return skeleton_.offsets[v + 1] - skeleton_.offsets[v]; }

    std::span<const NodeId> nodes_of_type(TypeId t) const { return nodes_by_type_[t]; }

    /// Row of node v inside its type's feature matrix.
    std::size_t local_index(NodeId v) const { return local_index_[v]; }

    const ad::Tensor& features(TypeId t) const { return features_[t]; }
    std::size_t feature_dim(TypeId t) const {
        return features_[t].shape.rank() == 2 ? features_[t].shape[1] : 0;
    }
    std::span<const double> feature_row(NodeId v) const {
        const auto& f = features_[type_of(v)];
        const std::size_t d = feature_dim(type_of(v));
        return {f.values.data() + local_index(v) * d, d};
    }

    bool has_labels() const { return !labels_.empty(); }
    /// Class index of v, or -1 when unlabeled.
    int label(NodeId v) const { return labels_.empty() ? -1 : labels_[v]; }
    const std::vector<int>& labels() const { return labels_; }
    std::size_t num_classes() const {
        int m = -1;
        for (int l : labels_) m = std::max(m, l);
        return static_cast<std::size_t>(m + 1);
    }

    std::optional<int> graph_label() const { return graph_label_; }

    const std::string& original_id(NodeId v) const { return original_ids_[v]; }
    std::optional<NodeId> find_node(const std::string& original) const {
        auto it = id_index_.find(original);
        if (it == id_index_.end()) return std::nullopt;
        return it->second;
    }

private:
    friend class GraphBuilder;

    struct Csr {
        std::vector<std::size_t> offsets;
        std::vector<NodeId> targets;

        static Csr from_lists(const std::vector<std::vector<NodeId>>& lists) {
            Csr c;
            c.offsets.reserve(lists.size() + 1);
            c.offsets.push_back(0);
            for (const auto& l : lists) {
                c.targets.insert(c.targets.end(), l.begin(), l.end());
                c.offsets.push_back(c.targets.size());
            }
            return c;
        }
    };

    std::vector<TypeId> node_type_;
    std::vector<std::string> type_names_;
    std::vector<std::string> relation_names_;
    std::vector<bool> relation_directed_;
    std::vector<Edge> edges_;
    std::vector<Csr> rel_adj_;
    std::vector<Csr> rel_rev_;
    Csr pooled_;
    Csr skeleton_;
    std::vector<std::vector<NodeId>> nodes_by_type_;
    std::vector<std::size_t> local_index_;
    std::vector<ad::Tensor> features_;
    std::vector<int> labels_;
    std::optional<int> graph_label_;
    std::vector<std::string> original_ids_;
    std::unordered_map<std::string, NodeId> id_index_;
};

/// Incremental construction with validation at build().
class GraphBuilder {
public:
    TypeId add_type(const std::string& name) {
        for (TypeId t = 0; t < type_names_.size(); ++t)
            if (type_names_[t] == name) return t;
        type_names_.push_back(name);
        features_.emplace_back();
        return static_cast<TypeId>(type_names_.size() - 1);
    }

    RelationId add_relation(const std::string& name, bool directed = false) {
        for (RelationId r = 0; r < relation_names_.size(); ++r)
            if (relation_names_[r] == name) {
                require(relation_directed_[r] == directed, ErrorCode::validation,
                        "relation '" + name + "' declared both directed and undirected");
                return r;
            }
        relation_names_.push_back(name);
        relation_directed_.push_back(directed);
        return static_cast<RelationId>(relation_names_.size() - 1);
    }

    NodeId add_node(const std::string& original_id, TypeId type) {
        require(type < type_names_.size(), ErrorCode::validation, "add_node: unknown type id");
        require(!id_index_.contains(original_id), ErrorCode::validation, "duplicate node id '" + original_id + "'");
        const auto v = static_cast<NodeId>(node_type_.size());
        id_index_.emplace(original_id, v);
        original_ids_.push_back(original_id);
        node_type_.push_back(type);
        return v;
    }

    NodeId add_node(TypeId type) { return add_node(std::to_string(node_type_.size()), type); }

    std::optional<NodeId> find_node(const std::string& original_id) const {
        auto it = id_index_.find(original_id);
        if (it == id_index_.end()) return std::nullopt;
        return it->second;
    }

    void add_edge(NodeId src, NodeId dst, RelationId rel) {
        require(src < node_type_.size() && dst < node_type_.size(), ErrorCode::validation,
                "edge references unknown node");
        require(rel < relation_names_.size(), ErrorCode::validation, "edge references unknown relation");
        edges_.push_back({src, dst, rel});
    }

    /// Rows follow the order in which nodes of this type were added.
    void set_features(TypeId type, ad::Tensor matrix) {
        require(type < type_names_.size(), ErrorCode::validation, "set_features: unknown type id");
        features_[type] = std::move(matrix);
        has_features_.resize(type_names_.size(), false);
        has_features_[type] = true;
    }

    void set_label(NodeId v, int cls) {
        require(v < node_type_.size(), ErrorCode::validation, "set_label: unknown node");
        require(cls >= 0, ErrorCode::validation, "set_label: class index must be non-negative");
        labels_.resize(node_type_.size(), -1);
        labels_[v] = cls;
    }

    void set_graph_label(int cls) { graph_label_ = cls; }

    std::size_t num_nodes() const { return node_type_.size(); }
    std::size_t num_relations() const { return relation_names_.size(); }
    std::size_t count_of_type(TypeId t) const {
        return static_cast<std::size_t>(std::count(node_type_.begin(), node_type_.end(), t));
    }

    /// Copy of `g` carrying a graph-level class label.
    static HeteroGraph with_graph_label(HeteroGraph g, std::optional<int> label) {
        g.graph_label_ = label;
        return g;
    }

    HeteroGraph build() const {
        require(!type_names_.empty(), ErrorCode::validation, "graph needs at least one node type");
        require(!relation_names_.empty(), ErrorCode::validation, "graph needs at least one relation type");
        HeteroGraph g;
        const std::size_t n = node_type_.size();
        g.node_type_ = node_type_;
        g.type_names_ = type_names_;
        g.relation_names_ = relation_names_;
        g.relation_directed_ = relation_directed_;
        g.edges_ = edges_;
        g.original_ids_ = original_ids_;
        g.id_index_ = id_index_;
        g.graph_label_ = graph_label_;

        g.nodes_by_type_.assign(type_names_.size(), {});
        g.local_index_.resize(n);
        for (NodeId v = 0; v < n; ++v) {
            g.local_index_[v] = g.nodes_by_type_[node_type_[v]].size();
            g.nodes_by_type_[node_type_[v]].push_back(v);
        }

        g.features_.resize(type_names_.size());
        for (TypeId t = 0; t < type_names_.size(); ++t) {
            const std::size_t rows = g.nodes_by_type_[t].size();
            const bool given = t < has_features_.size() && has_features_[t];
            if (!given) {
                g.features_[t] = ad::Tensor(ad::Shape::mat(rows, 0));
                continue;
            }
            const auto& f = features_[t];
            require(f.shape.rank() == 2 && f.shape[0] == rows, ErrorCode::validation,
                    "feature matrix for type '" + type_names_[t] + "' has shape " + f.shape.str() +
                        ", expected " + std::to_string(rows) + " rows");
            g.features_[t] = f;
        }

        if (!labels_.empty()) {
            g.labels_ = labels_;
            g.labels_.resize(n, -1);
        }

        std::vector<std::vector<std::vector<NodeId>>> fwd(relation_names_.size(), std::vector<std::vector<NodeId>>(n));
        std::vector<std::vector<std::vector<NodeId>>> rev(relation_names_.size(), std::vector<std::vector<NodeId>>(n));
        std::vector<std::vector<NodeId>> pooled(n), skel(n);
        for (const auto& e : edges_) {
            fwd[e.relation][e.src].push_back(e.dst);
            rev[e.relation][e.dst].push_back(e.src);
            pooled[e.src].push_back(e.dst);
            if (!relation_directed_[e.relation]) {
                fwd[e.relation][e.dst].push_back(e.src);
                rev[e.relation][e.src].push_back(e.dst);
                pooled[e.dst].push_back(e.src);
            }
            if (e.src != e.dst) {
                skel[e.src].push_back(e.dst);
                skel[e.dst].push_back(e.src);
            }
        }
        for (auto& l : skel) {
            std::sort(l.begin(), l.end());
            l.erase(std::unique(l.begin(), l.end()), l.end());
        }
        for (std::size_t r = 0; r < relation_names_.size(); ++r) {
            g.rel_adj_.push_back(HeteroGraph::Csr::from_lists(fwd[r]));
            g.rel_rev_.push_back(HeteroGraph::Csr::from_lists(rev[r]));
        }
        g.pooled_ = HeteroGraph::Csr::from_lists(pooled);
        g.skeleton_ = HeteroGraph::Csr::from_lists(skel);
        return g;
    }

private:
    std::vector<TypeId> node_type_;
    std::vector<std::string> type_names_;
    std::vector<std::string> relation_names_;
    std::vector<bool> relation_directed_;
    std::vector<Edge> edges_;
    std::vector<ad::Tensor> features_;
    std::vector<bool> has_features_;
    std::vector<int> labels_;
    std::optional<int> graph_label_;
    std::vector<std::string> original_ids_;
    std::unordered_map<std::string, NodeId> id_index_;
};

/// Alternating node-type / relation sequence A1 -R1-> A2 ... -Rl-> A(l+1).
struct MetaPath {
    std::vector<TypeId> node_types;
    std::vector<RelationId> relations;
    std::string name;

    TypeId anchor_type() const { return node_types.front(); }
    TypeId terminal_type() const { return node_types.back(); }
    std::size_t length() const { return relations.size(); }
    bool symmetric_ends() const { return node_types.front() == node_types.back(); }
};

/// Checks length and that every relation connects the stated types in the
/// graph's edge set.
inline void validate_meta_path(const HeteroGraph& g, const MetaPath& p) {
    require(!p.relations.empty() && p.node_types.size() == p.relations.size() + 1, ErrorCode::validation,
            "meta-path '" + p.name + "': need one more node type than relations");
    for (auto t : p.node_types)
        require(t < g.num_types(), ErrorCode::validation, "meta-path '" + p.name + "': unknown node type");
    for (std::size_t i = 0; i < p.relations.size(); ++i) {
        const RelationId r = p.relations[i];
        require(r < g.num_relations(), ErrorCode::validation, "meta-path '" + p.name + "': unknown relation");
        bool found = false;
        for (NodeId v : g.nodes_of_type(p.node_types[i])) {
            for (NodeId u : g.neighbors(v, r))
                if (g.type_of(u) == p.node_types[i + 1]) {
                    found = true;
                    break;
                }
            if (found) break;
        }
        require(found, ErrorCode::validation,
                "meta-path '" + p.name + "': relation '" + g.relation_name(r) + "' never connects '" +
                    g.type_name(p.node_types[i]) + "' to '" + g.type_name(p.node_types[i + 1]) + "'");
    }
}

/// Parses "author-writes-paper-writes-author" (types and relations
/// alternate, separated by '-').
inline MetaPath parse_meta_path(const HeteroGraph& g, const std::string& text) {
    std::vector<std::string> tokens;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, '-'))
        if (!tok.empty()) tokens.push_back(tok);
    require(tokens.size() >= 3 && tokens.size() % 2 == 1, ErrorCode::usage,
            "meta-path '" + text + "': expected type-relation-type[-relation-type...]");
    MetaPath p;
    p.name = text;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i % 2 == 0) {
            auto t = g.find_type(tokens[i]);
            require(t.has_value(), ErrorCode::usage, "meta-path '" + text + "': unknown node type '" + tokens[i] + "'");
            p.node_types.push_back(*t);
        } else {
            auto r = g.find_relation(tokens[i]);
            require(r.has_value(), ErrorCode::usage, "meta-path '" + text + "': unknown relation '" + tokens[i] + "'");
            p.relations.push_back(*r);
        }
    }
    validate_meta_path(g, p);
    return p;
}

/// Default meta-paths: for each relation connecting types (A, B), the
/// symmetric path A-R-B-R-A, plus for single-type graphs the one-hop path.
inline std::vector<MetaPath> default_meta_paths(const HeteroGraph& g) {
    std::vector<MetaPath> out;
    if (g.num_types() == 1) {
        for (RelationId r = 0; r < g.num_relations(); ++r) {
            const std::string& t = g.type_name(0);
            const std::string& rn = g.relation_name(r);
            out.push_back({{0, 0}, {r}, t + "-" + rn + "-" + t});
            out.push_back({{0, 0, 0}, {r, r}, t + "-" + rn + "-" + t + "-" + rn + "-" + t});
        }
        return out;
    }
    std::map<std::pair<TypeId, TypeId>, RelationId> seen;
    for (const auto& e : g.edges()) {
        const TypeId a = g.type_of(e.src), b = g.type_of(e.dst);
        if (a == b) continue;
        seen.emplace(std::make_pair(a, b), e.relation);
        if (!g.relation_directed(e.relation)) seen.emplace(std::make_pair(b, a), e.relation);
    }
    for (const auto& [ab, r] : seen) {
        const auto [a, b] = ab;
        if (!seen.contains({b, a})) continue;
        const RelationId back = seen.at({b, a});
        out.push_back({{a, b, a}, {r, back},
                       g.type_name(a) + "-" + g.relation_name(r) + "-" + g.type_name(b) + "-" +
                           g.relation_name(back) + "-" + g.type_name(a)});
    }
    return out;
}

/// Disjoint union of graphs sharing the same type/relation schema names.
/// Returns the union and, per input graph, the range of its node ids.
inline std::pair<HeteroGraph, std::vector<std::pair<NodeId, NodeId>>> disjoint_union(
    const std::vector<HeteroGraph>& graphs) {
    GraphBuilder b;
    std::vector<std::pair<NodeId, NodeId>> ranges;
    std::map<std::string, std::vector<std::vector<double>>> rows;
    std::map<std::string, std::size_t> dims;
    for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
        const auto& g = graphs[gi];
        const NodeId first = static_cast<NodeId>(b.num_nodes());
        std::vector<NodeId> map(g.num_nodes());
        for (NodeId v = 0; v < g.num_nodes(); ++v) {
            const TypeId t = b.add_type(g.type_name(g.type_of(v)));
            map[v] = b.add_node("g" + std::to_string(gi) + ":" + g.original_id(v), t);
            const auto row = g.feature_row(v);
            auto& dim = dims.try_emplace(g.type_name(g.type_of(v)), row.size()).first->second;
            require(dim == row.size(), ErrorCode::validation, "disjoint_union: feature dimension differs across graphs");
            rows[g.type_name(g.type_of(v))].emplace_back(row.begin(), row.end());
            if (g.label(v) >= 0) b.set_label(map[v], g.label(v));
        }
        for (const auto& e : g.edges())
            b.add_edge(map[e.src], map[e.dst],
                       b.add_relation(g.relation_name(e.relation), g.relation_directed(e.relation)));
        ranges.emplace_back(first, static_cast<NodeId>(b.num_nodes()));
    }
    if (graphs.empty() || std::all_of(graphs.begin(), graphs.end(), [](const auto& g) { return g.num_edges() == 0; }))
        b.add_relation("link");
    for (const auto& [name, r] : rows) {
        const TypeId t = b.add_type(name);
        const std::size_t d = dims[name];
        ad::Tensor m(ad::Shape::mat(r.size(), d));
        for (std::size_t i = 0; i < r.size(); ++i) std::copy(r[i].begin(), r[i].end(), m.values.begin() + i * d);
        b.set_features(t, std::move(m));
    }
    return {b.build(), ranges};
}

} // namespace mapn
