#pragma once

#include <algorithm>
#include <deque>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mapn/error.hpp"
#include "mapn/graph.hpp"
#include "mapn/parallel.hpp"
#include "mapn/rng.hpp"

namespace mapn {

struct WalkConfig {
    double restart_p = 0.5;
    std::size_t walk_length = 100;
    std::size_t walks_per_node = 10;
    std::size_t default_k = 10;
    std::map<TypeId, std::size_t> k_per_type;  // overrides default_k
    std::uint64_t seed = 7;

    std::size_t k_for(TypeId t) const {
        auto it = k_per_type.find(t);
        return it == k_per_type.end() ? default_k : it->second;
    }

    void validate() const {
        require(restart_p > 0.0 && restart_p < 1.0, ErrorCode::validation, "walk config: restart_p must lie in (0, 1)");
        require(walk_length >= 1, ErrorCode::validation, "walk config: walk_length must be >= 1");
        require(walks_per_node >= 1, ErrorCode::validation, "walk config: walks_per_node must be >= 1");
        require(default_k >= 1, ErrorCode::validation, "walk config: k must be >= 1");
        for (auto [t, k] : k_per_type) require(k >= 1, ErrorCode::validation, "walk config: every k_A must be >= 1");
    }
};

// Stream tags keep the RNG streams of different samplers apart.
namespace stream_tag {
inline constexpr std::uint64_t rwr = 1;
inline constexpr std::uint64_t meta_path = 2;
inline constexpr std::uint64_t negatives = 3;
} // namespace stream_tag

/// Random walk with restart. The returned sequence has walk_length entries
/// and starts at `start`. Neighbors are drawn from all relations pooled;
/// a node without out-neighbors restarts.
inline std::vector<NodeId> rwr_walk(const HeteroGraph& g, NodeId start, const WalkConfig& cfg, Rng& rng) {
    require(start < g.num_nodes(), ErrorCode::validation, "rwr_walk: start node out of range");
    std::vector<NodeId> walk;
    walk.reserve(cfg.walk_length);
    walk.push_back(start);
    NodeId cur = start;
    while (walk.size() < cfg.walk_length) {
        const auto nb = g.neighbors(cur);
        if (nb.empty() || rng.uniform() < cfg.restart_p)
            cur = start;
        else
            cur = nb[rng.index(nb.size())];
        walk.push_back(cur);
    }
    return walk;
}

struct TypedNeighborSet {
    struct Entry {
        NodeId node;
        std::size_t count;
        bool operator==(const Entry&) const = default;
    };
    NodeId owner = 0;
    std::vector<std::vector<Entry>> neighbors;  // indexed by type id
    std::vector<bool> padded;                    // list contains resampled duplicates
    std::vector<bool> empty;                     // no node of that type was visited

    std::vector<NodeId> ids(TypeId t) const {
        std::vector<NodeId> out;
        for (const auto& e : neighbors[t]) out.push_back(e.node);
        return out;
    }
};

/// Ranks the nodes visited by `walks` per type: count descending, node id
/// ascending. Lists shorter than k_A are padded cyclically.
inline TypedNeighborSet typed_top_k(std::span<const std::vector<NodeId>> walks, NodeId owner, const HeteroGraph& g,
                                    const WalkConfig& cfg) {
    std::map<NodeId, std::size_t> counts;
    for (const auto& w : walks)
        for (NodeId v : w)
            if (v != owner) ++counts[v];

    TypedNeighborSet out;
    out.owner = owner;
    out.neighbors.resize(g.num_types());
    out.padded.assign(g.num_types(), false);
    out.empty.assign(g.num_types(), false);
    std::vector<std::vector<TypedNeighborSet::Entry>> by_type(g.num_types());
    for (auto [v, c] : counts) by_type[g.type_of(v)].push_back({v, c});
    for (TypeId t = 0; t < g.num_types(); ++t) {
        auto& list = by_type[t];
        std::stable_sort(list.begin(), list.end(), [](const auto& a, const auto& b) { return a.count > b.count; });
        const std::size_t k = cfg.k_for(t);
        if (list.empty()) {
            out.empty[t] = true;
            continue;
        }
        auto& dst = out.neighbors[t];
        for (std::size_t i = 0; i < k; ++i) dst.push_back(list[i % list.size()]);
        out.padded[t] = list.size() < k;
    }
    return out;
}

/// Up to `limit` instances of `path` starting at `start`; each step picks
/// uniformly among neighbors along the path's relation that carry the
/// path's next node type. Dead ends drop the instance.
inline std::vector<std::vector<NodeId>> meta_path_walk(const HeteroGraph& g, NodeId start, const MetaPath& path,
                                                       std::size_t limit, Rng& rng) {
    require(start < g.num_nodes(), ErrorCode::validation, "meta_path_walk: start node out of range");
    require(g.type_of(start) == path.anchor_type(), ErrorCode::precondition,
            "meta_path_walk: start node has type '" + g.type_name(g.type_of(start)) + "', path '" + path.name +
                "' starts at '" + g.type_name(path.anchor_type()) + "'");
    std::vector<std::vector<NodeId>> out;
    std::vector<NodeId> valid;
    for (std::size_t inst = 0; inst < limit; ++inst) {
        std::vector<NodeId> seq{start};
        bool dead = false;
        for (std::size_t i = 0; i < path.length() && !dead; ++i) {
            valid.clear();
            for (NodeId u : g.neighbors(seq.back(), path.relations[i]))
                if (g.type_of(u) == path.node_types[i + 1]) valid.push_back(u);
            if (valid.empty())
                dead = true;
            else
                seq.push_back(valid[rng.index(valid.size())]);
        }
        if (!dead) out.push_back(std::move(seq));
    }
    return out;
}

/// One long walk that repeats a path with matching end types, up to
/// `length` nodes. Stops early at a dead end.
inline std::vector<NodeId> meta_path_walk_cyclic(const HeteroGraph& g, NodeId start, const MetaPath& path,
                                                 std::size_t length, Rng& rng) {
    require(path.symmetric_ends(), ErrorCode::precondition,
            "meta_path_walk_cyclic: path '" + path.name + "' must start and end at the same type");
    require(g.type_of(start) == path.anchor_type(), ErrorCode::precondition,
            "meta_path_walk_cyclic: start node type does not match path '" + path.name + "'");
    std::vector<NodeId> seq{start};
    std::vector<NodeId> valid;
    std::size_t step = 0;
    while (seq.size() < length) {
        const std::size_t i = step % path.length();
        valid.clear();
        for (NodeId u : g.neighbors(seq.back(), path.relations[i]))
            if (g.type_of(u) == path.node_types[i + 1]) valid.push_back(u);
        if (valid.empty()) break;
        seq.push_back(valid[rng.index(valid.size())]);
        ++step;
    }
    return seq;
}

struct HopRings {
    NodeId center = 0;
    std::vector<std::vector<NodeId>> rings;  // rings[i]: distance i + 1, sorted
};

/// Breadth-first rings on the undirected skeleton, distances 1..K.
inline HopRings hop_rings(const HeteroGraph& g, NodeId center, std::size_t K) {
    require(K >= 1, ErrorCode::validation, "hop_rings: K must be >= 1");
    require(center < g.num_nodes(), ErrorCode::validation, "hop_rings: center out of range");
    HopRings out{center, std::vector<std::vector<NodeId>>(K)};
    std::vector<std::size_t> dist(g.num_nodes(), SIZE_MAX);
    std::deque<NodeId> queue{center};
    dist[center] = 0;
    while (!queue.empty()) {
        const NodeId v = queue.front();
        queue.pop_front();
        if (dist[v] == K) continue;
        for (NodeId u : g.skeleton_neighbors(v)) {
            if (dist[u] != SIZE_MAX) continue;
            dist[u] = dist[v] + 1;
            out.rings[dist[u] - 1].push_back(u);
            queue.push_back(u);
        }
    }
    for (auto& r : out.rings) std::sort(r.begin(), r.end());
    return out;
}

inline std::vector<HopRings> all_hop_rings(const HeteroGraph& g, std::size_t K) {
    std::vector<HopRings> out;
    out.reserve(g.num_nodes());
    for (NodeId v = 0; v < g.num_nodes(); ++v) out.push_back(hop_rings(g, v, K));
    return out;
}

struct Triple {
    NodeId a, b, neg;
    bool operator==(const Triple&) const = default;
};

struct TripleSet {
    std::vector<Triple> triples;
    const MetaPath* meta_path = nullptr;
};

/// Triples from given walks: each ordered pair (a, b) of distinct nodes at
/// most `window` positions apart with type(b) = `target` yields
/// `negatives` triples whose b' is uniform over target-type nodes other
/// than b.
inline std::vector<Triple> triples_from_walk(const HeteroGraph& g, std::span<const NodeId> walk, TypeId target,
                                             std::size_t window, std::size_t negatives, Rng& rng) {
    std::vector<Triple> out;
    if (window == 0 || negatives == 0) return out;
    const auto pool = g.nodes_of_type(target);
    require(pool.size() >= 2, ErrorCode::sampling,
            "sample_triples: type '" + g.type_name(target) + "' has a single node, negative sampling impossible");
    for (std::size_t i = 0; i < walk.size(); ++i) {
        const std::size_t lo = i >= window ? i - window : 0;
        const std::size_t hi = std::min(walk.size() - 1, i + window);
        for (std::size_t j = lo; j <= hi; ++j) {
            if (j == i || walk[i] == walk[j] || g.type_of(walk[j]) != target) continue;
            // uniform over pool \ {b}: draw one of |pool| - 1 slots and step over b
            const auto pos_b = static_cast<std::size_t>(std::lower_bound(pool.begin(), pool.end(), walk[j]) - pool.begin());
            for (std::size_t n = 0; n < negatives; ++n) {
                std::size_t r = rng.index(pool.size() - 1);
                if (r >= pos_b) ++r;
                out.push_back({walk[i], walk[j], pool[r]});
            }
        }
    }
    return out;
}

/// Meta-path triples: walks_per_node cyclic walks of walk_length nodes from
/// every anchor-type node, each with its own RNG stream, merged in start
/// order.
inline TripleSet sample_triples(const HeteroGraph& g, const MetaPath& path, std::size_t window,
                                std::size_t negatives, const WalkConfig& cfg, std::size_t workers = 1) {
    validate_meta_path(g, path);
    TripleSet out;
    out.meta_path = &path;
    if (window == 0) return out;
    const auto starts = g.nodes_of_type(path.anchor_type());
    std::vector<std::vector<Triple>> per_start(starts.size());
    parallel_for(starts.size(), workers, [&](std::size_t si) {
        const NodeId s = starts[si];
        for (std::size_t w = 0; w < cfg.walks_per_node; ++w) {
            Rng walk_rng = Rng::for_stream({cfg.seed, stream_tag::meta_path, s, w});
            Rng neg_rng = Rng::for_stream({cfg.seed, stream_tag::negatives, s, w});
            const auto walk = meta_path_walk_cyclic(g, s, path, cfg.walk_length, walk_rng);
            auto t = triples_from_walk(g, walk, path.terminal_type(), window, negatives, neg_rng);
            per_start[si].insert(per_start[si].end(), t.begin(), t.end());
        }
    });
    for (auto& t : per_start) out.triples.insert(out.triples.end(), t.begin(), t.end());
    return out;
}

/// RWR neighbor sets for every node, one RNG stream per (node, walk).
inline std::vector<TypedNeighborSet> sample_neighbors(const HeteroGraph& g, const WalkConfig& cfg,
                                                      std::size_t workers = 1) {
    cfg.validate();
    std::vector<TypedNeighborSet> out(g.num_nodes());
    parallel_for(g.num_nodes(), workers, [&](std::size_t i) {
        const auto v = static_cast<NodeId>(i);
        std::vector<std::vector<NodeId>> walks;
        for (std::size_t w = 0; w < cfg.walks_per_node; ++w) {
            Rng rng = Rng::for_stream({cfg.seed, stream_tag::rwr, v, w});
            walks.push_back(rwr_walk(g, v, cfg, rng));
        }
        out[i] = typed_top_k(walks, v, g, cfg);
    });
    return out;
}

inline void dump_neighbor_sets(const std::string& path, const HeteroGraph& g,
                               const std::vector<TypedNeighborSet>& sets) {
    std::ofstream out(path);
    require(out.good(), ErrorCode::io, "cannot write '" + path + "'");
    out << "owner\ttype\tneighbor\tcount\n";
    for (const auto& s : sets)
        for (TypeId t = 0; t < s.neighbors.size(); ++t)
            for (const auto& e : s.neighbors[t])
                out << g.original_id(s.owner) << '\t' << g.type_name(t) << '\t' << g.original_id(e.node) << '\t'
                    << e.count << '\n';
}

inline void dump_triples(const std::string& path, const HeteroGraph& g, const TripleSet& ts) {
    std::ofstream out(path);
    require(out.good(), ErrorCode::io, "cannot write '" + path + "'");
    out << "a\tb\tnegative\n";
    for (const auto& t : ts.triples)
        out << g.original_id(t.a) << '\t' << g.original_id(t.b) << '\t' << g.original_id(t.neg) << '\n';
}

} // namespace mapn
