#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "mapn/error.hpp"
#include "mapn/graph.hpp"
#include "mapn/rng.hpp"

namespace mapn {

enum class SyntheticKind { homophilous_sbm, heterophilous_sbm, hetero_academic };

inline SyntheticKind parse_synthetic_kind(const std::string& s) {
    if (s == "homophilous-sbm") return SyntheticKind::homophilous_sbm;
    if (s == "heterophilous-sbm") return SyntheticKind::heterophilous_sbm;
    if (s == "hetero-academic") return SyntheticKind::hetero_academic;
    fail(ErrorCode::usage, "unknown synthetic kind '" + s + "'");
}

struct SyntheticSpec {
    SyntheticKind kind = SyntheticKind::homophilous_sbm;
    std::size_t n_nodes = 90;
    std::size_t n_classes = 3;
    double p_in = 0.3;
    double p_out = 0.02;
    std::size_t feature_dim = 8;
    std::uint64_t seed = 7;
    /// Separation of class means relative to unit feature noise.
    double feature_signal = 1.0;
    double feature_noise = 1.0;

    /// Defaults for a kind. The heterophilous SBM swaps p_in and p_out and
    /// weakens the class signal in the features, so that labels are mostly
    /// recoverable from multi-hop neighborhoods rather than from x alone.
    static SyntheticSpec for_kind(SyntheticKind k) {
        SyntheticSpec s;
        s.kind = k;
        if (k == SyntheticKind::heterophilous_sbm) {
            std::swap(s.p_in, s.p_out);
            s.feature_signal = 0.3;
        }
        return s;
    }
};

namespace synth_detail {

/// Class means drawn once per class; node features are mean + noise.
inline std::vector<std::vector<double>> class_means(std::size_t classes, std::size_t dim, double signal, Rng& rng) {
    std::vector<std::vector<double>> mu(classes, std::vector<double>(dim));
    for (auto& m : mu)
        for (auto& x : m) x = signal * rng.normal();
    return mu;
}

inline ad::Tensor class_features(const std::vector<int>& cls, const std::vector<std::vector<double>>& mu, double noise,
                                 Rng& rng) {
    const std::size_t dim = mu.empty() ? 0 : mu[0].size();
    ad::Tensor f(ad::Shape::mat(cls.size(), dim));
    for (std::size_t i = 0; i < cls.size(); ++i)
        for (std::size_t j = 0; j < dim; ++j) f.values[i * dim + j] = mu[cls[i]][j] + noise * rng.normal();
    return f;
}

inline HeteroGraph sbm(const SyntheticSpec& s) {
    Rng rng(stream_key({s.seed, 0x5b3}));
    GraphBuilder b;
    const TypeId t = b.add_type("node");
    const RelationId r = b.add_relation("link");
    std::vector<int> cls(s.n_nodes);
    for (std::size_t i = 0; i < s.n_nodes; ++i) {
        cls[i] = static_cast<int>(i * s.n_classes / s.n_nodes);
        b.add_node(std::to_string(i), t);
        b.set_label(static_cast<NodeId>(i), cls[i]);
    }
    for (std::size_t i = 0; i < s.n_nodes; ++i)
        for (std::size_t j = i + 1; j < s.n_nodes; ++j)
            if (rng.bernoulli(cls[i] == cls[j] ? s.p_in : s.p_out))
                b.add_edge(static_cast<NodeId>(i), static_cast<NodeId>(j), r);
    const auto mu = class_means(s.n_classes, s.feature_dim, s.feature_signal, rng);
    b.set_features(t, class_features(cls, mu, s.feature_noise, rng));
    return b.build();
}

/// Authors, papers and venues with planted communities. Papers make up
/// half the nodes, authors a third, venues the rest (at least one per
/// class). Authorship follows p_in/p_out; every paper has exactly one venue,
/// chosen within its community with probability p_in / (p_in + p_out).
inline HeteroGraph academic(const SyntheticSpec& s) {
    Rng rng(stream_key({s.seed, 0xacad}));
    GraphBuilder b;
    const TypeId author = b.add_type("author");
    const TypeId paper = b.add_type("paper");
    const TypeId venue = b.add_type("venue");
    const RelationId writes = b.add_relation("writes");
    const RelationId published = b.add_relation("published_in");

    const std::size_t n_papers = s.n_nodes / 2;
    const std::size_t n_venues = std::max(s.n_classes, s.n_nodes / 6);
    require(s.n_nodes > n_papers + n_venues, ErrorCode::validation, "hetero-academic: too few nodes");
    const std::size_t n_authors = s.n_nodes - n_papers - n_venues;

    auto make = [&](TypeId t, std::size_t count, const std::string& prefix) {
        std::vector<NodeId> ids;
        std::vector<int> cls;
        for (std::size_t i = 0; i < count; ++i) {
            const NodeId v = b.add_node(prefix + std::to_string(i), t);
            const int c = static_cast<int>(i * s.n_classes / count);
            b.set_label(v, c);
            ids.push_back(v);
            cls.push_back(c);
        }
        return std::make_pair(ids, cls);
    };
    const auto [authors, author_cls] = make(author, n_authors, "a");
    const auto [papers, paper_cls] = make(paper, n_papers, "p");
    const auto [venues, venue_cls] = make(venue, n_venues, "v");

    for (std::size_t i = 0; i < n_authors; ++i) {
        bool any = false;
        for (std::size_t j = 0; j < n_papers; ++j)
            if (rng.bernoulli(author_cls[i] == paper_cls[j] ? s.p_in : s.p_out)) {
                b.add_edge(authors[i], papers[j], writes);
                any = true;
            }
        if (!any) {
            // every author writes at least one paper from their community
            std::vector<std::size_t> same;
            for (std::size_t j = 0; j < n_papers; ++j)
                if (paper_cls[j] == author_cls[i]) same.push_back(j);
            b.add_edge(authors[i], papers[same[rng.index(same.size())]], writes);
        }
    }
    const double stay = s.p_in + s.p_out > 0 ? s.p_in / (s.p_in + s.p_out) : 0.5;
    for (std::size_t j = 0; j < n_papers; ++j) {
        std::vector<std::size_t> pool;
        const bool within = rng.bernoulli(stay);
        for (std::size_t k = 0; k < n_venues; ++k)
            if ((venue_cls[k] == paper_cls[j]) == within) pool.push_back(k);
        if (pool.empty())
            for (std::size_t k = 0; k < n_venues; ++k) pool.push_back(k);
        b.add_edge(papers[j], venues[pool[rng.index(pool.size())]], published);
    }

    const std::size_t d = s.feature_dim;
    b.set_features(author, class_features(author_cls, class_means(s.n_classes, d, s.feature_signal, rng),
                                          s.feature_noise, rng));
    b.set_features(paper, class_features(paper_cls, class_means(s.n_classes, d + d / 2, s.feature_signal, rng),
                                         s.feature_noise, rng));
    b.set_features(venue, class_features(venue_cls, class_means(s.n_classes, std::max<std::size_t>(2, d / 2),
                                                                s.feature_signal, rng),
                                         s.feature_noise, rng));
    return b.build();
}

} // namespace synth_detail

/// Seed-deterministic synthetic graphs with class labels.
inline HeteroGraph generate_synthetic(const SyntheticSpec& s) {
    require(s.p_in >= 0.0 && s.p_in <= 1.0 && s.p_out >= 0.0 && s.p_out <= 1.0, ErrorCode::validation,
            "generate_synthetic: probabilities must lie in [0, 1]");
    require(s.n_classes >= 2 && s.n_nodes >= s.n_classes, ErrorCode::validation,
            "generate_synthetic: need n_nodes >= n_classes >= 2");
    require(s.feature_dim >= 1, ErrorCode::validation, "generate_synthetic: feature_dim must be positive");
    switch (s.kind) {
    case SyntheticKind::homophilous_sbm:
        require(s.p_in > s.p_out, ErrorCode::validation, "homophilous-sbm: need p_in > p_out");
        return synth_detail::sbm(s);
    case SyntheticKind::heterophilous_sbm:
        require(s.p_in < s.p_out, ErrorCode::validation, "heterophilous-sbm: need p_in < p_out");
        return synth_detail::sbm(s);
    case SyntheticKind::hetero_academic:
        return synth_detail::academic(s);
    }
    fail(ErrorCode::usage, "generate_synthetic: unknown kind");
}

/// Cycle C_n with optional i.i.d. Gaussian features.
inline HeteroGraph make_cycle(std::size_t n, std::size_t feature_dim = 1, std::uint64_t seed = 0) {
    GraphBuilder b;
    const TypeId t = b.add_type("node");
    const RelationId r = b.add_relation("link");
    for (std::size_t i = 0; i < n; ++i) b.add_node(t);
    for (std::size_t i = 0; i < n; ++i) b.add_edge(static_cast<NodeId>(i), static_cast<NodeId>((i + 1) % n), r);
    Rng rng(seed);
    ad::Tensor f(ad::Shape::mat(n, feature_dim));
    for (auto& x : f.values) x = rng.normal();
    b.set_features(t, std::move(f));
    return b.build();
}

/// Circulant graph: i ~ i +- j (mod n) for every jump j. A jump of n/2
/// (n even) contributes one neighbor instead of two.
inline HeteroGraph make_circulant(std::size_t n, const std::vector<std::size_t>& jumps, std::size_t feature_dim = 1,
                                  std::uint64_t seed = 0) {
    GraphBuilder b;
    const TypeId t = b.add_type("node");
    const RelationId r = b.add_relation("link");
    for (std::size_t i = 0; i < n; ++i) b.add_node(t);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j : jumps) {
            const std::size_t k = (i + j) % n;
            if (2 * j == n && k < i) continue;
            b.add_edge(static_cast<NodeId>(i), static_cast<NodeId>(k), r);
        }
    Rng rng(seed);
    ad::Tensor f(ad::Shape::mat(n, feature_dim));
    for (auto& x : f.values) x = rng.normal();
    b.set_features(t, std::move(f));
    return b.build();
}

inline HeteroGraph make_complete(std::size_t n, std::size_t feature_dim = 1, std::uint64_t seed = 0) {
    GraphBuilder b;
    const TypeId t = b.add_type("node");
    const RelationId r = b.add_relation("link");
    for (std::size_t i = 0; i < n; ++i) b.add_node(t);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) b.add_edge(static_cast<NodeId>(i), static_cast<NodeId>(j), r);
    Rng rng(seed);
    ad::Tensor f(ad::Shape::mat(n, feature_dim));
    for (auto& x : f.values) x = rng.normal();
    b.set_features(t, std::move(f));
    return b.build();
}

/// Homogeneous graph from an undirected edge list with random features.
inline HeteroGraph make_from_edges(std::size_t n, const std::vector<std::pair<NodeId, NodeId>>& edges,
                                   std::size_t feature_dim = 1, std::uint64_t seed = 0) {
    GraphBuilder b;
    const TypeId t = b.add_type("node");
    const RelationId r = b.add_relation("link");
    for (std::size_t i = 0; i < n; ++i) b.add_node(t);
    for (auto [u, v] : edges) b.add_edge(u, v, r);
    Rng rng(seed);
    ad::Tensor f(ad::Shape::mat(n, feature_dim));
    for (auto& x : f.values) x = rng.normal();
    b.set_features(t, std::move(f));
    return b.build();
}

/// Labeled corpus of cycles (label 0) and stars (label 1) with noisy
/// features, sizes drawn from [min_nodes, max_nodes].
inline std::vector<HeteroGraph> make_cycle_star_corpus(std::size_t per_class, std::size_t min_nodes,
                                                       std::size_t max_nodes, std::size_t feature_dim,
                                                       std::uint64_t seed) {
    Rng rng(stream_key({seed, 0xc0de}));
    std::vector<HeteroGraph> out;
    for (std::size_t i = 0; i < 2 * per_class; ++i) {
        const bool star = i % 2 == 1;
        const std::size_t n = min_nodes + rng.index(max_nodes - min_nodes + 1);
        std::vector<std::pair<NodeId, NodeId>> edges;
        for (std::size_t k = 1; k < n; ++k)
            edges.emplace_back(star ? 0 : static_cast<NodeId>(k - 1), static_cast<NodeId>(k));
        if (!star) edges.emplace_back(static_cast<NodeId>(n - 1), 0);
        out.push_back(GraphBuilder::with_graph_label(make_from_edges(n, edges, feature_dim, rng.next_u64()),
                                                     star ? 1 : 0));
    }
    return out;
}

} // namespace mapn
