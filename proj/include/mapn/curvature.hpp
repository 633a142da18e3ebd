#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <vector>

#include "mapn/error.hpp"
#include "mapn/graph.hpp"

namespace mapn {

/// Balanced transportation problem: supply[i] at source i, demand[j] at
/// sink j, unit cost cost[i][j]. Solved exactly by successive shortest
/// paths (Bellman-Ford on the residual network). With integer masses every
/// intermediate quantity is an integer, so the optimum is exact.
struct TransportSolution {
    double cost = 0.0;
    std::vector<std::vector<double>> plan;
    double residual = 0.0;  // max violation of row/column marginals
    std::size_t augmentations = 0;
};

inline TransportSolution solve_transport(const std::vector<double>& supply, const std::vector<double>& demand,
                                         const std::vector<std::vector<double>>& cost) {
    const std::size_t m = supply.size(), n = demand.size();
    require(m > 0 && n > 0, ErrorCode::validation, "transport: empty support");
    double ts = 0.0, td = 0.0;
    for (double s : supply) ts += s;
    for (double d : demand) td += d;
    require(std::abs(ts - td) <= 1e-9 * std::max(1.0, ts), ErrorCode::validation, "transport: unbalanced masses");

    // nodes: 0 = source, 1..m sources, m+1..m+n sinks, m+n+1 = sink
    const std::size_t V = m + n + 2, S = 0, T = m + n + 1;
    struct Arc {
        std::size_t to, rev;
        double cap, cost;
    };
    std::vector<std::vector<Arc>> adj(V);
    auto add = [&](std::size_t u, std::size_t v, double cap, double c) {
        adj[u].push_back({v, adj[v].size(), cap, c});
        adj[v].push_back({u, adj[u].size() - 1, 0.0, -c});
    };
    for (std::size_t i = 0; i < m; ++i) add(S, 1 + i, supply[i], 0.0);
    for (std::size_t j = 0; j < n; ++j) add(1 + m + j, T, demand[j], 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) add(1 + i, 1 + m + j, std::numeric_limits<double>::infinity(), cost[i][j]);

    const double eps = 1e-12 * std::max(1.0, ts);
    TransportSolution sol;
    double remaining = ts;
    while (remaining > eps) {
        std::vector<double> dist(V, std::numeric_limits<double>::infinity());
        std::vector<std::size_t> prev_node(V, SIZE_MAX), prev_arc(V, SIZE_MAX);
        dist[S] = 0.0;
        for (std::size_t round = 0; round + 1 < V; ++round) {
            bool changed = false;
            for (std::size_t u = 0; u < V; ++u) {
                if (dist[u] == std::numeric_limits<double>::infinity()) continue;
                for (std::size_t k = 0; k < adj[u].size(); ++k) {
                    const Arc& a = adj[u][k];
                    if (a.cap > eps && dist[u] + a.cost < dist[a.to] - 1e-12) {
                        dist[a.to] = dist[u] + a.cost;
                        prev_node[a.to] = u;
                        prev_arc[a.to] = k;
                        changed = true;
                    }
                }
            }
            if (!changed) break;
        }
        require(dist[T] < std::numeric_limits<double>::infinity(), ErrorCode::numeric, "transport: no augmenting path");
        double push = remaining;
        for (std::size_t v = T; v != S; v = prev_node[v]) push = std::min(push, adj[prev_node[v]][prev_arc[v]].cap);
        for (std::size_t v = T; v != S; v = prev_node[v]) {
            Arc& a = adj[prev_node[v]][prev_arc[v]];
            a.cap -= push;
            adj[a.to][a.rev].cap += push;
        }
        sol.cost += push * dist[T];
        remaining -= push;
        ++sol.augmentations;
    }

    sol.plan.assign(m, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < m; ++i)
        for (const Arc& a : adj[1 + i])
            if (a.to > m && a.to <= m + n) sol.plan[i][a.to - 1 - m] = adj[a.to][a.rev].cap;
    for (std::size_t i = 0; i < m; ++i) {
        double r = 0.0;
        for (double x : sol.plan[i]) r += x;
        sol.residual = std::max(sol.residual, std::abs(r - supply[i]));
    }
    for (std::size_t j = 0; j < n; ++j) {
        double c = 0.0;
        for (std::size_t i = 0; i < m; ++i) c += sol.plan[i][j];
        sol.residual = std::max(sol.residual, std::abs(c - demand[j]));
    }
    return sol;
}

/// Hop distances from `src` on the skeleton, capped at `cap` (farther
/// nodes report cap + 1).
inline std::vector<std::size_t> capped_bfs(const HeteroGraph& g, NodeId src, std::size_t cap) {
    std::vector<std::size_t> dist(g.num_nodes(), cap + 1);
    std::deque<NodeId> q{src};
    dist[src] = 0;
    while (!q.empty()) {
        const NodeId v = q.front();
        q.pop_front();
        if (dist[v] == cap) continue;
        for (NodeId u : g.skeleton_neighbors(v))
            if (dist[u] > dist[v] + 1) {
                dist[u] = dist[v] + 1;
                q.push_back(u);
            }
    }
    return dist;
}

/// Neighborhood measure of v: `laziness` at v, the rest uniform on N(v).
struct Measure {
    std::vector<NodeId> support;
    std::vector<double> mass;
};

inline Measure neighborhood_measure(const HeteroGraph& g, NodeId v, double laziness) {
    const auto nb = g.skeleton_neighbors(v);
    require(!nb.empty(), ErrorCode::validation, "curvature: node " + g.original_id(v) + " has no neighbors");
    Measure m;
    if (laziness > 0.0) {
        m.support.push_back(v);
        m.mass.push_back(laziness);
    }
    for (NodeId u : nb) {
        m.support.push_back(u);
        m.mass.push_back((1.0 - laziness) / static_cast<double>(nb.size()));
    }
    return m;
}

struct EdgeCurvature {
    NodeId a = 0, b = 0;
    double kappa = 0.0;
    double w1 = 0.0;
    double residual = 0.0;
    std::size_t augmentations = 0;
};

/// Wasserstein-1 distance between the neighborhood measures of a and b.
/// Without laziness the masses are scaled by deg(a) * deg(b), which makes
/// them integers.
inline EdgeCurvature ollivier_ricci(const HeteroGraph& g, NodeId a, NodeId b, double laziness = 0.0) {
    require(a < g.num_nodes() && b < g.num_nodes(), ErrorCode::validation, "curvature: node out of range");
    const auto na = g.skeleton_neighbors(a);
    require(std::binary_search(na.begin(), na.end(), b), ErrorCode::validation,
            "curvature: (" + g.original_id(a) + ", " + g.original_id(b) + ") is not an edge");
    require(laziness >= 0.0 && laziness < 1.0, ErrorCode::usage, "curvature: laziness must lie in [0, 1)");
    Measure ma = neighborhood_measure(g, a, laziness), mb = neighborhood_measure(g, b, laziness);
    double scale = 1.0;
    if (laziness == 0.0) {
        const double da = static_cast<double>(ma.support.size()), db = static_cast<double>(mb.support.size());
        scale = da * db;
        for (auto& x : ma.mass) x = db;
        for (auto& x : mb.mass) x = da;
    }
    std::vector<std::vector<double>> cost(ma.support.size(), std::vector<double>(mb.support.size()));
    for (std::size_t i = 0; i < ma.support.size(); ++i) {
        const auto dist = capped_bfs(g, ma.support[i], 3);
        for (std::size_t j = 0; j < mb.support.size(); ++j) cost[i][j] = static_cast<double>(dist[mb.support[j]]);
    }
    const auto sol = solve_transport(ma.mass, mb.mass, cost);
    EdgeCurvature out{a, b, 0.0, sol.cost / scale, sol.residual / scale, sol.augmentations};
    out.kappa = 1.0 - out.w1;
    return out;
}

struct CurvatureReport {
    std::vector<EdgeCurvature> edges;  // skeleton edges with a < b
    double min = 0.0, mean = 0.0, max = 0.0;
    double max_residual = 0.0;
    std::size_t augmentations = 0;
};

inline CurvatureReport curvature_report(const HeteroGraph& g, double laziness = 0.0) {
    CurvatureReport r;
    r.min = std::numeric_limits<double>::infinity();
    r.max = -std::numeric_limits<double>::infinity();
    for (NodeId a = 0; a < g.num_nodes(); ++a)
        for (NodeId b : g.skeleton_neighbors(a)) {
            if (b <= a) continue;
            r.edges.push_back(ollivier_ricci(g, a, b, laziness));
            const auto& e = r.edges.back();
            r.min = std::min(r.min, e.kappa);
            r.max = std::max(r.max, e.kappa);
            r.mean += e.kappa;
            r.max_residual = std::max(r.max_residual, e.residual);
            r.augmentations += e.augmentations;
        }
    if (r.edges.empty()) {
        r.min = r.max = 0.0;
        return r;
    }
    r.mean /= static_cast<double>(r.edges.size());
    return r;
}

} // namespace mapn
