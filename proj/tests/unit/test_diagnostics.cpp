#include <gtest/gtest.h>

#include <Eigen/QR>
#include <cmath>

#include "mapn/mapn.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace mapn;
using ad::Shape;
using ad::Tensor;
using testing_support::error_code_of;
using testing_support::random_graph;

namespace {

struct EdgeGraph {
    HeteroGraph graph;
    oracle::Adjacency adj;
};

EdgeGraph from_edges(std::size_t n, const std::vector<std::pair<NodeId, NodeId>>& edges, std::size_t fd = 1) {
    oracle::Adjacency adj(n, std::vector<int>(n, 0));
    for (auto [a, b] : edges) adj[a][b] = adj[b][a] = 1;
    return {make_from_edges(n, edges, fd, 1), adj};
}

std::vector<std::pair<NodeId, NodeId>> complete_edges(std::size_t n) {
    std::vector<std::pair<NodeId, NodeId>> e;
    for (NodeId i = 0; i < n; ++i)
        for (NodeId j = i + 1; j < n; ++j) e.emplace_back(i, j);
    return e;
}

std::vector<std::pair<NodeId, NodeId>> cycle_edges(std::size_t n) {
    std::vector<std::pair<NodeId, NodeId>> e;
    for (NodeId i = 0; i < n; ++i) e.emplace_back(i, (i + 1) % n);
    return e;
}

void expect_curvature_matches_oracle(const EdgeGraph& eg) {
    const std::size_t n = eg.adj.size();
    for (NodeId a = 0; a < n; ++a)
        for (NodeId b = a + 1; b < n; ++b) {
            if (!eg.adj[a][b]) continue;
            const auto e = ollivier_ricci(eg.graph, a, b);
            EXPECT_NEAR(e.kappa, oracle::ollivier_ricci(eg.adj, a, b), 1e-9) << a << "-" << b;
            EXPECT_LT(e.residual, 1e-9);
        }
}

Tensor random_tensor(Shape s, Rng& rng, double scale = 1.0) {
    Tensor t(s);
    for (auto& x : t.values) x = rng.uniform(-scale, scale);
    return t;
}

// Q / sqrt(d) with Q a random orthogonal matrix: entrywise 2-norm exactly 1.
Tensor scaled_orthogonal(std::size_t d, Rng& rng) {
    Eigen::MatrixXd m(d, d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) m(i, j) = rng.normal();
    const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(m).householderQ();
    Tensor t(Shape::mat(d, d));
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) t.values[i * d + j] = q(i, j) / std::sqrt(static_cast<double>(d));
    return t;
}

// Random K-regular circulant on n nodes.
HeteroGraph random_circulant(std::size_t K, Rng& rng, std::size_t& n_out) {
    std::size_t n = 0;
    std::vector<std::size_t> jumps;
    while (true) {
        n = 2 * (3 + rng.index(4));  // even, 6..12
        jumps.clear();
        std::vector<std::size_t> pool;
        for (std::size_t j = 1; 2 * j < n; ++j) pool.push_back(j);
        for (std::size_t i = pool.size() - 1; i > 0; --i) std::swap(pool[i], pool[rng.index(i + 1)]);
        if (pool.size() < K / 2) continue;
        jumps.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(K / 2));
        if (K % 2 == 1) jumps.push_back(n / 2);
        break;
    }
    n_out = n;
    return make_circulant(n, jumps);
}

} // namespace

TEST(Curvature, CompleteTriangleMatchesEnumeration) {
    const auto eg = from_edges(3, complete_edges(3));
    expect_curvature_matches_oracle(eg);
    // N(0) = {1, 2}, N(1) = {0, 2}: move 1 -> 0 at cost 1, half the mass
    EXPECT_NEAR(ollivier_ricci(eg.graph, 0, 1).kappa, 0.5, 1e-12);
}

TEST(Curvature, LongCycleMatchesEnumeration) {
    const auto eg = from_edges(8, cycle_edges(8));
    expect_curvature_matches_oracle(eg);
    const auto r = curvature_report(eg.graph);
    EXPECT_NEAR(r.min, r.max, 1e-12);
    EXPECT_EQ(r.edges.size(), 8u);
}

TEST(Curvature, RandomGraphsMatchEnumeration) {
    Rng rng(11);
    int checked = 0;
    while (checked < 40) {
        const std::size_t n = 4 + rng.index(7);
        const auto rg = random_graph(n, rng.uniform(0.2, 0.6), rng);
        if (testing_support::max_degree(rg.adj) > 6) continue;
        expect_curvature_matches_oracle({rg.graph, rg.adj});
        ++checked;
    }
}

TEST(Curvature, TransportDistanceIsSymmetric) {
    Rng rng(12);
    for (int trial = 0; trial < 30; ++trial) {
        const auto rg = random_graph(9, 0.35, rng);
        for (NodeId a = 0; a < 9; ++a)
            for (NodeId b : rg.graph.skeleton_neighbors(a))
                EXPECT_NEAR(ollivier_ricci(rg.graph, a, b).w1, ollivier_ricci(rg.graph, b, a).w1, 1e-9);
    }
}

TEST(Curvature, DenseRandomGraphsStayInClaimedRange) {
    Rng rng(13);
    int checked = 0;
    while (checked < 30) {
        const auto rg = random_graph(8 + rng.index(5), 0.4, rng);
        if (!testing_support::connected(rg.adj) || testing_support::max_degree(rg.adj) > 6) continue;
        for (const auto& e : curvature_report(rg.graph).edges) {
            EXPECT_GT(e.kappa, -1.0);
            EXPECT_LT(e.kappa, 2.0);
        }
        ++checked;
    }
}

// Two degree-4 hubs joined by a bridge, leaves elsewhere. With the non-lazy
// measure the edge reaches -1, the edge of the claimed open range.
TEST(Curvature, TreeBridgeReachesMinusOne) {
    std::vector<std::pair<NodeId, NodeId>> e{{0, 1}};
    for (NodeId leaf = 2; leaf < 5; ++leaf) e.emplace_back(0, leaf);
    for (NodeId leaf = 5; leaf < 8; ++leaf) e.emplace_back(1, leaf);
    const auto eg = from_edges(8, e);
    EXPECT_NEAR(oracle::ollivier_ricci(eg.adj, 0, 1), -1.0, 1e-12);
    EXPECT_NEAR(ollivier_ricci(eg.graph, 0, 1).kappa, -1.0, 1e-9);
}

TEST(Curvature, RejectsNonEdgesAndBadLaziness) {
    const auto eg = from_edges(4, {{0, 1}, {1, 2}, {2, 3}});
    EXPECT_EQ(error_code_of([&] { ollivier_ricci(eg.graph, 0, 2); }), ErrorCode::validation);
    EXPECT_EQ(error_code_of([&] { ollivier_ricci(eg.graph, 0, 9); }), ErrorCode::validation);
    EXPECT_EQ(error_code_of([&] { ollivier_ricci(eg.graph, 0, 1, 1.0); }), ErrorCode::usage);
}

TEST(Curvature, LazyMeasureOnTriangle) {
    const auto eg = from_edges(3, complete_edges(3));
    // half the mass stays home; only a quarter moves from 0 to 1
    EXPECT_NEAR(ollivier_ricci(eg.graph, 0, 1, 0.5).kappa, 0.75, 1e-12);
    // on a cycle shifting everything by one step stays optimal
    const auto cyc = from_edges(8, cycle_edges(8));
    EXPECT_NEAR(ollivier_ricci(cyc.graph, 0, 1, 0.5).kappa, 0.0, 1e-12);
}

TEST(Transport, SolvesSmallProblemExactly) {
    const std::vector<std::vector<double>> cost{{0, 2, 1}, {3, 1, 2}};
    const auto sol = solve_transport({2, 3}, {1, 2, 2}, cost);
    oracle::TransportEnumerator t({2, 3}, {1, 2, 2}, cost);
    EXPECT_NEAR(sol.cost, t.solve(), 1e-12);
    for (std::size_t i = 0; i < 2; ++i) {
        double row = 0;
        for (double x : sol.plan[i]) row += x;
        EXPECT_NEAR(row, i == 0 ? 2.0 : 3.0, 1e-12);
    }
    EXPECT_EQ(error_code_of([&] { solve_transport({1}, {2}, {{0}}); }), ErrorCode::validation);
}

TEST(Jacobian, OneLayerMeanIsScaledIdentityOnTheBall) {
    const std::size_t K = 3, d = 2;
    const HeteroGraph g = make_circulant(8, {1, 4}, d);
    const MeanModel m{{}, Activation::identity, 1};
    Rng rng(14);
    const auto J = layer_jacobian(m, g, random_tensor(Shape::mat(8, d), rng), 1, 0);
    for (NodeId a = 0; a < 8; ++a) {
        const auto nb = g.skeleton_neighbors(a);
        for (NodeId b = 0; b < 8; ++b) {
            const bool in_ball = a == b || std::find(nb.begin(), nb.end(), b) != nb.end();
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t j = 0; j < d; ++j)
                    EXPECT_DOUBLE_EQ(J.at(a, b, i, j), in_ball && i == j ? 1.0 / (K + 1) : 0.0);
            EXPECT_NEAR(J.norm(a, b, 2.0), in_ball ? std::sqrt(2.0) / (K + 1) : 0.0, 1e-15);
        }
    }
}

TEST(Jacobian, ZeroOutsideTheReceptiveField) {
    const HeteroGraph g = make_cycle(12, 2);
    Rng rng(15);
    const Tensor h0 = random_tensor(Shape::mat(12, 2), rng);
    MeanModel m{{random_tensor(Shape::mat(2, 2), rng), random_tensor(Shape::mat(2, 2), rng),
                 random_tensor(Shape::mat(2, 2), rng)},
                Activation::tanh, 3};
    const auto norms = jacobian_norms(m, g, h0, 3, 0, 0);
    for (NodeId a = 0; a < 12; ++a) {
        const std::size_t dist = std::min<std::size_t>(a, 12 - a);
        if (dist > 3)
            EXPECT_EQ(norms[a], 0.0) << a;
        else
            EXPECT_GT(norms[a], 0.0) << a;
    }
}

TEST(Jacobian, MatchesFiniteDifferences) {
    Rng rng(16);
    for (auto act : {Activation::identity, Activation::tanh, Activation::leaky_relu}) {
        const auto rg = random_graph(6, 0.5, rng);
        const std::size_t n = 6, d = 3;
        MeanModel m{{random_tensor(Shape::mat(d, d), rng), random_tensor(Shape::mat(d, d), rng)}, act, 2};
        const Tensor h0 = random_tensor(Shape::mat(n, d), rng);
        const auto P = mean_operator(rg.graph);
        auto f = [&](const std::vector<double>& x) {
            const auto hs = mean_model_forward(m, P, ad::Value::constant(Tensor(Shape::mat(n, d), x)), 0, 2);
            return hs.back().data().values;
        };
        const auto fd = oracle::fd_jacobian(f, h0.values);
        const auto J = layer_jacobian(m, rg.graph, h0, 2, 0);
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = 0; b < n; ++b)
                for (std::size_t i = 0; i < d; ++i)
                    for (std::size_t j = 0; j < d; ++j)
                        EXPECT_NEAR(J.at(a, b, i, j), fd[a * d + i][b * d + j], 1e-6);
    }
}

TEST(Jacobian, RejectsBadLayerOrder) {
    const HeteroGraph g = make_cycle(5);
    EXPECT_EQ(error_code_of([&] { layer_jacobian({{}, Activation::identity, 2}, g, Tensor(Shape::mat(5, 1)), 1, 1); }),
              ErrorCode::validation);
}

TEST(Theorem1, ConstantForUnitLipschitzOnCycles) { EXPECT_DOUBLE_EQ(theorem1_constant(1.0, 1.0, 2), 4.0 / 9.0); }

TEST(Theorem1, HoldsOnCirculantWithUnitNormIdentity) {
    const std::size_t d = 4;
    const HeteroGraph g = make_circulant(8, {1, 4}, d);
    Tensor w(Shape::mat(d, d));
    for (std::size_t i = 0; i < d; ++i) w.values[i * d + i] = 0.5;
    const MeanModel m{{w, w, w, w}, Activation::identity, 4};
    Rng rng(17);
    const Tensor h0 = random_tensor(Shape::mat(8, d), rng);
    for (std::size_t l = 2; l <= 4; ++l) {
        const auto r = theorem1_check(m, g, h0, l, 0, 0);
        EXPECT_NEAR(r.c, 1.0, 1e-15);
        EXPECT_NEAR(r.C, 9.0 / 16.0, 1e-15);
        EXPECT_TRUE(r.holds) << "l=" << l << " lhs=" << r.lhs << " C*rhs=" << r.C * r.rhs;
    }
}

TEST(Theorem1, HoldsForParameterFreeMeanInSeveralDimensions) {
    Rng rng(18);
    for (std::size_t K : {2, 3, 4}) {
        std::size_t n = 0;
        const HeteroGraph g = random_circulant(K, rng, n);
        const std::size_t d = 4;
        const MeanModel m{{}, Activation::identity, 4};
        const Tensor h0 = random_tensor(Shape::mat(n, d), rng);
        for (std::size_t l = 2; l <= 4; ++l) EXPECT_TRUE(theorem1_check(m, g, h0, l, 0, 0).holds) << K << " " << l;
    }
}

// With d = 1 and W = 1 the bound drops the self term of the mean. On a cycle
// (K = 2, C = 4/9) from l' = 0 to l = 2 the ratio is 19/27 by hand:
// P e = (1,1,1)/3, P^2 e = (1,2,3,2,1)/9.
TEST(Theorem1, ScalarMeanOnCycleExceedsTheBound) {
    const HeteroGraph g = make_cycle(9);
    const MeanModel m{{}, Activation::identity, 2};
    const auto r = theorem1_check(m, g, Tensor(Shape::mat(9, 1), 0.3), 2, 0, 4);
    EXPECT_NEAR(r.lhs, 19.0 / 81.0, 1e-14);
    EXPECT_NEAR(r.rhs, 1.0 / 3.0, 1e-14);
    EXPECT_NEAR(r.lhs / r.rhs, 19.0 / 27.0, 1e-14);
    EXPECT_FALSE(r.holds);
}

TEST(Theorem1, HoldsOnRandomCirculantsWithUnitNormWeights) {
    Rng rng(19);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t K = 2 + rng.index(3), d = 4, L = 2 + rng.index(3);
        std::size_t n = 0;
        const HeteroGraph g = random_circulant(K, rng, n);
        MeanModel m{{}, rng.bernoulli(0.5) ? Activation::tanh : Activation::identity, L};
        for (std::size_t l = 0; l < L; ++l) m.weights.push_back(scaled_orthogonal(d, rng));
        const Tensor h0 = random_tensor(Shape::mat(n, d), rng);
        const std::size_t l_from = rng.index(L - 1);
        const auto r = theorem1_check(m, g, h0, L, l_from, static_cast<NodeId>(rng.index(n)));
        EXPECT_LE(r.c, 1.0 + 1e-12);
        EXPECT_TRUE(r.holds) << "trial " << trial << " K=" << K << " n=" << n << " lhs=" << r.lhs
                             << " C*rhs=" << r.C * r.rhs;
    }
}

TEST(Theorem1, NonRegularGraphIsRejected) {
    const HeteroGraph g = make_from_edges(4, {{0, 1}, {0, 2}, {0, 3}});
    try {
        theorem1_check({{}, Activation::identity, 2}, g, Tensor(Shape::mat(4, 1)), 2, 0, 0);
        FAIL() << "no error";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::precondition);
        EXPECT_NE(std::string(e.what()).find("{1:3, 3:1}"), std::string::npos) << e.what();
    }
}

TEST(Theorem2, CompleteGraphMeetsPreconditionAndHolds) {
    const HeteroGraph g = make_complete(5);
    const auto r = theorem2_check(g, 0);
    // each edge keeps 3 shared neighbors and moves the remaining quarter by 1
    EXPECT_NEAR(r.eta, 0.75, 1e-12);
    EXPECT_NEAR(r.threshold, 0.5 - 3.0 / 8.0, 1e-15);
    EXPECT_TRUE(r.precondition);
    EXPECT_TRUE(r.holds);
}

TEST(Theorem2, LongCycleHolds) {
    const HeteroGraph g = make_cycle(16);
    const auto r = theorem2_check(g, 5);
    EXPECT_LT(r.threshold, 0.0);
    EXPECT_TRUE(r.precondition);
    EXPECT_TRUE(r.holds);
    // one-hop: 2 * (2/9), two-hop: 2 * (1/9)
    EXPECT_NEAR(r.one_hop_sum, 4.0 / 9.0, 1e-14);
    EXPECT_NEAR(r.two_hop_sum, 2.0 / 9.0, 1e-14);
}

TEST(Theorem2, PetersenGraphFailsThePrecondition) {
    const std::vector<std::pair<NodeId, NodeId>> e{{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 0}, {0, 5}, {1, 6}, {2, 7},
                                                   {3, 8}, {4, 9}, {5, 7}, {7, 9}, {9, 6}, {6, 8}, {8, 5}};
    const auto eg = from_edges(10, e);
    const auto r = theorem2_check(eg.graph, 0);
    EXPECT_NEAR(r.eta, oracle::ollivier_ricci(eg.adj, 0, 1), 1e-9);
    EXPECT_LT(r.eta, r.threshold);
    EXPECT_FALSE(r.precondition);
}

TEST(Oversmoothing, IdenticalRowsAndNormalization) {
    const Tensor same(Shape::mat(4, 3), 1.5);
    Rng rng(20);
    const Tensor x = random_tensor(Shape::mat(4, 3), rng);
    EXPECT_EQ(oversmoothing_metric({same, same}), (std::vector<double>{0.0, 0.0}));
    const auto m = oversmoothing_metric({x, same});
    EXPECT_DOUBLE_EQ(m[0], 1.0);
    EXPECT_DOUBLE_EQ(m[1], 0.0);
    EXPECT_EQ(error_code_of([&] { oversmoothing_metric({Tensor(Shape::mat(1, 3))}); }), ErrorCode::validation);
}

TEST(Oversmoothing, MeanAggregationContractsWithDepth) {
    Rng rng(21);
    int checked = 0;
    while (checked < 20) {
        const auto rg = random_graph(10 + rng.index(20), 0.25, rng, 4);
        if (!testing_support::connected(rg.adj)) continue;
        const auto m = oversmoothing_metric(mean_smoothing_layers(rg.graph, rg.graph.features(0), 10));
        ASSERT_EQ(m.size(), 11u);
        for (std::size_t l = 1; l < m.size(); ++l) EXPECT_LT(m[l], m[l - 1]) << "layer " << l;
        ++checked;
    }
}

TEST(Oversmoothing, LayerSkipKeepsRepresentationsApart) {
    ModelConfig cfg;
    cfg.ssm_state = 8;
    for (const HeteroGraph& g : {make_cycle(20, 4, 3), generate_synthetic(SyntheticSpec::for_kind(SyntheticKind::homophilous_sbm))}) {
        const auto s = smoothing_comparison(g, 10, cfg, 7);
        ASSERT_EQ(s.with_skip.size(), 11u);
        EXPECT_GT(s.with_skip[10], s.without_skip[10]);
    }
}
