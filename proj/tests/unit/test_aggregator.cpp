#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "mapn/mapn.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace mapn;
using ad::Shape;
using ad::Tensor;
using ad::Value;
using testing_support::error_code_of;

namespace {

std::vector<std::vector<double>> rows_of(const Value& v) {
    const std::size_t n = v.shape()[0], m = v.shape()[1];
    std::vector<std::vector<double>> out(n, std::vector<double>(m));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out[i][j] = v.data().values[i * m + j];
    return out;
}

Value row_value(const std::vector<double>& x) { return Value::constant(Tensor(Shape::mat(1, x.size()), x)); }

Tensor random_tensor(Shape s, Rng& rng, double scale = 1.0) {
    Tensor t(s);
    for (auto& x : t.values) x = rng.uniform(-scale, scale);
    return t;
}

oracle::Lstm lstm_from(const ad::ParamStore& ps, const std::string& prefix) {
    oracle::Lstm l;
    l.in = ps.get(prefix + ".w").shape()[0];
    l.hidden = ps.get(prefix + ".u").shape()[0];
    l.w = ps.get(prefix + ".w").data().values;
    l.u = ps.get(prefix + ".u").data().values;
    l.b = ps.get(prefix + ".b").data().values;
    return l;
}

std::vector<double> bilstm_oracle(const ad::ParamStore& ps, const std::string& prefix,
                                  const std::vector<std::vector<double>>& xs) {
    return oracle::bilstm_mean(lstm_from(ps, prefix + ".fwd"), lstm_from(ps, prefix + ".bwd"), xs);
}

double leaky(double x) { return x >= 0 ? x : 0.01 * x; }

// Two node types on 12 nodes: six authors (3 features), six papers
// (2 features); every paper has two authors.
struct Academic {
    HeteroGraph g;
    std::vector<MetaPath> paths;
};

struct AcademicLayout {
    std::vector<TypeId> type;
    std::vector<std::pair<NodeId, NodeId>> edges;
    std::vector<std::vector<double>> features;
};

AcademicLayout academic_layout(std::uint64_t seed) {
    Rng rng(seed);
    AcademicLayout l;
    for (int i = 0; i < 12; ++i) l.type.push_back(i < 6 ? 0 : 1);
    for (NodeId p = 6; p < 12; ++p) {
        const NodeId a = static_cast<NodeId>(rng.index(6));
        NodeId b = static_cast<NodeId>(rng.index(5));
        if (b >= a) ++b;
        l.edges.emplace_back(a, p);
        l.edges.emplace_back(b, p);
    }
    for (int i = 0; i < 12; ++i) {
        std::vector<double> f(i < 6 ? 3 : 2);
        for (auto& x : f) x = rng.uniform(-1.0, 1.0);
        l.features.push_back(f);
    }
    return l;
}

// Builds the layout with node v renamed to perm[v].
Academic build_academic(const AcademicLayout& l, const std::vector<NodeId>& perm) {
    const std::size_t n = l.type.size();
    std::vector<NodeId> inv(n);
    for (NodeId v = 0; v < n; ++v) inv[perm[v]] = v;
    GraphBuilder b;
    const TypeId A = b.add_type("author"), P = b.add_type("paper");
    const RelationId W = b.add_relation("writes");
    for (NodeId i = 0; i < n; ++i) b.add_node("n" + std::to_string(inv[i]), l.type[inv[i]] == 0 ? A : P);
    for (auto [u, v] : l.edges) b.add_edge(perm[u], perm[v], W);
    for (TypeId t : {A, P}) {
        std::vector<double> vals;
        std::size_t rows = 0, dim = 0;
        for (NodeId i = 0; i < n; ++i)
            if (l.type[inv[i]] == t) {
                vals.insert(vals.end(), l.features[inv[i]].begin(), l.features[inv[i]].end());
                dim = l.features[inv[i]].size();
                ++rows;
            }
        b.set_features(t, Tensor(Shape::mat(rows, dim), vals));
    }
    Academic out{b.build(), {}};
    out.paths.push_back(parse_meta_path(out.g, "author-writes-paper-writes-author"));
    out.paths.push_back(parse_meta_path(out.g, "paper-writes-author-writes-paper"));
    return out;
}

std::vector<NodeId> identity_perm(std::size_t n) {
    std::vector<NodeId> p(n);
    std::iota(p.begin(), p.end(), 0);
    return p;
}

WalkConfig small_walks() {
    WalkConfig w;
    w.walk_length = 20;
    w.walks_per_node = 3;
    w.default_k = 3;
    return w;
}

ModelConfig small_model() {
    ModelConfig m;
    m.d = 4;
    m.K = 2;
    m.L = 1;
    m.ssm_state = 3;
    m.ssm_init_scale = 0.7;
    return m;
}

} // namespace

TEST(TypeTransform, IdentityMapReturnsFeatures) {
    const HeteroGraph g = make_cycle(5, 4, 3);
    GraphContext ctx;
    ctx.graph = &g;
    ctx.row_of_node = {0, 1, 2, 3, 4};
    ad::ParamStore ps;
    Tensor eye(Shape::mat(4, 4));
    for (std::size_t i = 0; i < 4; ++i) eye.values[i * 4 + i] = 1.0;
    ps.add("type." + g.type_name(0) + ".w", eye);
    ps.add("type." + g.type_name(0) + ".b", Tensor(Shape::vec(4)));
    const auto items = type_transform(ctx, ps);
    ASSERT_EQ(items.size(), 1u);
    for (NodeId v = 0; v < 5; ++v)
        for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(items[0].data().values[v * 4 + j], g.feature_row(v)[j]);
}

TEST(TypeTransform, ZeroFeaturesGiveTheBias) {
    GraphBuilder b;
    const TypeId t = b.add_type("n");
    b.add_relation("r");
    b.add_node(t);
    b.add_node(t);
    b.set_features(t, Tensor(Shape::mat(2, 3)));
    const HeteroGraph g = b.build();
    GraphContext ctx;
    ctx.graph = &g;
    ctx.row_of_node = {0, 1};
    Rng rng(2);
    ad::ParamStore ps;
    ps.add("type.n.w", Shape::mat(3, 5), ad::InitSpec::normal(1.0), rng);
    ps.add("type.n.b", Tensor::vec({1, 2, 3, 4, 5}));
    const auto rows = rows_of(type_transform(ctx, ps)[0]);
    for (const auto& r : rows) EXPECT_EQ(r, (std::vector<double>{1, 2, 3, 4, 5}));
}

TEST(TypeTransform, MixedInputDimensionsShareOutputDimension) {
    GraphBuilder b;
    const TypeId A = b.add_type("a"), B = b.add_type("b");
    b.add_relation("r");
    b.add_node(A);
    b.add_node(B);
    b.add_node(A);
    Rng rng(3);
    b.set_features(A, random_tensor(Shape::mat(2, 4), rng));
    b.set_features(B, random_tensor(Shape::mat(1, 7), rng));
    const HeteroGraph g = b.build();
    GraphContext ctx;
    ctx.graph = &g;
    ctx.row_of_node = {0, 2, 1};  // stacked blocks are a0, a2, b1
    ad::ParamStore ps;
    ps.add("type.a.w", Shape::mat(4, 5), ad::InitSpec::normal(1.0), rng);
    ps.add("type.a.b", Shape::vec(5), ad::InitSpec::normal(1.0), rng);
    ps.add("type.b.w", Shape::mat(7, 5), ad::InitSpec::normal(1.0), rng);
    ps.add("type.b.b", Shape::vec(5), ad::InitSpec::normal(1.0), rng);
    const auto item = type_transform(ctx, ps)[0];
    EXPECT_EQ(item.shape(), Shape::mat(3, 5));
    // node 1 (type b) is row 1 of the output
    const auto& w = ps.get("type.b.w").data().values;
    for (std::size_t j = 0; j < 5; ++j) {
        double expected = ps.get("type.b.b").data().values[j];
        for (std::size_t i = 0; i < 7; ++i) expected += g.feature_row(1)[i] * w[i * 5 + j];
        EXPECT_NEAR(item.data().values[5 + j], expected, 1e-14);
    }
}

TEST(TypeTransform, UnregisteredTypeIsRejected) {
    const HeteroGraph g = make_cycle(3);
    GraphContext ctx;
    ctx.graph = &g;
    ctx.row_of_node = {0, 1, 2};
    ad::ParamStore ps;
    EXPECT_EQ(error_code_of([&] { type_transform(ctx, ps); }), ErrorCode::validation);
}

TEST(ContentAggregate, MatchesReferenceEncoder) {
    Rng rng(4);
    ad::ParamStore ps;
    register_bilstm(ps, "content", 6, 3, rng);
    for (std::size_t items = 1; items <= 4; ++items) {
        std::vector<Value> xs;
        for (std::size_t t = 0; t < items; ++t) xs.push_back(Value::constant(random_tensor(Shape::mat(5, 6), rng)));
        const Value H = content_aggregate(ps, xs);
        ASSERT_EQ(H.shape(), Shape::mat(5, 6));
        const auto got = rows_of(H);
        for (std::size_t a = 0; a < 5; ++a) {
            std::vector<std::vector<double>> seq;
            for (const auto& x : xs) seq.push_back(rows_of(x)[a]);
            const auto want = bilstm_oracle(ps, "content", seq);
            for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(got[a][j], want[j], 1e-13);
        }
    }
}

TEST(ContentAggregate, SingleItemIsForwardAndBackwardConcatenated) {
    Rng rng(5);
    ad::ParamStore ps;
    register_bilstm(ps, "content", 4, 2, rng);
    const Value x = Value::constant(random_tensor(Shape::mat(3, 4), rng));
    const Value H = content_aggregate(ps, {x});
    const auto f = lstm_run(ps, "content.fwd", {x}), b = lstm_run(ps, "content.bwd", {x}, true);
    EXPECT_EQ(H.data().values, ad::concat({f[0], b[0]}, 1).data().values);
}

TEST(ContentAggregate, DuplicatedItemChangesTheEncoding) {
    // documented behavior: [x, x] and [x] generally differ
    Rng rng(6);
    ad::ParamStore ps;
    register_bilstm(ps, "content", 4, 2, rng);
    const Value x = Value::constant(random_tensor(Shape::mat(1, 4), rng));
    const auto one = content_aggregate(ps, {x}).data().values, two = content_aggregate(ps, {x, x}).data().values;
    double diff = 0.0;
    for (std::size_t j = 0; j < one.size(); ++j) diff += std::abs(one[j] - two[j]);
    EXPECT_GT(diff, 1e-6);
}

TEST(ContentAggregate, EmptyContentIsRejected) {
    ad::ParamStore ps;
    EXPECT_EQ(error_code_of([&] { content_aggregate(ps, {}); }), ErrorCode::validation);
}

namespace {

struct PathFixture {
    ad::ParamStore ps;
    GraphContext ctx;
    Value H0, HL;
};

// Context with hand-written neighbor columns for path 0 on n nodes.
PathFixture path_fixture(const HeteroGraph& g, std::vector<std::vector<std::size_t>> cols, std::uint64_t seed) {
    PathFixture f;
    Rng rng(seed);
    f.ctx.graph = &g;
    f.ctx.neighbors.push_back(std::move(cols));
    register_bilstm(f.ps, "path0.self", 4, 2, rng);
    register_bilstm(f.ps, "path0.nbr", 4, 2, rng);
    f.H0 = Value::constant(random_tensor(Shape::mat(g.num_nodes(), 4), rng));
    f.HL = Value::constant(random_tensor(Shape::mat(g.num_nodes(), 4), rng));
    return f;
}

} // namespace

TEST(IntraPathEncode, MatchesReferenceEncoders) {
    const HeteroGraph g = make_cycle(6);
    auto f = path_fixture(g, {{1, 2, 3, 4, 5, 0}, {5, 0, 1, 2, 3, 4}, {1, 2, 3, 4, 5, 0}}, 7);
    const auto enc = intra_path_encode(f.ctx, f.ps, 0, f.H0, f.HL);
    const auto h0 = rows_of(f.H0), hl = rows_of(f.HL);
    std::vector<std::vector<double>> hhat;
    for (NodeId a = 0; a < 6; ++a) hhat.push_back(bilstm_oracle(f.ps, "path0.self", {h0[a], hl[a]}));
    const auto got_h = rows_of(enc.Hhat), got_q = rows_of(enc.Q);
    for (NodeId a = 0; a < 6; ++a) {
        for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(got_h[a][j], hhat[a][j], 1e-13);
        std::vector<std::vector<double>> seq;
        for (const auto& col : f.ctx.neighbors[0]) seq.push_back(hhat[col[a]]);
        const auto q = bilstm_oracle(f.ps, "path0.nbr", seq);
        for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(got_q[a][j], q[j], 1e-13);
    }
}

TEST(IntraPathEncode, SingleNeighborIsItsEncoding) {
    const HeteroGraph g = make_cycle(4);
    auto f = path_fixture(g, {{1, 2, 3, 0}}, 8);
    const auto enc = intra_path_encode(f.ctx, f.ps, 0, f.H0, f.HL);
    const Value hb = ad::take_rows(enc.Hhat, f.ctx.neighbors[0][0]);
    const auto fw = lstm_run(f.ps, "path0.nbr.fwd", {hb}), bw = lstm_run(f.ps, "path0.nbr.bwd", {hb}, true);
    EXPECT_EQ(enc.Q.data().values, ad::concat({fw[0], bw[0]}, 1).data().values);
}

TEST(IntraPathEncode, IdenticalNeighborEncodingsHideNodeIdentity) {
    const HeteroGraph g = make_cycle(6);
    auto f = path_fixture(g, {{1, 2, 3, 4, 5, 0}, {3, 4, 5, 0, 1, 2}}, 9);
    Rng rng(10);
    const Tensor row = random_tensor(Shape::mat(1, 4), rng);
    Tensor same(Shape::mat(6, 4));
    for (std::size_t i = 0; i < 6; ++i) std::copy(row.values.begin(), row.values.end(), same.values.begin() + i * 4);
    f.H0 = f.HL = Value::constant(same);
    const auto q1 = intra_path_encode(f.ctx, f.ps, 0, f.H0, f.HL).Q.data().values;
    f.ctx.neighbors[0] = {{5, 5, 5, 5, 5, 5}, {2, 0, 1, 4, 4, 3}};
    const auto q2 = intra_path_encode(f.ctx, f.ps, 0, f.H0, f.HL).Q.data().values;
    EXPECT_EQ(q1, q2);
}

TEST(IntraPathEncode, PassesGradientCheck) {
    const HeteroGraph g = make_cycle(5);
    auto f = path_fixture(g, {{1, 2, 3, 4, 0}, {4, 0, 1, 2, 3}}, 11);
    Rng rng(12);
    f.ps.add("h0", f.H0.data());
    const Tensor w = random_tensor(Shape::mat(5, 4), rng);
    auto fn = [&](ad::ParamStore& p) {
        const auto enc = intra_path_encode(f.ctx, p, 0, p.get("h0"), f.HL);
        return ad::sum(enc.Q * Value::constant(w));
    };
    EXPECT_LT(grad_check(fn, f.ps, 1e-6).max_relative_error, 1e-5);
}

namespace {

// Attention + SSM filter for one center, written out on plain vectors.
std::vector<double> node_aggregate_oracle(const ad::ParamStore& ps, const std::vector<double>& qa,
                                          const std::vector<std::pair<NodeId, std::vector<double>>>& nbrs,
                                          std::vector<double>* alpha_out = nullptr) {
    const auto& u1 = ps.get("path0.u1").data().values;
    const auto& u2 = ps.get("path0.u2").data().values;
    const std::size_t d = qa.size(), k = nbrs.size();
    std::vector<double> e(k);
    double left = 0.0;
    for (std::size_t i = 0; i < d; ++i) left += qa[i] * u1[i];
    for (std::size_t j = 0; j < k; ++j) {
        double s = left;
        for (std::size_t i = 0; i < d; ++i) s += nbrs[j].second[i] * u2[i];
        e[j] = leaky(s);
    }
    const double m = *std::max_element(e.begin(), e.end());
    std::vector<double> alpha(k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += alpha[j] = std::exp(e[j] - m);
    for (auto& a : alpha) a /= z;
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        return alpha[x] != alpha[y] ? alpha[x] > alpha[y] : nbrs[x].first < nbrs[y].first;
    });
    std::vector<std::vector<double>> seq;
    for (std::size_t j : order) {
        std::vector<double> item(nbrs[j].second);
        for (auto& v : item) v *= alpha[j];
        seq.push_back(item);
    }
    const auto p = ssm_from_store(ps, "path0.ssm").values();
    const auto y = oracle::reference_scan({p.channels, p.state, p.A, p.B, p.C, p.D, p.gate_w, p.delta, p.gate_b}, seq)
                       .back();
    std::vector<double> zi(d, 0.0);
    for (const auto& [id, q] : nbrs)
        for (std::size_t i = 0; i < d; ++i) zi[i] += y[i] * q[i];
    if (alpha_out) *alpha_out = alpha;
    return zi;
}

ad::ParamStore attention_params(std::size_t d, std::uint64_t seed) {
    Rng rng(seed);
    ad::ParamStore ps;
    ps.add("path0.u1", Shape::mat(d, 1), ad::InitSpec::normal(1.0), rng);
    ps.add("path0.u2", Shape::mat(d, 1), ad::InitSpec::normal(1.0), rng);
    register_ssm(ps, "path0.ssm", d, 3, rng, 0.8);
    return ps;
}

} // namespace

TEST(InterPathAggregate, MatchesReferenceOnRandomInstances) {
    Rng rng(13);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t d = 2 + rng.index(4), k = 1 + rng.index(6);
        auto ps = attention_params(d, 100 + trial);
        std::vector<double> qa(d);
        for (auto& v : qa) v = rng.uniform(-1, 1);
        std::vector<std::pair<NodeId, std::vector<double>>> nbrs;
        std::vector<std::pair<NodeId, Value>> nbr_values;
        for (std::size_t j = 0; j < k; ++j) {
            std::vector<double> q(d);
            for (auto& v : q) v = rng.uniform(-1, 1);
            nbrs.emplace_back(static_cast<NodeId>(rng.index(50)), q);
            nbr_values.emplace_back(nbrs.back().first, row_value(q));
        }
        std::vector<double> alpha;
        const auto want = node_aggregate_oracle(ps, qa, nbrs, &alpha);
        const auto got = inter_path_node_aggregate(ps, 0, row_value(qa), nbr_values, ModelConfig{});
        for (std::size_t i = 0; i < d; ++i) EXPECT_NEAR(got.Zi.data().values[i], want[i], 1e-12);
        for (std::size_t j = 0; j < k; ++j) EXPECT_NEAR(got.alpha.data().values[j], alpha[j], 1e-14);
    }
}

TEST(InterPathAggregate, SingleNeighborGetsFullWeight) {
    auto ps = attention_params(3, 14);
    const auto r = inter_path_node_aggregate(ps, 0, row_value({0.1, 0.2, 0.3}), {{4, row_value({1, -1, 2})}}, {});
    EXPECT_EQ(r.alpha.data().values, std::vector<double>{1.0});
}

TEST(InterPathAggregate, IdenticalNeighborsShareWeightEvenly) {
    auto ps = attention_params(3, 15);
    std::vector<std::pair<NodeId, Value>> nbrs;
    for (NodeId id : {9, 2, 5, 7}) nbrs.emplace_back(id, row_value({0.5, -0.25, 1.0}));
    const auto r = inter_path_node_aggregate(ps, 0, row_value({1, 1, 1}), nbrs, {});
    for (double a : r.alpha.data().values) EXPECT_NEAR(a, 0.25, 1e-15);
}

TEST(InterPathAggregate, EmptyNeighborListIsRejected) {
    auto ps = attention_params(3, 16);
    EXPECT_EQ(error_code_of([&] { inter_path_node_aggregate(ps, 0, row_value({1, 1, 1}), {}, {}); }),
              ErrorCode::validation);
}

TEST(InterPathAggregate, AttentionRowsSumToOne) {
    Rng rng(17);
    auto ps = attention_params(4, 18);
    std::vector<Value> Qb;
    std::vector<std::vector<std::size_t>> ids;
    for (std::size_t j = 0; j < 5; ++j) {
        Qb.push_back(Value::constant(random_tensor(Shape::mat(30, 4), rng, 3.0)));
        ids.push_back(std::vector<std::size_t>(30, j));
    }
    const auto r = inter_path_aggregate(ps, 0, Value::constant(random_tensor(Shape::mat(30, 4), rng, 3.0)), Qb, ids, {});
    for (const auto& row : rows_of(r.alpha)) EXPECT_NEAR(std::accumulate(row.begin(), row.end(), 0.0), 1.0, 1e-9);
}

TEST(InterPathAggregate, PassesGradientCheckWithFiveNeighbors) {
    Rng rng(19);
    auto ps = attention_params(4, 20);
    ps.add("qa", random_tensor(Shape::mat(1, 4), rng));
    for (int j = 0; j < 5; ++j) ps.add("q" + std::to_string(j), random_tensor(Shape::mat(1, 4), rng));
    auto fn = [](ad::ParamStore& p) {
        std::vector<std::pair<NodeId, Value>> nbrs;
        for (int j = 0; j < 5; ++j) nbrs.emplace_back(static_cast<NodeId>(j), p.get("q" + std::to_string(j)));
        return ad::sum(inter_path_node_aggregate(p, 0, p.get("qa"), nbrs, ModelConfig{}).Zi);
    };
    EXPECT_LT(grad_check(fn, ps, 1e-6).max_relative_error, 1e-5);
}

namespace {

ad::ParamStore fusion_params(std::size_t d, std::uint64_t seed) {
    Rng rng(seed);
    ad::ParamStore ps;
    ps.add("fuse.q", Shape::vec(d), ad::InitSpec::normal(1.0), rng);
    register_ssm(ps, "fuse.ssm", d, 3, rng, 0.8);
    return ps;
}

} // namespace

TEST(MetaPathFuse, MatchesReference) {
    Rng rng(21);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t d = 2 + rng.index(4), P = 1 + rng.index(4);
        auto ps = fusion_params(d, 200 + trial);
        std::vector<std::vector<double>> zi(P, std::vector<double>(d));
        std::vector<Value> Zi;
        for (auto& z : zi) {
            for (auto& v : z) v = rng.uniform(-2, 2);
            Zi.push_back(row_value(z));
        }
        const auto& q = ps.get("fuse.q").data().values;
        std::vector<double> beta(P);
        double total = 0.0;
        for (std::size_t p = 0; p < P; ++p) {
            double w = 0.0;
            for (std::size_t i = 0; i < d; ++i) w += leaky(q[i] * zi[p][i]);
            total += beta[p] = std::exp(w);
        }
        for (auto& b : beta) b /= total;
        std::vector<std::vector<double>> seq;
        for (std::size_t p = 0; p < P; ++p) {
            seq.push_back(zi[p]);
            for (auto& v : seq.back()) v *= beta[p];
        }
        const auto sp = ssm_from_store(ps, "fuse.ssm").values();
        const auto y =
            oracle::reference_scan({sp.channels, sp.state, sp.A, sp.B, sp.C, sp.D, sp.gate_w, sp.delta, sp.gate_b}, seq)
                .back();
        const auto r = meta_path_fuse(ps, Zi, ModelConfig{});
        for (std::size_t i = 0; i < d; ++i) {
            double z = 0.0;
            for (std::size_t p = 0; p < P; ++p) z += y[i] * zi[p][i];
            EXPECT_NEAR(r.Z.data().values[i], z, 1e-12);
        }
        for (std::size_t p = 0; p < P; ++p) EXPECT_NEAR(r.beta.data().values[p], beta[p], 1e-14);
    }
}

TEST(MetaPathFuse, SinglePathGetsFullWeight) {
    auto ps = fusion_params(3, 22);
    EXPECT_EQ(meta_path_fuse(ps, {row_value({1, 2, 3})}, {}).beta.data().values, std::vector<double>{1.0});
}

TEST(MetaPathFuse, IdenticalPathsSplitEvenly) {
    auto ps = fusion_params(3, 23);
    const auto r = meta_path_fuse(ps, {row_value({1, -2, 3}), row_value({1, -2, 3})}, {});
    EXPECT_EQ(r.beta.data().values, (std::vector<double>{0.5, 0.5}));
}

TEST(MetaPathFuse, WeightsSumToOne) {
    Rng rng(24);
    auto ps = fusion_params(5, 25);
    std::vector<Value> Zi;
    for (int p = 0; p < 4; ++p) Zi.push_back(Value::constant(random_tensor(Shape::mat(40, 5), rng, 5.0)));
    for (const auto& row : rows_of(meta_path_fuse(ps, Zi, {}).beta))
        EXPECT_NEAR(std::accumulate(row.begin(), row.end(), 0.0), 1.0, 1e-9);
}

namespace {

struct LayerFixture {
    GraphContext ctx;
    ad::ParamStore ps;
    ModelConfig cfg;
};

LayerFixture layer_fixture(const HeteroGraph& g, std::size_t K, std::size_t L, std::size_t d, std::uint64_t seed) {
    LayerFixture f;
    f.cfg.d = d;
    f.cfg.K = K;
    f.cfg.L = L;
    f.ctx.graph = &g;
    add_ring_operators(f.ctx, g, K);
    Rng rng(seed);
    for (std::size_t l = 0; l < L; ++l) register_ssm(f.ps, layer_prefix(l) + ".ssm", d + 1, 3, rng, 0.8);
    return f;
}

} // namespace

TEST(AsyncAggregate, IsolatedNodeKeepsItsSkips) {
    GraphBuilder b;
    const TypeId t = b.add_type("n");
    const RelationId r = b.add_relation("r");
    for (int i = 0; i < 3; ++i) b.add_node(t);
    b.add_edge(0, 1, r);
    const HeteroGraph g = b.build();
    auto f = layer_fixture(g, 2, 1, 4, 26);
    f.ps.get("layer0.ssm.d").mutable_data().values.assign(5, 0.0);
    Rng rng(27);
    const Value H = Value::constant(random_tensor(Shape::mat(3, 4), rng));
    const Value H0 = Value::constant(random_tensor(Shape::mat(3, 4), rng));
    const auto out = rows_of(async_aggregate(f.ctx, f.ps, 0, H, H0, f.cfg));
    const auto h = rows_of(H), h0 = rows_of(H0);
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(out[2][j], h[2][j] + h0[2][j]);
}

TEST(AsyncAggregate, TriangleWithEqualFeaturesStaysUniform) {
    const HeteroGraph g = make_cycle(3);
    auto f = layer_fixture(g, 1, 3, 4, 28);
    Tensor x(Shape::mat(3, 4));
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 4; ++j) x.values[i * 4 + j] = 0.1 * static_cast<double>(j) - 0.2;
    const auto layers = encode_layers(f.ctx, f.ps, Value::constant(x), f.cfg);
    for (const auto& H : layers) {
        ASSERT_EQ(H.shape(), Shape::mat(3, 4));
        const auto rows = rows_of(H);
        EXPECT_EQ(rows[0], rows[1]);
        EXPECT_EQ(rows[1], rows[2]);
    }
}

TEST(AsyncAggregate, ReceptiveFieldIsBoundedByLayersTimesHops) {
    const HeteroGraph g = make_cycle(24);
    const auto dist = oracle::floyd_warshall([&] {
        oracle::Adjacency adj(24, std::vector<int>(24, 0));
        for (const auto& e : g.edges()) adj[e.src][e.dst] = adj[e.dst][e.src] = 1;
        return adj;
    }());
    for (std::size_t K : {1u, 2u, 3u})
        for (std::size_t L : {1u, 2u, 3u})
            for (bool gated : {false, true}) {
                auto f = layer_fixture(g, K, L, 2, 30 + K * 10 + L);
                f.cfg.hop_skip = f.cfg.layer_skip = false;
                if (!gated) f.cfg.fixed_gate = 0.6;
                Rng rng(K * L);
                f.ps.add("h0", random_tensor(Shape::mat(24, 2), rng));
                const NodeId a = 5;
                const auto layers = encode_layers(f.ctx, f.ps, f.ps.get("h0"), f.cfg);
                f.ps.zero_grad();
                ad::backward(ad::sum(ad::take_rows(layers.back(), std::vector<std::size_t>{a})));
                const auto& grad = f.ps.get("h0").grad().values;
                bool reached_edge = false;
                for (NodeId b = 0; b < 24; ++b) {
                    const double gnorm = std::abs(grad[b * 2]) + std::abs(grad[b * 2 + 1]);
                    if (dist[a][b] > static_cast<int>(K * L))
                        EXPECT_EQ(gnorm, 0.0) << "K=" << K << " L=" << L << " b=" << b;
                    else if (dist[a][b] == static_cast<int>(K * L))
                        reached_edge = reached_edge || gnorm > 0.0;
                }
                EXPECT_TRUE(reached_edge) << "K=" << K << " L=" << L;
            }
}

namespace {

std::vector<TypedNeighborSet> relabel(const std::vector<TypedNeighborSet>& s, const std::vector<NodeId>& perm) {
    std::vector<TypedNeighborSet> out(s.size());
    for (const auto& set : s) {
        TypedNeighborSet t = set;
        t.owner = perm[set.owner];
        for (auto& list : t.neighbors)
            for (auto& e : list) e.node = perm[e.node];
        out[t.owner] = std::move(t);
    }
    return out;
}

} // namespace

TEST(Forward, PermutationEquivariant) {
    Rng rng(40);
    for (int trial = 0; trial < 5; ++trial) {
        const auto layout = academic_layout(41 + trial);
        const auto base = build_academic(layout, identity_perm(12));
        std::vector<NodeId> perm = identity_perm(12);
        for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.index(i + 1)]);
        const auto moved = build_academic(layout, perm);

        const WalkConfig wcfg = small_walks();
        ModelConfig cfg = small_model();
        cfg.L = 2;
        const auto samples = sample_neighbors(base.g, wcfg);
        const auto ctx_a = make_context(base.g, base.paths, samples, wcfg, cfg);
        const auto ctx_b = make_context(moved.g, moved.paths, relabel(samples, perm), wcfg, cfg);
        ad::ParamStore ps;
        Rng init(42);
        register_model(ps, base.g, 2, cfg, init);

        const auto ra = forward(ctx_a, ps, cfg), rb = forward(ctx_b, ps, cfg);
        auto expect_equivariant = [&](const Value& x, const Value& y, const char* what) {
            const auto X = rows_of(x), Y = rows_of(y);
            for (NodeId v = 0; v < 12; ++v)
                for (std::size_t j = 0; j < X[v].size(); ++j)
                    ASSERT_NEAR(X[v][j], Y[perm[v]][j], 1e-12) << what << " node " << v;
        };
        for (std::size_t l = 0; l < ra.layers.size(); ++l) expect_equivariant(ra.layers[l], rb.layers[l], "layer");
        expect_equivariant(ra.fusion.beta, rb.fusion.beta, "beta");
        expect_equivariant(ra.Z, rb.Z, "Z");
    }
}

TEST(Forward, EveryStageKeepsDimensionD) {
    const auto a = build_academic(academic_layout(50), identity_perm(12));
    const WalkConfig wcfg = small_walks();
    ModelConfig cfg = small_model();
    cfg.d = 6;
    cfg.L = 3;
    cfg.use_lap_pe = true;
    cfg.lap_pe_k = 3;
    const auto ctx = make_context(a.g, a.paths, sample_neighbors(a.g, wcfg), wcfg, cfg);
    ad::ParamStore ps;
    Rng rng(51);
    register_model(ps, a.g, 2, cfg, rng);
    const auto r = forward(ctx, ps, cfg);
    const Shape nd = Shape::mat(12, 6);
    for (const auto& H : r.layers) EXPECT_EQ(H.shape(), nd);
    for (const auto& p : r.paths) {
        EXPECT_EQ(p.enc.Hhat.shape(), nd);
        EXPECT_EQ(p.enc.Q.shape(), nd);
        EXPECT_EQ(p.agg.Zi.shape(), nd);
        EXPECT_EQ(p.agg.alpha.shape(), Shape::mat(12, 3));
        for (const auto& row : rows_of(p.agg.alpha))
            EXPECT_NEAR(std::accumulate(row.begin(), row.end(), 0.0), 1.0, 1e-9);
    }
    EXPECT_EQ(r.Z.shape(), nd);
    for (double z : r.Z.data().values) EXPECT_TRUE(std::isfinite(z));
}

TEST(Forward, EndToEndGradientCheck) {
    const auto a = build_academic(academic_layout(60), identity_perm(12));
    const WalkConfig wcfg = small_walks();
    const ModelConfig cfg = small_model();
    const auto ctx = make_context(a.g, a.paths, sample_neighbors(a.g, wcfg), wcfg, cfg);
    ad::ParamStore ps;
    Rng rng(61);
    register_model(ps, a.g, 2, cfg, rng);
    const auto triples = sample_triples(a.g, a.paths[0], 2, 2, wcfg).triples;
    ASSERT_FALSE(triples.empty());
    auto fn = [&](ad::ParamStore& p) { return nce_loss(forward(ctx, p, cfg).Z, triples); };
    const auto r = grad_check(fn, ps, 1e-6);
    EXPECT_LT(r.max_relative_error, 1e-5) << r.worst_parameter << "[" << r.worst_index << "]";
    EXPECT_EQ(r.checked, ps.scalar_count());
}
