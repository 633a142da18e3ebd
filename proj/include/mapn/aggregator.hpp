#pragma once

// MAPN forward pass, batched over all nodes of a graph.
//
//   items    per-type affine maps of the raw features (plus LapPE when enabled)
//   H0       BiLSTM mean over a node's content items
//   H1..HL   asynchronous layers: an SSM over the K hop-ring means
//   per path Hhat = BiLSTM mean over [H0, HL]; Q = BiLSTM mean over the
//            sampled neighbors' Hhat; attention over neighbors, SSM
//            filtering, Zi = y * sum_b Q(b)
//   fusion   beta = softmax over paths, SSM over beta-scaled Zi, Z = sum y * Zi

#include <algorithm>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "mapn/autodiff.hpp"
#include "mapn/encoders.hpp"
#include "mapn/graph.hpp"
#include "mapn/lap_pe.hpp"
#include "mapn/param_store.hpp"
#include "mapn/sampler.hpp"
#include "mapn/ssm.hpp"

namespace mapn {

enum class SsmInput { weighted, raw };

inline SsmInput parse_ssm_input(const std::string& s) {
    if (s == "weighted") return SsmInput::weighted;
    if (s == "raw") return SsmInput::raw;
    fail(ErrorCode::usage, "ssm input must be 'weighted' or 'raw', got '" + s + "'");
}

inline std::string to_string(SsmInput s) { return s == SsmInput::weighted ? "weighted" : "raw"; }

struct ModelConfig {
    std::size_t d = 16;
    std::size_t K = 2;
    std::size_t L = 1;
    std::size_t ssm_state = 16;
    bool hop_skip = true;
    bool layer_skip = true;
    bool use_lap_pe = false;
    std::size_t lap_pe_k = 4;
    SsmInput ssm_input = SsmInput::weighted;
    // std of the SSM B, C and gate weights; the path and fusion outputs are
    // products of SSM outputs, so small values leave Z near zero
    double ssm_init_scale = 4.0;
    std::size_t supervised_classes = 0;  // > 0 adds a softmax head on Z
    std::optional<double> fixed_gate;    // overrides every SSM gate

    void validate() const {
        require(d >= 2 && d % 2 == 0, ErrorCode::usage, "model: d must be even and >= 2");
        require(K >= 1, ErrorCode::usage, "model: K must be >= 1");
        require(L >= 1, ErrorCode::usage, "model: L must be >= 1");
        require(ssm_state >= 1, ErrorCode::usage, "model: SSM state size must be >= 1");
        if (use_lap_pe) require(lap_pe_k >= 1, ErrorCode::usage, "model: lap_pe_k must be >= 1");
    }
};

/// Constant per-graph inputs: ring averaging operators, neighbor index
/// columns per meta-path, feature row permutation.
struct GraphContext {
    const HeteroGraph* graph = nullptr;
    std::vector<MetaPath> paths;
    std::vector<std::shared_ptr<const ad::SparseMatrix>> ring_mean;  // K operators, N x N
    std::vector<ad::Value> ring_mask;                                 // K columns, N x 1
    /// neighbors[p][j][a]: j-th sampled terminal-type neighbor of node a.
    std::vector<std::vector<std::vector<std::size_t>>> neighbors;
    std::vector<std::size_t> self_filled;  // per path, nodes without any neighbor of the terminal type
    std::vector<std::size_t> row_of_node;
    std::optional<ad::Tensor> lap_pe;
    std::size_t lap_pe_components = 0;

    std::size_t num_nodes() const { return graph->num_nodes(); }
};

/// Ring-k mean operators and presence masks for k = 1..K.
inline void add_ring_operators(GraphContext& ctx, const HeteroGraph& g, std::size_t K) {
    const std::size_t N = g.num_nodes();
    const auto rings = all_hop_rings(g, K);
    for (std::size_t k = 0; k < K; ++k) {
        auto m = std::make_shared<ad::SparseMatrix>();
        m->cols = N;
        ad::Tensor mask(ad::Shape::mat(N, 1));
        for (NodeId v = 0; v < N; ++v) {
            const auto& ring = rings[v].rings[k];
            std::vector<std::pair<std::size_t, double>> row;
            for (NodeId u : ring) row.emplace_back(u, 1.0 / static_cast<double>(ring.size()));
            m->push_row(row);
            mask.values[v] = ring.empty() ? 0.0 : 1.0;
        }
        ctx.ring_mean.push_back(std::move(m));
        ctx.ring_mask.push_back(ad::Value::constant(std::move(mask)));
    }
}

inline GraphContext make_context(const HeteroGraph& g, const std::vector<MetaPath>& paths,
                                 const std::vector<TypedNeighborSet>& samples, const WalkConfig& wcfg,
                                 const ModelConfig& cfg) {
    cfg.validate();
    require(!paths.empty(), ErrorCode::validation, "model: at least one meta-path is required");
    require(samples.size() == g.num_nodes(), ErrorCode::validation, "model: missing neighbor samples");
    for (const auto& p : paths) validate_meta_path(g, p);
    const std::size_t N = g.num_nodes();
    GraphContext ctx;
    ctx.graph = &g;
    ctx.paths = paths;

    add_ring_operators(ctx, g, cfg.K);

    for (const auto& p : paths) {
        const TypeId t = p.terminal_type();
        const std::size_t k = wcfg.k_for(t);
        std::vector<std::vector<std::size_t>> cols(k, std::vector<std::size_t>(N));
        std::size_t filled = 0;
        for (NodeId a = 0; a < N; ++a) {
            const auto& list = samples[a].neighbors[t];
            if (list.empty()) ++filled;
            for (std::size_t j = 0; j < k; ++j) cols[j][a] = list.empty() ? a : list[j % list.size()].node;
        }
        ctx.neighbors.push_back(std::move(cols));
        ctx.self_filled.push_back(filled);
    }

    std::vector<std::size_t> offset(g.num_types(), 0);
    for (TypeId t = 1; t < g.num_types(); ++t) offset[t] = offset[t - 1] + g.nodes_of_type(t - 1).size();
    ctx.row_of_node.resize(N);
    for (NodeId v = 0; v < N; ++v) ctx.row_of_node[v] = offset[g.type_of(v)] + g.local_index(v);

    if (cfg.use_lap_pe) {
        auto pe = lap_pe(g, cfg.lap_pe_k);
        ctx.lap_pe = std::move(pe.encoding);
        ctx.lap_pe_components = pe.components;
    }
    return ctx;
}

inline std::string path_prefix(std::size_t p) { return "path" + std::to_string(p); }
inline std::string layer_prefix(std::size_t l) { return "layer" + std::to_string(l); }

/// Registers every trainable tensor of the model.
inline void register_model(ad::ParamStore& ps, const HeteroGraph& g, std::size_t num_paths, const ModelConfig& cfg,
                           Rng& rng) {
    using ad::InitSpec, ad::Shape;
    cfg.validate();
    const std::size_t d = cfg.d;
    for (TypeId t = 0; t < g.num_types(); ++t) {
        const std::size_t in = g.feature_dim(t);
        ps.add("type." + g.type_name(t) + ".w", Shape::mat(in, d), InitSpec::glorot(std::max<std::size_t>(in, 1), d),
               rng);
        ps.add("type." + g.type_name(t) + ".b", Shape::vec(d), InitSpec::zeros(), rng);
    }
    if (cfg.use_lap_pe) {
        ps.add("pe.w", Shape::mat(cfg.lap_pe_k, d), InitSpec::glorot(cfg.lap_pe_k, d), rng);
        ps.add("pe.b", Shape::vec(d), InitSpec::zeros(), rng);
    }
    register_bilstm(ps, "content", d, d / 2, rng);
    for (std::size_t l = 0; l < cfg.L; ++l)
        register_ssm(ps, layer_prefix(l) + ".ssm", d + 1, cfg.ssm_state, rng, cfg.ssm_init_scale);
    for (std::size_t p = 0; p < num_paths; ++p) {
        const auto pre = path_prefix(p);
        register_bilstm(ps, pre + ".self", d, d / 2, rng);
        register_bilstm(ps, pre + ".nbr", d, d / 2, rng);
        ps.add(pre + ".u1", Shape::mat(d, 1), InitSpec::glorot(d, 1), rng);
        ps.add(pre + ".u2", Shape::mat(d, 1), InitSpec::glorot(d, 1), rng);
        register_ssm(ps, pre + ".ssm", d, cfg.ssm_state, rng, cfg.ssm_init_scale);
    }
    ps.add("fuse.q", Shape::vec(d), InitSpec::glorot(d, 1), rng);
    register_ssm(ps, "fuse.ssm", d, cfg.ssm_state, rng, cfg.ssm_init_scale);
    if (cfg.supervised_classes > 0) {
        ps.add("head.w", Shape::mat(d, cfg.supervised_classes), InitSpec::glorot(d, cfg.supervised_classes), rng);
        ps.add("head.b", Shape::vec(cfg.supervised_classes), InitSpec::zeros(), rng);
    }
}

/// Content items per node: the type-specific affine map of the raw
/// features, then (optionally) the LapPE map. Each item is N x d.
inline std::vector<ad::Value> type_transform(const GraphContext& ctx, const ad::ParamStore& ps) {
    using namespace ad;
    const HeteroGraph& g = *ctx.graph;
    std::vector<Value> blocks;
    for (TypeId t = 0; t < g.num_types(); ++t) {
        const std::string pre = "type." + g.type_name(t);
        require(ps.contains(pre + ".w"), ErrorCode::validation, "type_transform: no map for type '" + g.type_name(t) + "'");
        if (g.nodes_of_type(t).empty()) continue;
        blocks.push_back(matmul(Value::constant(g.features(t)), ps.get(pre + ".w")) + ps.get(pre + ".b"));
    }
    std::vector<Value> items{take_rows(concat(blocks, 0), ctx.row_of_node)};
    if (ctx.lap_pe) items.push_back(matmul(Value::constant(*ctx.lap_pe), ps.get("pe.w")) + ps.get("pe.b"));
    return items;
}

/// H0 = mean over items of [fwd ; bwd].
inline ad::Value content_aggregate(const ad::ParamStore& ps, const std::vector<ad::Value>& items) {
    require(!items.empty(), ErrorCode::validation, "content_aggregate: no content items");
    return bilstm_mean(ps, "content", items);
}

/// One asynchronous layer. The scan input at hop k is the ring-k mean of H
/// with a presence bit appended; the first d channels of the last output
/// are the update.
inline ad::Value async_aggregate(const GraphContext& ctx, const ad::ParamStore& ps, std::size_t layer,
                                 const ad::Value& H, const ad::Value& H0, const ModelConfig& cfg) {
    using namespace ad;
    require(ctx.ring_mean.size() >= cfg.K, ErrorCode::validation, "async_aggregate: rings computed for fewer hops than K");
    std::vector<Value> seq;
    for (std::size_t k = 0; k < cfg.K; ++k) seq.push_back(concat({sparse_matmul(ctx.ring_mean[k], H), ctx.ring_mask[k]}, 1));
    const Value y = scan_filter_set(ssm_from_store(ps, layer_prefix(layer) + ".ssm"), seq, cfg.fixed_gate);
    Value out = slice(y, 1, 0, cfg.d);
    if (cfg.hop_skip) out = out + H;
    if (cfg.layer_skip) out = out + H0;
    return out;
}

/// [H0, H1, ..., HL].
inline std::vector<ad::Value> encode_layers(const GraphContext& ctx, const ad::ParamStore& ps, const ad::Value& H0,
                                            const ModelConfig& cfg) {
    std::vector<ad::Value> layers{H0};
    for (std::size_t l = 0; l < cfg.L; ++l) layers.push_back(async_aggregate(ctx, ps, l, layers.back(), H0, cfg));
    return layers;
}

struct PathEncoding {
    ad::Value Hhat;  // N x d
    ad::Value Q;     // N x d
};

/// Hhat = BiLSTM mean over [H0, HL]; Q = BiLSTM mean over the sampled
/// neighbors' Hhat in visit-count order.
inline PathEncoding intra_path_encode(const GraphContext& ctx, const ad::ParamStore& ps, std::size_t path,
                                      const ad::Value& H0, const ad::Value& HL) {
    const auto pre = path_prefix(path);
    PathEncoding out;
    out.Hhat = bilstm_mean(ps, pre + ".self", {H0, HL});
    std::vector<ad::Value> seq;
    for (const auto& col : ctx.neighbors.at(path)) seq.push_back(ad::take_rows(out.Hhat, col));
    out.Q = bilstm_mean(ps, pre + ".nbr", seq);
    return out;
}

struct NodeAggregate {
    ad::Value Zi;     // N x d
    ad::Value alpha;  // N x k
};

/// Node-level attention and SSM filtering for one meta-path. Qa is N x d;
/// Qb[j] is the j-th neighbor's Q for every node (N x d) and ids[j][a] its
/// node id, used to break attention ties.
inline NodeAggregate inter_path_aggregate(const ad::ParamStore& ps, std::size_t path, const ad::Value& Qa,
                                          const std::vector<ad::Value>& Qb,
                                          const std::vector<std::vector<std::size_t>>& ids, const ModelConfig& cfg) {
    using namespace ad;
    require(!Qb.empty(), ErrorCode::validation, "inter_path_aggregate: empty neighbor list");
    const auto pre = path_prefix(path);
    const std::size_t N = Qa.shape()[0], k = Qb.size();
    const Value left = matmul(Qa, ps.get(pre + ".u1"));
    std::vector<Value> logits;
    for (const auto& q : Qb) logits.push_back(leaky_relu(left + matmul(q, ps.get(pre + ".u2"))));
    NodeAggregate out;
    out.alpha = softmax(concat(logits, 1), 1);

    std::vector<Value> items;
    for (std::size_t j = 0; j < k; ++j)
        items.push_back(cfg.ssm_input == SsmInput::weighted ? slice(out.alpha, 1, j, j + 1) * Qb[j] : Qb[j]);
    const Value stacked = concat(items, 0);  // row j * N + a

    // per node: neighbors by descending attention, ties by ascending node id
    const auto& av = out.alpha.data().values;
    std::vector<std::vector<std::size_t>> step_rows(k, std::vector<std::size_t>(N));
    std::vector<std::size_t> order(k);
    for (std::size_t a = 0; a < N; ++a) {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
            const double ax = av[a * k + x], ay = av[a * k + y];
            if (ax != ay) return ax > ay;
            return ids[x][a] < ids[y][a];
        });
        for (std::size_t s = 0; s < k; ++s) step_rows[s][a] = order[s] * N + a;
    }
    std::vector<Value> seq;
    for (std::size_t s = 0; s < k; ++s) seq.push_back(take_rows(stacked, step_rows[s]));
    const Value y = scan_filter_set(ssm_from_store(ps, pre + ".ssm"), seq, cfg.fixed_gate);

    Value qsum = Qb[0];
    for (std::size_t j = 1; j < k; ++j) qsum = qsum + Qb[j];
    out.Zi = y * qsum;
    return out;
}

/// Single-node form: neighbors given as (id, Q row) pairs, each Q 1 x d.
inline NodeAggregate inter_path_node_aggregate(const ad::ParamStore& ps, std::size_t path, const ad::Value& Qa,
                                               const std::vector<std::pair<NodeId, ad::Value>>& neighbors,
                                               const ModelConfig& cfg) {
    std::vector<ad::Value> Qb;
    std::vector<std::vector<std::size_t>> ids;
    for (const auto& [id, q] : neighbors) {
        Qb.push_back(q);
        ids.push_back({id});
    }
    return inter_path_aggregate(ps, path, Qa, Qb, ids, cfg);
}

struct Fusion {
    ad::Value Z;                // N x d
    ad::Value beta;             // N x P
    std::vector<ad::Value> Zw;  // per path, N x d
};

/// Semantic attention across meta-paths followed by SSM filtering over the
/// beta-scaled path summaries in configuration order.
inline Fusion meta_path_fuse(const ad::ParamStore& ps, const std::vector<ad::Value>& Zi, const ModelConfig& cfg) {
    using namespace ad;
    require(!Zi.empty(), ErrorCode::validation, "meta_path_fuse: no meta-paths");
    const std::size_t N = Zi.front().shape()[0];
    std::vector<Value> w;
    for (const auto& z : Zi) w.push_back(reshape(sum(leaky_relu(ps.get("fuse.q") * z), 1), Shape::mat(N, 1)));
    Fusion out;
    out.beta = softmax(concat(w, 1), 1);
    std::vector<Value> seq;
    for (std::size_t p = 0; p < Zi.size(); ++p) seq.push_back(slice(out.beta, 1, p, p + 1) * Zi[p]);
    const Value y = scan_filter_set(ssm_from_store(ps, "fuse.ssm"), seq, cfg.fixed_gate);
    for (const auto& z : Zi) {
        out.Zw.push_back(y * z);
        out.Z = out.Z ? out.Z + out.Zw.back() : out.Zw.back();
    }
    return out;
}

struct PathOutput {
    PathEncoding enc;
    NodeAggregate agg;
};

struct ForwardResult {
    ad::Value Z;
    std::vector<ad::Value> layers;  // H0..HL
    std::vector<PathOutput> paths;
    Fusion fusion;
    ad::Value logits;  // N x classes when the supervised head exists
};

inline ForwardResult forward(const GraphContext& ctx, const ad::ParamStore& ps, const ModelConfig& cfg) {
    ForwardResult r;
    const ad::Value H0 = content_aggregate(ps, type_transform(ctx, ps));
    r.layers = encode_layers(ctx, ps, H0, cfg);
    std::vector<ad::Value> Zi;
    for (std::size_t p = 0; p < ctx.paths.size(); ++p) {
        PathOutput po;
        po.enc = intra_path_encode(ctx, ps, p, H0, r.layers.back());
        std::vector<ad::Value> Qb;
        for (const auto& col : ctx.neighbors[p]) Qb.push_back(ad::take_rows(po.enc.Q, col));
        po.agg = inter_path_aggregate(ps, p, po.enc.Q, Qb, ctx.neighbors[p], cfg);
        Zi.push_back(po.agg.Zi);
        r.paths.push_back(std::move(po));
    }
    r.fusion = meta_path_fuse(ps, Zi, cfg);
    r.Z = r.fusion.Z;
    if (ps.contains("head.w")) r.logits = ad::matmul(r.Z, ps.get("head.w")) + ps.get("head.b");
    return r;
}

} // namespace mapn
