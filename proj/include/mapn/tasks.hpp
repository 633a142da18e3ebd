#pragma once

// End-to-end tasks built from the trainer and the probes.

#include <vector>

#include "mapn/diagnostics.hpp"
#include "mapn/eval.hpp"
#include "mapn/graph.hpp"
#include "mapn/trainer.hpp"

namespace mapn {

/// Copy of g with one extra feature column per type: skeleton degree
/// divided by the largest skeleton degree in g (0 for an edgeless graph).
inline HeteroGraph with_degree_feature(const HeteroGraph& g) {
    GraphBuilder b;
    for (TypeId t = 0; t < g.num_types(); ++t) b.add_type(g.type_name(t));
    for (RelationId r = 0; r < g.num_relations(); ++r) b.add_relation(g.relation_name(r), g.relation_directed(r));
    for (NodeId v = 0; v < g.num_nodes(); ++v) {
        b.add_node(g.original_id(v), g.type_of(v));
        if (g.label(v) >= 0) b.set_label(v, g.label(v));
    }
    for (const auto& e : g.edges()) b.add_edge(e.src, e.dst, e.relation);
    std::size_t maxdeg = 0;
    for (NodeId v = 0; v < g.num_nodes(); ++v) maxdeg = std::max(maxdeg, g.skeleton_degree(v));
    for (TypeId t = 0; t < g.num_types(); ++t) {
        const auto nodes = g.nodes_of_type(t);
        const std::size_t d = g.feature_dim(t);
        ad::Tensor f(ad::Shape::mat(nodes.size(), d + 1));
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            const auto row = g.feature_row(nodes[i]);
            std::copy(row.begin(), row.end(), f.values.begin() + static_cast<std::ptrdiff_t>(i * (d + 1)));
            f.values[i * (d + 1) + d] =
                maxdeg ? static_cast<double>(g.skeleton_degree(nodes[i])) / static_cast<double>(maxdeg) : 0.0;
        }
        b.set_features(t, std::move(f));
    }
    if (g.graph_label()) b.set_graph_label(*g.graph_label());
    return b.build();
}

struct GraphClassificationResult {
    ClassificationReport report;
    Metrics training;
};

/// Trains one shared model on the disjoint union of the corpus, reads out
/// the mean node embedding per graph, and cross-validates an affine probe.
inline GraphClassificationResult eval_graph_classification(const std::vector<HeteroGraph>& corpus,
                                                           const TrainConfig& cfg, std::size_t folds = 10,
                                                           std::vector<MetaPath> paths = {}) {
    require(!corpus.empty(), ErrorCode::validation, "graph classification: empty corpus");
    std::vector<HeteroGraph> aug;
    std::vector<int> labels;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        require(corpus[i].num_nodes() > 0, ErrorCode::validation, "graph classification: graph " + std::to_string(i) + " is empty");
        require(corpus[i].graph_label().has_value(), ErrorCode::validation,
                "graph classification: graph " + std::to_string(i) + " has no label");
        aug.push_back(with_degree_feature(corpus[i]));
        labels.push_back(*corpus[i].graph_label());
    }
    auto [u, ranges] = disjoint_union(aug);
    if (paths.empty()) paths = default_meta_paths(u);
    auto res = train(u, paths, cfg);
    const Eigen::MatrixXd Z = to_eigen(embed(res.data.ctx, res.params, cfg.model));
    Eigen::MatrixXd R(static_cast<Eigen::Index>(corpus.size()), Z.cols());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto [lo, hi] = ranges[i];
        R.row(static_cast<Eigen::Index>(i)) = Z.middleRows(lo, hi - lo).colwise().mean();
    }
    GraphClassificationResult out;
    out.report = cross_validate(R, labels, folds, cfg.seed);
    out.training = std::move(res.metrics);
    return out;
}

struct SmoothingComparison {
    std::vector<double> mean_model;    // parameter-free mean aggregation
    std::vector<double> with_skip;     // async layers with hop and layer skips
    std::vector<double> without_skip;  // same weights, both skips off
};

/// Over-smoothing metric per layer (0..layers) on a single-type graph, with
/// the raw features as layer 0. The async stack uses freshly initialized
/// SSMs (one per layer) shared by both variants.
inline SmoothingComparison smoothing_comparison(const HeteroGraph& g, std::size_t layers, ModelConfig cfg,
                                                std::uint64_t seed) {
    require(g.num_types() == 1, ErrorCode::validation, "smoothing: expects a single node type");
    require(layers >= 1, ErrorCode::usage, "smoothing: layers must be >= 1");
    const ad::Tensor& X = g.features(0);
    require(X.shape[1] >= 1, ErrorCode::validation, "smoothing: graph has no features");
    SmoothingComparison out;
    out.mean_model = oversmoothing_metric(mean_smoothing_layers(g, X, layers));

    cfg.d = X.shape[1];
    cfg.L = layers;
    GraphContext ctx;
    ctx.graph = &g;
    add_ring_operators(ctx, g, cfg.K);
    ad::ParamStore ps;
    Rng rng(stream_key({seed, 0x5300}));
    for (std::size_t l = 0; l < layers; ++l)
        register_ssm(ps, layer_prefix(l) + ".ssm", cfg.d + 1, cfg.ssm_state, rng, cfg.ssm_init_scale);
    const ad::Value H0 = ad::Value::constant(X);
    auto run = [&](bool skips) {
        ModelConfig c = cfg;
        c.hop_skip = c.layer_skip = skips;
        std::vector<ad::Tensor> hs;
        for (const auto& h : encode_layers(ctx, ps, H0, c)) hs.push_back(h.data());
        return oversmoothing_metric(hs);
    };
    out.with_skip = run(true);
    out.without_skip = run(false);
    return out;
}

} // namespace mapn
