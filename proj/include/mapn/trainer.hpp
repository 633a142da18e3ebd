#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mapn/aggregator.hpp"
#include "mapn/autodiff.hpp"
#include "mapn/optim.hpp"
#include "mapn/param_store.hpp"
#include "mapn/sampler.hpp"

namespace mapn {

// ---------------------------------------------------------------- loss

/// Mean over triples of -log sigma(za . zb) - log sigma(-za . zb').
inline ad::Value nce_loss(const ad::Value& Z, const std::vector<Triple>& triples) {
    using namespace ad;
    require(!triples.empty(), ErrorCode::validation, "nce_loss: empty triple set");
    std::vector<std::size_t> a, b, n;
    for (const auto& t : triples) {
        a.push_back(t.a);
        b.push_back(t.b);
        n.push_back(t.neg);
    }
    const Value za = take_rows(Z, a);
    const Value pos = sum(za * take_rows(Z, b), 1);
    const Value neg = sum(za * take_rows(Z, n), 1);
    return mean(-log_sigmoid(pos) - log_sigmoid(-neg));
}

/// Triples folded into weighted unique pairs. The loss is a sum over
/// positive and negative pairs, so counting each distinct pair once with
/// its multiplicity gives the same value as the triple mean.
struct PairCounts {
    std::vector<std::size_t> pos_a, pos_b, neg_a, neg_b;
    std::vector<double> pos_w, neg_w;
    std::size_t triples = 0;
};

inline PairCounts compress_triples(const std::vector<Triple>& triples) {
    std::map<std::pair<NodeId, NodeId>, std::size_t> pos, neg;
    for (const auto& t : triples) {
        ++pos[{t.a, t.b}];
        ++neg[{t.a, t.neg}];
    }
    PairCounts out;
    out.triples = triples.size();
    for (const auto& [ab, c] : pos) {
        out.pos_a.push_back(ab.first);
        out.pos_b.push_back(ab.second);
        out.pos_w.push_back(static_cast<double>(c));
    }
    for (const auto& [ab, c] : neg) {
        out.neg_a.push_back(ab.first);
        out.neg_b.push_back(ab.second);
        out.neg_w.push_back(static_cast<double>(c));
    }
    return out;
}

inline ad::Value nce_loss(const ad::Value& Z, const PairCounts& pc) {
    using namespace ad;
    require(pc.triples > 0, ErrorCode::validation, "nce_loss: empty triple set");
    const Value pos = sum(take_rows(Z, pc.pos_a) * take_rows(Z, pc.pos_b), 1);
    const Value neg = sum(take_rows(Z, pc.neg_a) * take_rows(Z, pc.neg_b), 1);
    const Value pw = Value::constant(Tensor(Shape::vec(pc.pos_w.size()), pc.pos_w));
    const Value nw = Value::constant(Tensor(Shape::vec(pc.neg_w.size()), pc.neg_w));
    return (sum(pw * -log_sigmoid(pos)) + sum(nw * -log_sigmoid(-neg))) * (1.0 / static_cast<double>(pc.triples));
}

/// Mean cross-entropy of softmax(logits) over the given rows.
inline ad::Value cross_entropy(const ad::Value& logits, const std::vector<std::size_t>& rows,
                               const std::vector<int>& labels) {
    using namespace ad;
    require(!rows.empty(), ErrorCode::validation, "cross_entropy: no labeled rows");
    const std::size_t C = logits.shape()[1];
    Tensor onehot(Shape::mat(rows.size(), C));
    for (std::size_t i = 0; i < rows.size(); ++i) onehot.values[i * C + static_cast<std::size_t>(labels[rows[i]])] = 1.0;
    const Value p = softmax(take_rows(logits, rows), 1);
    return -sum(Value::constant(std::move(onehot)) * log(p)) * (1.0 / static_cast<double>(rows.size()));
}

// ---------------------------------------------------------------- training

enum class SchedulerKind { none, cosine_warm_restarts, reduce_on_plateau };

inline SchedulerKind parse_scheduler(const std::string& s) {
    if (s == "none") return SchedulerKind::none;
    if (s == "cosine-warm-restarts") return SchedulerKind::cosine_warm_restarts;
    if (s == "reduce-on-plateau") return SchedulerKind::reduce_on_plateau;
    fail(ErrorCode::usage, "unknown scheduler '" + s + "'");
}

inline std::string to_string(SchedulerKind s) {
    switch (s) {
    case SchedulerKind::none: return "none";
    case SchedulerKind::cosine_warm_restarts: return "cosine-warm-restarts";
    case SchedulerKind::reduce_on_plateau: return "reduce-on-plateau";
    }
    return "none";
}

struct TrainConfig {
    double learning_rate = 0.1;
    double weight_decay = 0.0;
    std::size_t max_epochs = 500;
    SchedulerKind scheduler = SchedulerKind::cosine_warm_restarts;
    std::size_t cosine_T0 = 50;
    std::size_t cosine_T_mult = 1;
    double cosine_lr_min = 0.0;
    double plateau_factor = 0.5;
    std::size_t plateau_patience = 10;
    std::size_t negatives_per_positive = 1;
    std::size_t window = 2;
    std::size_t resample_every = 0;  // 0 keeps the first samples for every epoch
    bool supervised = false;
    std::uint64_t seed = 7;
    std::size_t workers = 1;
    ModelConfig model;
    WalkConfig walk;

    void validate() const {
        require(learning_rate > 0.0, ErrorCode::usage, "train: learning rate must be positive");
        require(weight_decay >= 0.0, ErrorCode::usage, "train: weight decay must be non-negative");
        require(max_epochs >= 1, ErrorCode::usage, "train: max_epochs must be >= 1");
        require(window >= 1, ErrorCode::usage, "train: window must be >= 1");
        require(negatives_per_positive >= 1, ErrorCode::usage, "train: negatives must be >= 1");
        require(workers >= 1, ErrorCode::usage, "train: workers must be >= 1");
        model.validate();
        walk.validate();
    }
};

struct EpochRecord {
    std::size_t epoch = 0;
    double loss = 0.0;
    double lr = 0.0;
    double wall_ms = 0.0;
};

struct Metrics {
    std::vector<EpochRecord> epochs;
    double best_loss = 0.0;
    std::size_t best_epoch = 0;
    bool stopped_early = false;
    std::string stop_reason;
    std::vector<std::size_t> triples_per_path;
    std::vector<std::size_t> self_filled_per_path;
};

/// Samples and constant model inputs for one sampling round.
struct TrainingData {
    std::vector<TypedNeighborSet> samples;
    std::vector<TripleSet> triples;
    std::vector<PairCounts> pairs;
    GraphContext ctx;
};

inline TrainingData prepare_training_data(const HeteroGraph& g, const std::vector<MetaPath>& paths,
                                          const TrainConfig& cfg, std::uint64_t sample_seed) {
    TrainingData data;
    WalkConfig w = cfg.walk;
    w.seed = sample_seed;
    data.samples = sample_neighbors(g, w, cfg.workers);
    data.ctx = make_context(g, paths, data.samples, w, cfg.model);
    for (std::size_t p = 0; p < paths.size(); ++p) {
        data.triples.push_back(sample_triples(g, data.ctx.paths[p], cfg.window, cfg.negatives_per_positive, w,
                                              cfg.workers));
        require(!data.triples.back().triples.empty(), ErrorCode::sampling,
                "train: meta-path '" + paths[p].name + "' produced no training triples");
        data.pairs.push_back(compress_triples(data.triples.back().triples));
    }
    return data;
}

inline std::uint64_t sample_seed(std::uint64_t seed, std::size_t round) {
    return round == 0 ? seed : stream_key({seed, 0x5a3e, round});
}

struct TrainResult {
    ad::ParamStore params;  // values at the best-loss epoch
    Metrics metrics;
    TrainingData data;      // samples of the last round
};

inline ad::Value training_loss(const ForwardResult& fw, const TrainingData& data, const TrainConfig& cfg,
                               const std::vector<std::size_t>& supervised_rows, const std::vector<int>& labels) {
    ad::Value loss;
    for (const auto& pc : data.pairs) {
        ad::Value l = nce_loss(fw.Z, pc);
        loss = loss ? loss + l : l;
    }
    if (cfg.supervised && fw.logits) loss = loss + cross_entropy(fw.logits, supervised_rows, labels);
    return loss;
}

/// Full training loop. `supervised_rows` lists the labeled nodes used by the
/// optional cross-entropy head.
inline TrainResult train(const HeteroGraph& g, const std::vector<MetaPath>& paths, TrainConfig cfg,
                         const std::vector<std::size_t>& supervised_rows = {},
                         const std::function<void(const EpochRecord&)>& on_epoch = {}) {
    cfg.validate();
    if (cfg.supervised) {
        require(g.has_labels(), ErrorCode::validation, "train: --supervised needs node labels");
        require(!supervised_rows.empty(), ErrorCode::validation, "train: --supervised needs labeled training rows");
        cfg.model.supervised_classes = g.num_classes();
    }
    TrainResult res;
    Rng init_rng(stream_key({cfg.seed, 0x1417}));
    register_model(res.params, g, paths.size(), cfg.model, init_rng);
    res.data = prepare_training_data(g, paths, cfg, sample_seed(cfg.seed, 0));
    for (const auto& t : res.data.triples) res.metrics.triples_per_path.push_back(t.triples.size());
    res.metrics.self_filled_per_path = res.data.ctx.self_filled;

    AdamW opt({0.9, 0.999, 1e-8, cfg.weight_decay});
    std::optional<CosineWarmRestarts> cosine;
    std::optional<ReduceOnPlateau> plateau;
    if (cfg.scheduler == SchedulerKind::cosine_warm_restarts)
        cosine.emplace(cfg.learning_rate, cfg.cosine_T0, cfg.cosine_T_mult, cfg.cosine_lr_min);
    if (cfg.scheduler == SchedulerKind::reduce_on_plateau)
        plateau.emplace(cfg.learning_rate, cfg.plateau_factor, cfg.plateau_patience);
    auto current_lr = [&] { return cosine ? cosine->lr() : plateau ? plateau->lr() : cfg.learning_rate; };

    std::map<std::string, std::vector<double>> best;
    res.metrics.best_loss = std::numeric_limits<double>::infinity();
    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        if (cfg.resample_every > 0 && epoch > 1 && (epoch - 1) % cfg.resample_every == 0)
            res.data = prepare_training_data(g, paths, cfg, sample_seed(cfg.seed, (epoch - 1) / cfg.resample_every));

        res.params.zero_grad();
        const ForwardResult fw = forward(res.data.ctx, res.params, cfg.model);
        const ad::Value loss = training_loss(fw, res.data, cfg, supervised_rows, g.labels());
        const double lv = loss.item();
        const double lr = current_lr();
        if (!std::isfinite(lv)) {
            res.metrics.stopped_early = true;
            res.metrics.stop_reason = "non-finite loss at epoch " + std::to_string(epoch);
            break;
        }
        if (lv < res.metrics.best_loss) {
            res.metrics.best_loss = lv;
            res.metrics.best_epoch = epoch;
            for (const auto& [name, e] : res.params.entries()) best[name] = e.value.data().values;
        }
        ad::backward(loss);
        try {
            opt.step(res.params, lr);
        } catch (const Error& e) {
            res.metrics.stopped_early = true;
            res.metrics.stop_reason = std::string(e.what()) + " at epoch " + std::to_string(epoch);
        }
        if (cosine) cosine->step();
        if (plateau) plateau->step(lv);
        EpochRecord rec{epoch, lv, lr,
                        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count()};
        res.metrics.epochs.push_back(rec);
        if (on_epoch) on_epoch(rec);
        if (res.metrics.stopped_early) break;
    }
    for (auto& [name, e] : res.params.entries())
        if (best.contains(name)) e.value.mutable_data().values = best.at(name);
    return res;
}

/// Final embeddings Z (N x d) for the given parameters.
inline ad::Tensor embed(const GraphContext& ctx, const ad::ParamStore& params, const ModelConfig& cfg) {
    return forward(ctx, params, cfg).Z.data();
}

} // namespace mapn
