#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mapn/autodiff.hpp"
#include "mapn/curvature.hpp"
#include "mapn/graph.hpp"
#include "mapn/sampler.hpp"

namespace mapn {

enum class Activation { identity, tanh, leaky_relu };

inline Activation parse_activation(const std::string& s) {
    if (s == "identity") return Activation::identity;
    if (s == "tanh") return Activation::tanh;
    if (s == "leaky-relu") return Activation::leaky_relu;
    fail(ErrorCode::usage, "unknown activation '" + s + "'");
}

/// Lipschitz constant of the activation (1 for all supported choices).
inline double lipschitz(Activation) { return 1.0; }

/// Reference backbone h^l = sigma(P h^(l-1) W_l), P the mean over
/// {v} and N(v) on the skeleton. An empty weight list means W = I.
struct MeanModel {
    std::vector<ad::Tensor> weights;  // one d x d matrix per layer, or empty
    Activation activation = Activation::identity;
    std::size_t layers = 2;
};

inline std::shared_ptr<const ad::SparseMatrix> mean_operator(const HeteroGraph& g) {
    auto P = std::make_shared<ad::SparseMatrix>();
    P->cols = g.num_nodes();
    for (NodeId v = 0; v < g.num_nodes(); ++v) {
        const auto nb = g.skeleton_neighbors(v);
        const double w = 1.0 / static_cast<double>(nb.size() + 1);
        std::vector<std::pair<std::size_t, double>> row{{v, w}};
        for (NodeId u : nb) row.emplace_back(u, w);
        std::sort(row.begin(), row.end());
        P->push_row(row);
    }
    return P;
}

inline ad::Value apply_activation(const ad::Value& x, Activation a) {
    switch (a) {
    case Activation::identity: return x;
    case Activation::tanh: return ad::tanh(x);
    case Activation::leaky_relu: return ad::leaky_relu(x);
    }
    return x;
}

/// Layer outputs [h^from, ..., h^to] starting from the given h^from.
inline std::vector<ad::Value> mean_model_forward(const MeanModel& m, const std::shared_ptr<const ad::SparseMatrix>& P,
                                                 const ad::Value& h_from, std::size_t from, std::size_t to) {
    std::vector<ad::Value> hs{h_from};
    for (std::size_t l = from; l < to; ++l) {
        ad::Value z = ad::sparse_matmul(P, hs.back());
        if (!m.weights.empty()) z = ad::matmul(z, ad::Value::constant(m.weights.at(l)));
        hs.push_back(apply_activation(z, m.activation));
    }
    return hs;
}

/// J[a][b] = d h^l_a / d h^l'_b as a d x d row-major block (rows: output
/// coordinates of a, columns: input coordinates of b). One reverse sweep
/// per output coordinate.
struct LayerJacobian {
    std::size_t n = 0, d = 0;
    std::vector<double> blocks;  // (a * n + b) * d * d + i * d + j

    double at(std::size_t a, std::size_t b, std::size_t i, std::size_t j) const {
        return blocks[((a * n + b) * d + i) * d + j];
    }

    /// Entrywise p-norm of block (a, b).
    double norm(std::size_t a, std::size_t b, double p) const {
        double s = 0.0;
        for (std::size_t k = 0; k < d * d; ++k) s += std::pow(std::abs(blocks[(a * n + b) * d * d + k]), p);
        return std::pow(s, 1.0 / p);
    }
};

inline LayerJacobian layer_jacobian(const MeanModel& m, const HeteroGraph& g, const ad::Tensor& h0, std::size_t l,
                                    std::size_t l_from) {
    require(l_from < l && l <= m.layers, ErrorCode::validation, "jacobian: need l' < l <= L");
    const auto P = mean_operator(g);
    const std::size_t n = g.num_nodes(), d = h0.shape[1];
    // h^l' is computed without tracking, then becomes the differentiation leaf
    ad::Tensor h_from = mean_model_forward(m, P, ad::Value::constant(h0), 0, l_from).back().data();
    ad::Value leaf = ad::Value::param(h_from);
    const ad::Value out = mean_model_forward(m, P, leaf, l_from, l).back();
    LayerJacobian J{n, d, std::vector<double>(n * n * d * d, 0.0)};
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t i = 0; i < d; ++i) {
            ad::Tensor e(ad::Shape::mat(n, d));
            e.values[a * d + i] = 1.0;
            leaf.zero_grad();
            ad::backward(ad::sum(out * ad::Value::constant(std::move(e))));
            if (!leaf.has_grad()) continue;
            const auto gvals = leaf.grad().values;
            for (std::size_t b = 0; b < n; ++b)
                for (std::size_t j = 0; j < d; ++j) J.blocks[((a * n + b) * d + i) * d + j] = gvals[b * d + j];
        }
    return J;
}

/// Column b of the sensitivity matrix: ||d h^l_a / d h^l'_b||_p for all a.
inline std::vector<double> jacobian_norms(const MeanModel& m, const HeteroGraph& g, const ad::Tensor& h0,
                                          std::size_t l, std::size_t l_from, NodeId b, double p = 2.0) {
    const auto J = layer_jacobian(m, g, h0, l, l_from);
    std::vector<double> out(g.num_nodes());
    for (std::size_t a = 0; a < g.num_nodes(); ++a) out[a] = J.norm(a, b, p);
    return out;
}

/// Degree shared by all nodes, or nullopt.
inline std::optional<std::size_t> regular_degree(const HeteroGraph& g) {
    if (g.num_nodes() == 0) return std::nullopt;
    const std::size_t K = g.skeleton_degree(0);
    for (NodeId v = 1; v < g.num_nodes(); ++v)
        if (g.skeleton_degree(v) != K) return std::nullopt;
    return K;
}

inline std::string degree_histogram(const HeteroGraph& g) {
    std::map<std::size_t, std::size_t> h;
    for (NodeId v = 0; v < g.num_nodes(); ++v) ++h[g.skeleton_degree(v)];
    std::string s;
    for (auto [deg, cnt] : h) s += (s.empty() ? "" : ", ") + std::to_string(deg) + ":" + std::to_string(cnt);
    return "{" + s + "}";
}

inline double entrywise_norm(const ad::Tensor& t, double p) {
    double s = 0.0;
    for (double x : t.values) s += std::pow(std::abs(x), p);
    return std::pow(s, 1.0 / p);
}

struct Theorem1Report {
    double lhs = 0.0, rhs = 0.0, C = 0.0;
    double alpha = 1.0, c = 1.0;
    std::size_t K = 0, l = 0, l_from = 0;
    NodeId b = 0;
    double p = 2.0;
    bool holds = false;
};

inline double theorem1_constant(double alpha, double c, std::size_t K) {
    const double k = static_cast<double>(K);
    return alpha * alpha * c * c * k * k / ((k + 1.0) * (k + 1.0));
}

/// Compares sum_a ||d h^l_a / d h^l'_b||_p^2 with C times the same sum at
/// layer l - 1. c is the largest entrywise p-norm over the layer weights
/// (d^(1/p) when W = I).
inline Theorem1Report theorem1_check(const MeanModel& m, const HeteroGraph& g, const ad::Tensor& h0, std::size_t l,
                                     std::size_t l_from, NodeId b, double p = 2.0) {
    const auto K = regular_degree(g);
    require(K.has_value(), ErrorCode::precondition,
            "theorem1: graph is not regular, degree histogram " + degree_histogram(g));
    require(l_from < l, ErrorCode::validation, "theorem1: need l' < l");
    Theorem1Report r;
    r.K = *K;
    r.l = l;
    r.l_from = l_from;
    r.b = b;
    r.p = p;
    r.alpha = lipschitz(m.activation);
    const std::size_t d = h0.shape[1];
    if (m.weights.empty())
        r.c = std::pow(static_cast<double>(d), 1.0 / p);
    else {
        r.c = 0.0;
        for (const auto& w : m.weights) r.c = std::max(r.c, entrywise_norm(w, p));
    }
    r.C = theorem1_constant(r.alpha, r.c, r.K);
    const auto top = layer_jacobian(m, g, h0, l, l_from);
    for (std::size_t a = 0; a < g.num_nodes(); ++a) r.lhs += std::pow(top.norm(a, b, p), 2.0);
    if (l - 1 == l_from) {
        r.rhs = std::pow(std::pow(static_cast<double>(d), 1.0 / p), 2.0);  // identity block at a = b
    } else {
        const auto below = layer_jacobian(m, g, h0, l - 1, l_from);
        for (std::size_t a = 0; a < g.num_nodes(); ++a) r.rhs += std::pow(below.norm(a, b, p), 2.0);
    }
    r.holds = r.lhs <= r.C * r.rhs * (1.0 + 1e-12);
    return r;
}

struct Theorem2Report {
    double one_hop_sum = 0.0, two_hop_sum = 0.0;
    double eta = 0.0, threshold = 0.0;
    bool precondition = false;
    bool holds = false;  // meaningful only when the precondition is met
    std::size_t K = 0;
    NodeId v = 0;
};

/// Two-layer identity-activation mean model with W = I: the 1-hop and
/// 2-hop sums of ||d h^(l+2)_a / d h^l_v||_p, centered on v.
inline Theorem2Report theorem2_check(const HeteroGraph& g, NodeId v, std::size_t l = 0, double p = 2.0,
                                     std::size_t d = 1) {
    const auto K = regular_degree(g);
    require(K.has_value(), ErrorCode::precondition,
            "theorem2: graph is not regular, degree histogram " + degree_histogram(g));
    Theorem2Report r;
    r.K = *K;
    r.v = v;
    const auto curv = curvature_report(g);
    r.eta = curv.min;
    r.threshold = 0.5 - 3.0 / (2.0 * static_cast<double>(*K));
    r.precondition = r.eta >= r.threshold;

    MeanModel m{{}, Activation::identity, l + 2};
    ad::Tensor h0(ad::Shape::mat(g.num_nodes(), d), 0.5);
    const auto J = layer_jacobian(m, g, h0, l + 2, l);
    const auto rings = hop_rings(g, v, 2);
    for (NodeId a : rings.rings[0]) r.one_hop_sum += J.norm(a, v, p);
    for (NodeId a : rings.rings[1]) r.two_hop_sum += J.norm(a, v, p);
    r.holds = r.one_hop_sum >= r.two_hop_sum - 1e-12;
    return r;
}

/// Mean pairwise Euclidean distance per layer, divided by the layer-0 value.
inline std::vector<double> oversmoothing_metric(const std::vector<ad::Tensor>& layers) {
    require(!layers.empty(), ErrorCode::validation, "oversmoothing: no layers");
    auto mpd = [](const ad::Tensor& h) {
        require(h.shape.rank() == 2 && h.shape[0] >= 2, ErrorCode::validation, "oversmoothing: need >= 2 nodes");
        const std::size_t n = h.shape[0], d = h.shape[1];
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) {
                double q = 0.0;
                for (std::size_t k = 0; k < d; ++k) {
                    const double x = h.values[i * d + k] - h.values[j * d + k];
                    q += x * x;
                }
                s += std::sqrt(q);
            }
        return s / (static_cast<double>(n * (n - 1)) / 2.0);
    };
    const double base = mpd(layers.front());
    std::vector<double> out;
    for (const auto& h : layers) out.push_back(base > 0.0 ? mpd(h) / base : 0.0);
    return out;
}

/// Layers 0..L of the parameter-free mean model (W = I, identity activation).
inline std::vector<ad::Tensor> mean_smoothing_layers(const HeteroGraph& g, const ad::Tensor& h0, std::size_t L) {
    const auto P = mean_operator(g);
    std::vector<ad::Tensor> out;
    for (const auto& v : mean_model_forward({{}, Activation::identity, L}, P, ad::Value::constant(h0), 0, L))
        out.push_back(v.data());
    return out;
}

} // namespace mapn
