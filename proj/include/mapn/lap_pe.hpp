#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "mapn/error.hpp"
#include "mapn/graph.hpp"
#include "mapn/tensor.hpp"

namespace mapn {

struct LapPe {
    ad::Tensor encoding;              // |V| x k
    std::vector<double> eigenvalues;  // the k selected eigenvalues, ascending
    std::size_t components = 0;       // multiplicity of the zero eigenvalue
};

/// Symmetric-normalized Laplacian I - D^-1/2 A D^-1/2 of the undirected
/// skeleton. Isolated nodes get a zero row (their own zero eigenvalue).
inline Eigen::MatrixXd normalized_laplacian(const HeteroGraph& g) {
    const auto n = static_cast<Eigen::Index>(g.num_nodes());
    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(n, n);
    for (NodeId v = 0; v < g.num_nodes(); ++v) {
        const double dv = static_cast<double>(g.skeleton_degree(v));
        if (dv == 0.0) continue;
        L(v, v) = 1.0;
        for (NodeId u : g.skeleton_neighbors(v))
            L(v, u) = -1.0 / std::sqrt(dv * static_cast<double>(g.skeleton_degree(u)));
    }
    return L;
}

/// k eigenvectors with the smallest eigenvalues above `zero_tol`, each
/// sign-fixed so its largest-magnitude entry is positive.
inline LapPe lap_pe(const HeteroGraph& g, std::size_t k, double zero_tol = 1e-8) {
    const std::size_t n = g.num_nodes();
    require(k >= 1, ErrorCode::validation, "lap_pe: k must be positive");
    require(k < n, ErrorCode::validation,
            "lap_pe: k = " + std::to_string(k) + " must be smaller than |V| = " + std::to_string(n));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(normalized_laplacian(g));
    require(es.info() == Eigen::Success, ErrorCode::numeric, "lap_pe: eigensolver failed");

    LapPe out;
    std::vector<Eigen::Index> picked;
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
        if (es.eigenvalues()[i] <= zero_tol)
            ++out.components;
        else if (picked.size() < k)
            picked.push_back(i);
    }
    require(picked.size() == k, ErrorCode::validation,
            "lap_pe: only " + std::to_string(picked.size()) + " nonzero eigenvalues available (" +
                std::to_string(out.components) + " components), k = " + std::to_string(k));

    out.encoding = ad::Tensor(ad::Shape::mat(n, k));
    for (std::size_t j = 0; j < k; ++j) {
        Eigen::VectorXd v = es.eigenvectors().col(picked[j]);
        Eigen::Index arg = 0;
        for (Eigen::Index i = 1; i < v.size(); ++i)
            if (std::abs(v[i]) > std::abs(v[arg]) + 1e-12) arg = i;
        if (v[arg] < 0) v = -v;
        for (std::size_t i = 0; i < n; ++i) out.encoding.values[i * k + j] = v[static_cast<Eigen::Index>(i)];
        out.eigenvalues.push_back(es.eigenvalues()[picked[j]]);
    }
    return out;
}

} // namespace mapn
