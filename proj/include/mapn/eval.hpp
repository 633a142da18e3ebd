#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "mapn/error.hpp"
#include "mapn/graph.hpp"
#include "mapn/rng.hpp"
#include "mapn/tensor.hpp"

namespace mapn {

/// Multinomial logistic regression on standardized inputs, trained by
/// full-batch gradient descent with a step of 1 / Lipschitz bound.
class SoftmaxProbe {
public:
    void fit(const Eigen::MatrixXd& X, const std::vector<int>& y, std::size_t classes, double l2,
             std::size_t iterations = 500) {
        require(X.rows() > 0 && static_cast<std::size_t>(X.rows()) == y.size(), ErrorCode::validation,
                "probe: empty or mismatched training set");
        mean_ = X.colwise().mean();
        Eigen::MatrixXd centered = X.rowwise() - mean_.transpose();
        scale_ = (centered.array().square().colwise().mean()).sqrt().matrix().transpose();
        for (Eigen::Index j = 0; j < scale_.size(); ++j)
            if (scale_[j] < 1e-12) scale_[j] = 1.0;
        const Eigen::MatrixXd Xa = augment(X);
        const auto n = static_cast<double>(Xa.rows());
        Eigen::MatrixXd Y = Eigen::MatrixXd::Zero(Xa.rows(), static_cast<Eigen::Index>(classes));
        for (std::size_t i = 0; i < y.size(); ++i) Y(static_cast<Eigen::Index>(i), y[i]) = 1.0;

        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Xa.transpose() * Xa / n, Eigen::EigenvaluesOnly);
        const double step = 1.0 / (0.5 * es.eigenvalues().maxCoeff() + l2);
        W_ = Eigen::MatrixXd::Zero(Xa.cols(), static_cast<Eigen::Index>(classes));
        for (std::size_t it = 0; it < iterations; ++it) {
            const Eigen::MatrixXd P = softmax_rows(Xa * W_);
            Eigen::MatrixXd G = Xa.transpose() * (P - Y) / n;
            G.topRows(G.rows() - 1) += l2 * W_.topRows(W_.rows() - 1);  // bias row is not decayed
            W_ -= step * G;
        }
    }

    std::vector<int> predict(const Eigen::MatrixXd& X) const {
        const Eigen::MatrixXd S = augment(X) * W_;
        std::vector<int> out(static_cast<std::size_t>(S.rows()));
        for (Eigen::Index i = 0; i < S.rows(); ++i) {
            Eigen::Index arg;
            S.row(i).maxCoeff(&arg);
            out[static_cast<std::size_t>(i)] = static_cast<int>(arg);
        }
        return out;
    }

private:
    Eigen::MatrixXd augment(const Eigen::MatrixXd& X) const {
        Eigen::MatrixXd Z(X.rows(), X.cols() + 1);
        Z.leftCols(X.cols()) = (X.rowwise() - mean_.transpose()).array().rowwise() / scale_.transpose().array();
        Z.col(X.cols()).setOnes();
        return Z;
    }

    static Eigen::MatrixXd softmax_rows(Eigen::MatrixXd S) {
        for (Eigen::Index i = 0; i < S.rows(); ++i) {
            S.row(i).array() -= S.row(i).maxCoeff();
            S.row(i) = S.row(i).array().exp().matrix();
            S.row(i) /= S.row(i).sum();
        }
        return S;
    }

    Eigen::VectorXd mean_, scale_;
    Eigen::MatrixXd W_;
};

inline Eigen::MatrixXd to_eigen(const ad::Tensor& t) {
    require(t.shape.rank() == 2, ErrorCode::shape, "expected a matrix, got shape " + t.shape.str());
    const auto r = static_cast<Eigen::Index>(t.shape[0]), c = static_cast<Eigen::Index>(t.shape[1]);
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(t.values.data(), r, c);
}

inline Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& X, const std::vector<std::size_t>& rows) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), X.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(rows[i]));
    return out;
}

inline double accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
    require(!truth.empty() && pred.size() == truth.size(), ErrorCode::validation, "accuracy: empty or mismatched");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) hit += pred[i] == truth[i];
    return static_cast<double>(hit) / static_cast<double>(truth.size());
}

inline std::pair<double, double> mean_std(const std::vector<double>& xs) {
    const double m = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    double v = 0.0;
    for (double x : xs) v += (x - m) * (x - m);
    return {m, std::sqrt(v / static_cast<double>(xs.size()))};
}

struct ProbeConfig {
    double train_frac = 0.6;
    double val_frac = 0.2;
    double test_frac = 0.2;
    std::size_t splits = 10;
    std::uint64_t seed = 7;
    std::vector<double> l2_grid{1e-4, 1e-3, 1e-2, 1e-1, 1.0};
    std::size_t iterations = 500;
};

struct ClassificationReport {
    double mean = 0.0;
    double std = 0.0;
    std::vector<double> accuracies;
    std::vector<double> chosen_l2;
    std::size_t redraws = 0;
    bool degenerate = false;
};

struct Split {
    std::vector<std::size_t> train, val, test;
};

/// Random split of `items` with every class present in the training part;
/// redrawn up to 10 times.
inline Split draw_split(const std::vector<std::size_t>& items, const std::vector<int>& labels, std::size_t classes,
                        const ProbeConfig& cfg, Rng& rng, std::size_t& redraws) {
    for (std::size_t attempt = 0; attempt <= 10; ++attempt) {
        std::vector<std::size_t> perm = items;
        for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
        const auto n = perm.size();
        const auto ntr = static_cast<std::size_t>(std::round(cfg.train_frac * static_cast<double>(n)));
        const auto nva = static_cast<std::size_t>(std::round(cfg.val_frac * static_cast<double>(n)));
        Split s;
        s.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(ntr));
        s.val.assign(perm.begin() + static_cast<std::ptrdiff_t>(ntr), perm.begin() + static_cast<std::ptrdiff_t>(std::min(n, ntr + nva)));
        s.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(std::min(n, ntr + nva)), perm.end());
        std::vector<bool> seen(classes, false);
        for (auto i : s.train) seen[static_cast<std::size_t>(labels[i])] = true;
        if (std::all_of(seen.begin(), seen.end(), [](bool b) { return b; })) return s;
        if (attempt < 10) ++redraws;
    }
    fail(ErrorCode::sampling, "probe: a class is missing from the training split after 10 redraws");
}

/// Training rows of the probe's first split, for the supervised head.
inline std::vector<std::size_t> supervised_training_rows(const std::vector<int>& labels, const ProbeConfig& cfg = {}) {
    std::vector<std::size_t> items;
    int maxc = -1;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] >= 0) {
            items.push_back(i);
            maxc = std::max(maxc, labels[i]);
        }
    require(!items.empty(), ErrorCode::validation, "supervised: no labeled nodes");
    Rng rng(stream_key({cfg.seed, 0x9e0b}));
    std::size_t redraws = 0;
    auto rows = draw_split(items, labels, static_cast<std::size_t>(maxc + 1), cfg, rng, redraws).train;
    std::sort(rows.begin(), rows.end());
    return rows;
}

/// Frozen-embedding probe: per split, L2 strength chosen on validation
/// accuracy, test accuracy reported. Nodes with label < 0 are skipped.
inline ClassificationReport eval_node_classification(const ad::Tensor& embeddings, const std::vector<int>& labels,
                                                     const ProbeConfig& cfg = {}) {
    require(std::abs(cfg.train_frac + cfg.val_frac + cfg.test_frac - 1.0) < 1e-9, ErrorCode::usage,
            "probe: split fractions must sum to 1");
    require(cfg.train_frac > 0 && cfg.test_frac > 0, ErrorCode::usage, "probe: train and test fractions must be positive");
    require(embeddings.shape.rank() == 2 && embeddings.shape[0] == labels.size(), ErrorCode::shape,
            "probe: embeddings and labels disagree in length");
    std::vector<std::size_t> items;
    int maxc = -1;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] >= 0) {
            items.push_back(i);
            maxc = std::max(maxc, labels[i]);
        }
    require(!items.empty(), ErrorCode::validation, "probe: no labeled nodes");
    const auto classes = static_cast<std::size_t>(maxc + 1);
    const Eigen::MatrixXd X = to_eigen(embeddings);
    ClassificationReport rep;
    Rng rng(stream_key({cfg.seed, 0x9e0b}));
    for (std::size_t s = 0; s < cfg.splits; ++s) {
        const Split sp = draw_split(items, labels, classes, cfg, rng, rep.redraws);
        auto labels_of = [&](const std::vector<std::size_t>& rows) {
            std::vector<int> y;
            for (auto r : rows) y.push_back(labels[r]);
            return y;
        };
        const auto ytr = labels_of(sp.train), yva = labels_of(sp.val), yte = labels_of(sp.test);
        const Eigen::MatrixXd Xtr = gather_rows(X, sp.train);
        double best_l2 = cfg.l2_grid.front(), best_val = -1.0;
        if (!sp.val.empty() && cfg.l2_grid.size() > 1) {
            const Eigen::MatrixXd Xva = gather_rows(X, sp.val);
            for (double l2 : cfg.l2_grid) {
                SoftmaxProbe p;
                p.fit(Xtr, ytr, classes, l2, cfg.iterations);
                const double acc = accuracy(p.predict(Xva), yva);
                if (acc > best_val) {
                    best_val = acc;
                    best_l2 = l2;
                }
            }
        }
        SoftmaxProbe p;
        p.fit(Xtr, ytr, classes, best_l2, cfg.iterations);
        rep.accuracies.push_back(accuracy(p.predict(gather_rows(X, sp.test)), yte));
        rep.chosen_l2.push_back(best_l2);
    }
    std::tie(rep.mean, rep.std) = mean_std(rep.accuracies);
    return rep;
}

/// k-fold cross-validated probe accuracy on per-item feature rows.
inline ClassificationReport cross_validate(const Eigen::MatrixXd& X, const std::vector<int>& labels, std::size_t folds,
                                           std::uint64_t seed, double l2 = 1e-2, std::size_t iterations = 500) {
    const std::size_t n = labels.size();
    require(n >= 2 && static_cast<std::size_t>(X.rows()) == n, ErrorCode::validation, "cross_validate: need >= 2 items");
    ClassificationReport rep;
    const int maxc = *std::max_element(labels.begin(), labels.end());
    if (std::all_of(labels.begin(), labels.end(), [&](int l) { return l == labels.front(); })) {
        rep.degenerate = true;
        rep.mean = 1.0;
        rep.accuracies.assign(1, 1.0);
        return rep;
    }
    folds = std::min(folds, n);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(stream_key({seed, 0xf01d}));
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
    for (std::size_t f = 0; f < folds; ++f) {
        std::vector<std::size_t> tr, te;
        for (std::size_t i = 0; i < n; ++i) (i % folds == f ? te : tr).push_back(perm[i]);
        std::vector<int> ytr, yte;
        for (auto i : tr) ytr.push_back(labels[i]);
        for (auto i : te) yte.push_back(labels[i]);
        SoftmaxProbe p;
        p.fit(gather_rows(X, tr), ytr, static_cast<std::size_t>(maxc + 1), l2, iterations);
        rep.accuracies.push_back(accuracy(p.predict(gather_rows(X, te)), yte));
    }
    std::tie(rep.mean, rep.std) = mean_std(rep.accuracies);
    return rep;
}

/// Average precision: sum over ranks of (R_n - R_{n-1}) P_n with scores
/// sorted descending; tied scores enter as one block.
inline double average_precision(const std::vector<double>& scores, const std::vector<int>& truth) {
    require(scores.size() == truth.size() && !scores.empty(), ErrorCode::validation, "average_precision: bad input");
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
    const auto positives = static_cast<double>(std::count(truth.begin(), truth.end(), 1));
    require(positives > 0, ErrorCode::validation, "average_precision: no positive labels");
    double ap = 0.0, tp = 0.0, seen = 0.0, prev_recall = 0.0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
            tp += truth[idx[j]] == 1;
            seen += 1.0;
            ++j;
        }
        const double recall = tp / positives;
        ap += (recall - prev_recall) * (tp / seen);
        prev_recall = recall;
        i = j;
    }
    return ap;
}

inline double mean_absolute_error(const std::vector<double>& pred, const std::vector<double>& truth) {
    require(pred.size() == truth.size() && !pred.empty(), ErrorCode::validation, "mean_absolute_error: bad input");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - truth[i]);
    return s / static_cast<double>(pred.size());
}

} // namespace mapn
