#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "mapn/error.hpp"
#include "mapn/param_store.hpp"

namespace mapn {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

/// AdamW with decoupled weight decay: theta <- theta - lr * wd * theta,
/// then the bias-corrected Adam step.
class AdamW {
public:
    explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

    void step(ad::ParamStore& params, double lr) {
        for (auto& [name, e] : params.entries()) {
            const auto g = e.value.grad().values;
            for (double x : g)
                require(std::isfinite(x), ErrorCode::numeric, "adamw: non-finite gradient in '" + name + "'");
        }
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (auto& [name, e] : params.entries()) {
            auto& theta = e.value.mutable_data().values;
            const auto g = e.value.grad().values;
            auto& m = m_[name];
            auto& v = v_[name];
            m.resize(theta.size(), 0.0);
            v.resize(theta.size(), 0.0);
            for (std::size_t i = 0; i < theta.size(); ++i) {
                theta[i] -= lr * cfg_.weight_decay * theta[i];
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
                theta[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
            }
        }
    }

    std::size_t steps() const { return t_; }

private:
    AdamWConfig cfg_;
    std::size_t t_ = 0;
    std::map<std::string, std::vector<double>> m_, v_;
};

/// Cosine annealing with warm restarts, stepped once per epoch. Cycle i
/// lasts T0 * T_mult^i epochs.
class CosineWarmRestarts {
public:
    CosineWarmRestarts(double base_lr, std::size_t T0, std::size_t T_mult = 1, double lr_min = 0.0)
        : base_(base_lr), lr_min_(lr_min), Ti_(static_cast<double>(T0)), mult_(static_cast<double>(T_mult)) {
        require(T0 >= 1 && T_mult >= 1, ErrorCode::usage, "cosine scheduler: T0 and T_mult must be >= 1");
    }

    double lr() const { return lr_at(t_cur_, Ti_); }

    /// Learning rate at position t_cur inside a cycle of length Ti.
    double lr_at(double t_cur, double Ti) const {
        return lr_min_ + (base_ - lr_min_) * (1.0 + std::cos(std::numbers::pi * t_cur / Ti)) / 2.0;
    }

    void step() {
        t_cur_ += 1.0;
        if (t_cur_ >= Ti_) {
            t_cur_ -= Ti_;
            Ti_ *= mult_;
        }
    }

private:
    double base_, lr_min_, Ti_, mult_;
    double t_cur_ = 0.0;
};

/// Multiplies the rate by `factor` once the loss has failed to improve
/// (relative threshold 1e-4) for more than `patience` consecutive epochs.
class ReduceOnPlateau {
public:
    ReduceOnPlateau(double base_lr, double factor = 0.5, std::size_t patience = 10, double threshold = 1e-4)
        : lr_(base_lr), factor_(factor), patience_(patience), threshold_(threshold) {
        require(factor > 0.0 && factor < 1.0, ErrorCode::usage, "plateau scheduler: factor must lie in (0, 1)");
    }

    double lr() const { return lr_; }

    void step(double loss) {
        if (loss < best_ * (1.0 - threshold_)) {
            best_ = loss;
            bad_ = 0;
        } else if (++bad_ > patience_) {
            lr_ *= factor_;
            bad_ = 0;
        }
    }

private:
    double lr_, factor_;
    std::size_t patience_;
    double threshold_;
    double best_ = std::numeric_limits<double>::infinity();
    std::size_t bad_ = 0;
};

} // namespace mapn
