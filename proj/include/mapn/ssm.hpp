#pragma once

// Diagonal selective state-space scan. Every channel c owns an n-dim state
// with diagonal A[c,:], input vector B[c,:], readout C[c,:] and
// feedthrough D[c]. A scalar gate g_t = sigmoid(x_t . w + b) scales the step
// size, so g_t -> 0 freezes the state and ignores the input.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "mapn/autodiff.hpp"
#include "mapn/error.hpp"
#include "mapn/param_store.hpp"

namespace mapn {

/// Zero-order hold for one diagonal entry: abar = exp(delta a),
/// bbar = (exp(delta a) - 1) / a * b, which is delta * b when a = 0.
struct Discretized {
    double abar;
    double bbar;
};

inline Discretized discretize(double a, double b, double delta) {
    require(std::isfinite(delta) && delta > 0.0, ErrorCode::validation, "discretize: delta must be positive");
    const double z = delta * a;
    return {std::exp(z), delta * ad::detail::phi1(z) * b};
}

/// Plain parameter values, row-major c x n for A, B, C.
struct SsmParams {
    std::size_t channels = 0;
    std::size_t state = 0;
    std::vector<double> A, B, C;
    std::vector<double> D;       // c
    double delta = 0.1;
    std::vector<double> gate_w;  // c
    double gate_b = 0.0;

    void validate() const {
        const std::size_t cn = channels * state;
        require(A.size() == cn && B.size() == cn && C.size() == cn && D.size() == channels &&
                    gate_w.size() == channels,
                ErrorCode::shape, "ssm params: inconsistent sizes");
        require(delta > 0.0, ErrorCode::validation, "ssm params: delta must be positive");
    }
};

struct ScanResult {
    std::vector<std::vector<double>> outputs;  // T x c
    std::vector<double> final_state;           // c x n
    std::vector<double> gates;                 // T
};

namespace ssm_detail {

// sigmoid rounds to exactly 0 or 1 for |s| beyond ~37 / ~745; keep the gate
// strictly inside (0, 1).
inline double open_sigmoid(double s) {
    return std::clamp(ad::detail::stable_sigmoid(s), std::numeric_limits<double>::min(), std::nextafter(1.0, 0.0));
}

inline ad::Value open_sigmoid(const ad::Value& s) {
    return ad::detail::unary(s, "gate_sigmoid", [](double x) { return open_sigmoid(x); },
                             [](double, double y) { return y * (1.0 - y); });
}

inline double gate(const SsmParams& p, const std::vector<double>& x, std::optional<double> fixed) {
    if (fixed) return *fixed;
    double s = p.gate_b;
    for (std::size_t c = 0; c < p.channels; ++c) s += p.gate_w[c] * x[c];
    return open_sigmoid(s);
}

inline void check_inputs(const SsmParams& p, const std::vector<std::vector<double>>& xs) {
    p.validate();
    require(!xs.empty(), ErrorCode::validation, "selective_scan: empty input sequence");
    for (const auto& x : xs) {
        require(x.size() == p.channels, ErrorCode::shape,
                "selective_scan: input has " + std::to_string(x.size()) + " channels, expected " +
                    std::to_string(p.channels));
        for (double v : x) require(std::isfinite(v), ErrorCode::numeric, "selective_scan: non-finite input");
    }
}

} // namespace ssm_detail

/// Step-by-step recurrence h_t = Abar_t h_{t-1} + Bbar_t x_t, y_t = C h_t + D x_t.
inline ScanResult scan_sequential(const SsmParams& p, const std::vector<std::vector<double>>& xs,
                                  std::optional<double> fixed_gate = std::nullopt) {
    ssm_detail::check_inputs(p, xs);
    const std::size_t c = p.channels, n = p.state;
    ScanResult r;
    std::vector<double> h(c * n, 0.0);
    for (const auto& x : xs) {
        const double g = ssm_detail::gate(p, x, fixed_gate);
        const double dt = g * p.delta;
        std::vector<double> y(c, 0.0);
        for (std::size_t ch = 0; ch < c; ++ch) {
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t k = ch * n + i;
                const double z = dt * p.A[k];
                h[k] = std::exp(z) * h[k] + dt * ad::detail::phi1(z) * p.B[k] * x[ch];
                y[ch] += p.C[k] * h[k];
            }
            y[ch] += p.D[ch] * x[ch];
        }
        r.outputs.push_back(std::move(y));
        r.gates.push_back(g);
    }
    r.final_state = std::move(h);
    return r;
}

/// Same recurrence evaluated in blocks. Inside a block the states are
/// computed from a zero start together with the running product of Abar;
/// the carried state is then folded in as h_t = local_t + prod_t * carry.
inline ScanResult scan_chunked(const SsmParams& p, const std::vector<std::vector<double>>& xs, std::size_t chunk = 8,
                               std::optional<double> fixed_gate = std::nullopt) {
    ssm_detail::check_inputs(p, xs);
    require(chunk >= 1, ErrorCode::validation, "scan_chunked: chunk must be >= 1");
    const std::size_t c = p.channels, n = p.state, T = xs.size();
    ScanResult r;
    r.outputs.assign(T, std::vector<double>(c, 0.0));
    r.gates.resize(T);
    for (std::size_t t = 0; t < T; ++t) r.gates[t] = ssm_detail::gate(p, xs[t], fixed_gate);

    std::vector<double> carry(c * n, 0.0);
    for (std::size_t start = 0; start < T; start += chunk) {
        const std::size_t end = std::min(T, start + chunk);
        std::vector<double> local(c * n, 0.0), prod(c * n, 1.0);
        for (std::size_t t = start; t < end; ++t) {
            const double dt = r.gates[t] * p.delta;
            for (std::size_t k = 0; k < c * n; ++k) {
                const double z = dt * p.A[k];
                const double abar = std::exp(z);
                local[k] = abar * local[k] + dt * ad::detail::phi1(z) * p.B[k] * xs[t][k / n];
                prod[k] *= abar;
                const double h = local[k] + prod[k] * carry[k];
                r.outputs[t][k / n] += p.C[k] * h;
            }
            for (std::size_t ch = 0; ch < c; ++ch) r.outputs[t][ch] += p.D[ch] * xs[t][ch];
        }
        for (std::size_t k = 0; k < c * n; ++k) carry[k] = local[k] + prod[k] * carry[k];
    }
    r.final_state = std::move(carry);
    return r;
}

/// Differentiable SSM parameters. A is the effective (negative) diagonal,
/// delta a scalar.
struct SsmValues {
    ad::Value A, B, C, D, delta, gate_w, gate_b;

    std::size_t channels() const { return A.shape()[0]; }
    std::size_t state() const { return A.shape()[1]; }

    static SsmValues constant(const SsmParams& p) {
        p.validate();
        using ad::Shape, ad::Tensor, ad::Value;
        const auto cn = Shape::mat(p.channels, p.state);
        return {Value::constant(Tensor(cn, p.A)),        Value::constant(Tensor(cn, p.B)),
                Value::constant(Tensor(cn, p.C)),        Value::constant(Tensor(Shape::vec(p.channels), p.D)),
                Value::scalar(p.delta),                  Value::constant(Tensor(Shape::vec(p.channels), p.gate_w)),
                Value::scalar(p.gate_b)};
    }

    SsmParams values() const {
        SsmParams p;
        p.channels = channels();
        p.state = state();
        p.A = A.data().values;
        p.B = B.data().values;
        p.C = C.data().values;
        p.D = D.data().values;
        p.delta = delta.item();
        p.gate_w = gate_w.data().values;
        p.gate_b = gate_b.item();
        return p;
    }
};

/// Registers the trainable SSM under `prefix`: A = -exp(a_log) with
/// A[c, i] = -(i + 1) initially, delta = exp(log_delta) = 0.1, B and C
/// normal(0, init_scale), D = 0, gate weights normal(0, init_scale), gate bias 0.
inline void register_ssm(ad::ParamStore& ps, const std::string& prefix, std::size_t channels, std::size_t state,
                         Rng& rng, double init_scale = 0.1) {
    using ad::InitSpec, ad::Shape, ad::Tensor;
    Tensor a_log(Shape::mat(channels, state));
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t i = 0; i < state; ++i) a_log.values[c * state + i] = std::log(static_cast<double>(i + 1));
    ps.add(prefix + ".a_log", std::move(a_log));
    ps.add(prefix + ".b", Shape::mat(channels, state), InitSpec::normal(init_scale), rng);
    ps.add(prefix + ".c", Shape::mat(channels, state), InitSpec::normal(init_scale), rng);
    ps.add(prefix + ".d", Shape::vec(channels), InitSpec::zeros(), rng);
    ps.add(prefix + ".log_delta", Shape::scalar(), InitSpec::constant(std::log(0.1)), rng);
    ps.add(prefix + ".gate_w", Shape::vec(channels), InitSpec::normal(init_scale), rng);
    ps.add(prefix + ".gate_b", Shape::scalar(), InitSpec::zeros(), rng);
}

inline SsmValues ssm_from_store(const ad::ParamStore& ps, const std::string& prefix) {
    return {-ad::exp(ps.get(prefix + ".a_log")), ps.get(prefix + ".b"),
            ps.get(prefix + ".c"),                ps.get(prefix + ".d"),
            ad::exp(ps.get(prefix + ".log_delta")), ps.get(prefix + ".gate_w"),
            ps.get(prefix + ".gate_b")};
}

struct ScanTrace {
    std::vector<ad::Value> outputs;  // each N x c
    ad::Value final_state;           // N x c x n
    std::vector<ad::Value> gates;    // each N x 1
};

/// Batched differentiable scan over N independent sequences. xs[t] is
/// N x c. A fixed gate replaces sigmoid(x . w + b) for every step.
inline ScanTrace selective_scan(const SsmValues& p, const std::vector<ad::Value>& xs,
                                std::optional<double> fixed_gate = std::nullopt) {
    using namespace ad;
    require(!xs.empty(), ErrorCode::validation, "selective_scan: empty input sequence");
    const std::size_t N = xs.front().shape()[0], c = p.channels(), n = p.state();
    ScanTrace tr;
    Value h = Value::constant(Tensor(Shape{N, c, n}));
    for (const auto& x : xs) {
        require(x.shape() == Shape::mat(N, c), ErrorCode::shape,
                "selective_scan: step input has shape " + x.shape().str() + ", expected " + Shape::mat(N, c).str());
        for (double v : x.data().values) require(std::isfinite(v), ErrorCode::numeric, "selective_scan: non-finite input");
        Value g = fixed_gate ? Value::constant(Tensor(Shape::mat(N, 1), *fixed_gate))
                             : ssm_detail::open_sigmoid(matmul(x, reshape(p.gate_w, Shape::mat(c, 1))) + p.gate_b);
        Value dt = reshape(g * p.delta, Shape{N, 1, 1});
        Value z = dt * p.A;                    // N x c x n
        Value abar = exp(z);
        Value bbar = dt * phi1(z) * p.B;
        h = abar * h + bbar * reshape(x, Shape{N, c, 1});
        tr.outputs.push_back(sum(p.C * h, 2) + p.D * x);
        tr.gates.push_back(g);
    }
    tr.final_state = h;
    return tr;
}

/// Runs the scan over an ordered item sequence and returns the last output.
inline ad::Value scan_filter_set(const SsmValues& p, const std::vector<ad::Value>& items,
                                 std::optional<double> fixed_gate = std::nullopt) {
    require(!items.empty(), ErrorCode::validation, "scan_filter_set: empty item list");
    return selective_scan(p, items, fixed_gate).outputs.back();
}

} // namespace mapn
