#pragma once

#include <string>
#include <vector>

#include "mapn/autodiff.hpp"
#include "mapn/param_store.hpp"

namespace mapn {

/// LSTM cell weights under `prefix`: w (in x 4h), u (h x 4h), b (4h).
/// Gate blocks are ordered input, forget, cell, output; the forget bias
/// starts at 1.
inline void register_lstm(ad::ParamStore& ps, const std::string& prefix, std::size_t in, std::size_t hidden,
                          Rng& rng) {
    using ad::InitSpec, ad::Shape, ad::Tensor;
    ps.add(prefix + ".w", Shape::mat(in, 4 * hidden), InitSpec::glorot(in, 4 * hidden), rng);
    ps.add(prefix + ".u", Shape::mat(hidden, 4 * hidden), InitSpec::glorot(hidden, 4 * hidden), rng);
    Tensor b(Shape::vec(4 * hidden));
    for (std::size_t i = hidden; i < 2 * hidden; ++i) b.values[i] = 1.0;
    ps.add(prefix + ".b", std::move(b));
}

/// Hidden states of a batched LSTM over xs (each N x in), in input order.
/// With `reverse` the sequence is consumed back to front and the result is
/// re-aligned so that out[t] belongs to xs[t].
inline std::vector<ad::Value> lstm_run(const ad::ParamStore& ps, const std::string& prefix,
                                       const std::vector<ad::Value>& xs, bool reverse = false) {
    using namespace ad;
    require(!xs.empty(), ErrorCode::validation, "lstm: empty sequence");
    const Value& w = ps.get(prefix + ".w");
    const Value& u = ps.get(prefix + ".u");
    const Value& b = ps.get(prefix + ".b");
    const std::size_t hidden = u.shape()[0];
    const std::size_t N = xs.front().shape()[0];
    Value h = Value::constant(Tensor(Shape::mat(N, hidden)));
    Value c = h;
    std::vector<Value> out(xs.size());
    for (std::size_t s = 0; s < xs.size(); ++s) {
        const std::size_t t = reverse ? xs.size() - 1 - s : s;
        Value z = matmul(xs[t], w) + matmul(h, u) + b;
        Value i = sigmoid(slice(z, 1, 0, hidden));
        Value f = sigmoid(slice(z, 1, hidden, 2 * hidden));
        Value g = tanh(slice(z, 1, 2 * hidden, 3 * hidden));
        Value o = sigmoid(slice(z, 1, 3 * hidden, 4 * hidden));
        c = f * c + i * g;
        h = o * tanh(c);
        out[t] = h;
    }
    return out;
}

inline void register_bilstm(ad::ParamStore& ps, const std::string& prefix, std::size_t in, std::size_t hidden,
                            Rng& rng) {
    register_lstm(ps, prefix + ".fwd", in, hidden, rng);
    register_lstm(ps, prefix + ".bwd", in, hidden, rng);
}

/// mean_t [fwd_t ; bwd_t] over the sequence, N x 2h.
inline ad::Value bilstm_mean(const ad::ParamStore& ps, const std::string& prefix, const std::vector<ad::Value>& xs) {
    using namespace ad;
    const auto f = lstm_run(ps, prefix + ".fwd", xs, false);
    const auto b = lstm_run(ps, prefix + ".bwd", xs, true);
    Value acc = concat({f[0], b[0]}, 1);
    for (std::size_t t = 1; t < xs.size(); ++t) acc = acc + concat({f[t], b[t]}, 1);
    return acc * (1.0 / static_cast<double>(xs.size()));
}

} // namespace mapn
