#include <gtest/gtest.h>

#include <cmath>

#include "mapn/mapn.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace mapn;
using testing_support::error_code_of;

namespace {

SsmParams random_params(Rng& rng, std::size_t channels, std::size_t state) {
    SsmParams p;
    p.channels = channels;
    p.state = state;
    for (std::size_t k = 0; k < channels * state; ++k) {
        p.A.push_back(-rng.uniform(0.05, 4.0));
        p.B.push_back(rng.normal());
        p.C.push_back(rng.normal());
    }
    for (std::size_t c = 0; c < channels; ++c) {
        p.D.push_back(rng.normal());
        p.gate_w.push_back(rng.normal());
    }
    p.delta = rng.uniform(0.05, 1.0);
    p.gate_b = rng.normal();
    return p;
}

oracle::ScanInstance as_instance(const SsmParams& p) {
    return {p.channels, p.state, p.A, p.B, p.C, p.D, p.gate_w, p.delta, p.gate_b};
}

std::vector<std::vector<double>> random_inputs(Rng& rng, std::size_t T, std::size_t c, double scale = 1.0) {
    std::vector<std::vector<double>> xs(T, std::vector<double>(c));
    for (auto& x : xs)
        for (auto& v : x) v = rng.uniform(-scale, scale);
    return xs;
}

std::vector<ad::Value> as_values(const std::vector<std::vector<double>>& xs) {
    std::vector<ad::Value> out;
    for (const auto& x : xs) out.push_back(ad::Value::constant(ad::Tensor(ad::Shape::mat(1, x.size()), x)));
    return out;
}

double max_abs_diff(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
    double m = 0.0;
    for (std::size_t t = 0; t < a.size(); ++t)
        for (std::size_t c = 0; c < a[t].size(); ++c) m = std::max(m, std::abs(a[t][c] - b[t][c]));
    return m;
}

SsmParams integrator() {
    SsmParams p;
    p.channels = p.state = 1;
    p.A = {0.0};
    p.B = {1.0};
    p.C = {1.0};
    p.D = {0.0};
    p.gate_w = {0.0};
    p.delta = 1.0;
    return p;
}

} // namespace

TEST(Discretize, HalvingStep) {
    EXPECT_NEAR(discretize(-1.0, 1.0, std::log(2.0)).abar, 0.5, 1e-15);
    EXPECT_NEAR(discretize(-1.0, 1.0, std::log(2.0)).bbar, 0.5, 1e-15);
}

TEST(Discretize, VanishingStepIsIdentity) {
    for (double a : {-5.0, -1.0, -0.01}) {
        const auto d = discretize(a, 3.0, 1e-12);
        EXPECT_NEAR(d.abar, 1.0, 1e-10);
        EXPECT_NEAR(d.bbar, 0.0, 1e-10);
    }
}

TEST(Discretize, ZeroDiagonalUsesAnalyticLimit) {
    EXPECT_DOUBLE_EQ(discretize(0.0, 2.5, 0.3).bbar, 0.75);
    EXPECT_DOUBLE_EQ(discretize(0.0, 2.5, 0.3).abar, 1.0);
}

TEST(Discretize, NonPositiveStepIsRejected) {
    EXPECT_EQ(error_code_of([] { discretize(-1.0, 1.0, 0.0); }), ErrorCode::validation);
}

TEST(SelectiveScan, IntegratorIsRunningSum) {
    const auto p = integrator();
    const std::vector<std::vector<double>> xs{{1.0}, {1.0}, {1.0}};
    const auto r = scan_sequential(p, xs, 1.0);
    EXPECT_EQ(r.outputs, (std::vector<std::vector<double>>{{1.0}, {2.0}, {3.0}}));
    const auto tr = selective_scan(SsmValues::constant(p), as_values(xs), 1.0);
    for (std::size_t t = 0; t < 3; ++t) EXPECT_DOUBLE_EQ(tr.outputs[t][0], t + 1.0);
}

TEST(SelectiveScan, ClosedGateFreezesState) {
    Rng rng(1);
    const auto p = random_params(rng, 3, 4);
    const auto xs = random_inputs(rng, 10, 3);
    const auto r = scan_sequential(p, xs, 0.0);
    for (double h : r.final_state) EXPECT_EQ(h, 0.0);
    for (std::size_t t = 0; t < xs.size(); ++t)
        for (std::size_t c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(r.outputs[t][c], p.D[c] * xs[t][c]);
}

TEST(SelectiveScan, MatchesDirectRecurrence) {
    Rng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        const auto p = random_params(rng, 1 + rng.index(4), 1 + rng.index(5));
        const auto xs = random_inputs(rng, 1 + rng.index(40), p.channels);
        EXPECT_LT(max_abs_diff(scan_sequential(p, xs).outputs, oracle::reference_scan(as_instance(p), xs)), 1e-12);
        const double g = 0.3;
        EXPECT_LT(max_abs_diff(scan_sequential(p, xs, g).outputs, oracle::reference_scan(as_instance(p), xs, &g)),
                  1e-12);
    }
}

TEST(SelectiveScan, ChunkedEqualsSequentialOnRandomInstances) {
    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        const auto p = random_params(rng, 1 + rng.index(4), 1 + rng.index(6));
        const auto xs = random_inputs(rng, 64, p.channels, 2.0);
        const std::size_t chunk = 1 + rng.index(17);
        const auto seq = scan_sequential(p, xs), blk = scan_chunked(p, xs, chunk);
        ASSERT_LT(max_abs_diff(seq.outputs, blk.outputs), 1e-10) << "trial " << trial << " chunk " << chunk;
        for (std::size_t k = 0; k < seq.final_state.size(); ++k)
            EXPECT_NEAR(seq.final_state[k], blk.final_state[k], 1e-10);
        EXPECT_EQ(seq.gates, blk.gates);
    }
}

TEST(SelectiveScan, DifferentiableScanEqualsSequential) {
    Rng rng(4);
    for (int trial = 0; trial < 100; ++trial) {
        const auto p = random_params(rng, 1 + rng.index(4), 1 + rng.index(6));
        const auto xs = random_inputs(rng, 1 + rng.index(64), p.channels);
        const auto seq = scan_sequential(p, xs);
        const auto tr = selective_scan(SsmValues::constant(p), as_values(xs));
        std::vector<std::vector<double>> out;
        for (const auto& y : tr.outputs) out.push_back(y.data().values);
        ASSERT_LT(max_abs_diff(seq.outputs, out), 1e-10) << "trial " << trial;
        for (std::size_t t = 0; t < xs.size(); ++t) EXPECT_NEAR(tr.gates[t][0], seq.gates[t], 1e-15);
    }
}

TEST(SelectiveScan, BatchedRowsAreIndependentSequences) {
    Rng rng(5);
    const auto p = random_params(rng, 2, 3);
    const auto a = random_inputs(rng, 7, 2), b = random_inputs(rng, 7, 2);
    std::vector<ad::Value> batch;
    for (std::size_t t = 0; t < 7; ++t)
        batch.push_back(ad::Value::constant(ad::Tensor(ad::Shape::mat(2, 2), {a[t][0], a[t][1], b[t][0], b[t][1]})));
    const auto tr = selective_scan(SsmValues::constant(p), batch);
    const auto ra = scan_sequential(p, a), rb = scan_sequential(p, b);
    for (std::size_t t = 0; t < 7; ++t)
        for (std::size_t c = 0; c < 2; ++c) {
            EXPECT_NEAR(tr.outputs[t].data().values[c], ra.outputs[t][c], 1e-12);
            EXPECT_NEAR(tr.outputs[t].data().values[2 + c], rb.outputs[t][c], 1e-12);
        }
}

TEST(SelectiveScan, StatesStayWithinStabilityBound) {
    Rng rng(6);
    for (int trial = 0; trial < 30; ++trial) {
        const auto p = random_params(rng, 1 + rng.index(3), 1 + rng.index(5));
        double bbar_max = 0.0, abar_max = 0.0;
        for (std::size_t k = 0; k < p.A.size(); ++k) {
            const auto d = discretize(p.A[k], p.B[k], p.delta);
            bbar_max = std::max(bbar_max, std::abs(d.bbar));
            abar_max = std::max(abar_max, d.abar);
        }
        const double bound = bbar_max / (1.0 - abar_max);
        std::vector<std::vector<double>> xs;
        for (std::size_t T = 1; T <= 200; ++T) {
            xs.push_back(random_inputs(rng, 1, p.channels).front());
            if (T % 50 != 0) continue;
            for (double h : scan_sequential(p, xs, 1.0).final_state) EXPECT_LE(std::abs(h), bound * (1 + 1e-12));
        }
        // the worst case, constant saturated input, approaches the bound
        const std::vector<std::vector<double>> ones(400, std::vector<double>(p.channels, 1.0));
        for (double h : scan_sequential(p, ones, 1.0).final_state) EXPECT_LE(std::abs(h), bound * (1 + 1e-12));
    }
}

TEST(SelectiveScan, GateStaysStrictlyInsideUnitInterval) {
    Rng rng(7);
    const auto p = random_params(rng, 2, 2);
    std::vector<std::vector<double>> xs;
    for (double s : {-1e300, -1e4, -800.0, -40.0, 0.0, 40.0, 800.0, 1e4, 1e300}) xs.push_back({s, s});
    for (double g : scan_sequential(p, xs).gates) {
        EXPECT_GT(g, 0.0);
        EXPECT_LT(g, 1.0);
    }
    for (const auto& g : selective_scan(SsmValues::constant(p), as_values(xs)).gates) {
        EXPECT_GT(g[0], 0.0);
        EXPECT_LT(g[0], 1.0);
    }
}

TEST(SelectiveScan, RejectsBadInput) {
    const auto p = integrator();
    EXPECT_EQ(error_code_of([&] { scan_sequential(p, {}); }), ErrorCode::validation);
    EXPECT_EQ(error_code_of([&] { scan_sequential(p, {{1.0, 2.0}}); }), ErrorCode::shape);
    EXPECT_EQ(error_code_of([&] { scan_sequential(p, {{std::nan("")}}); }), ErrorCode::numeric);
    EXPECT_EQ(error_code_of([&] { selective_scan(SsmValues::constant(p), as_values({{INFINITY}})); }),
              ErrorCode::numeric);
}

TEST(SelectiveScan, PassesGradientCheck) {
    for (std::size_t T : {1u, 5u, 17u, 32u}) {
        Rng rng(100 + T);
        const std::size_t c = 3, n = 4, N = 2;
        ad::ParamStore ps;
        register_ssm(ps, "s", c, n, rng, 0.5);
        ps.add("x", ad::Shape::mat(T * N, c), ad::InitSpec::normal(1.0), rng);
        ad::Tensor w(ad::Shape::mat(N, c));
        for (auto& v : w.values) v = rng.normal();
        auto f = [&](ad::ParamStore& p) {
            const auto params = ssm_from_store(p, "s");
            std::vector<ad::Value> xs;
            for (std::size_t t = 0; t < T; ++t) {
                const std::vector<std::size_t> rows{t * N, t * N + 1};
                xs.push_back(ad::take_rows(p.get("x"), rows));
            }
            const auto tr = selective_scan(params, xs);
            ad::Value loss = ad::sum(ad::sum(tr.final_state, 2));
            for (const auto& y : tr.outputs) loss = loss + ad::sum(ad::tanh(y) * ad::Value::constant(w));
            return loss;
        };
        EXPECT_LT(grad_check(f, ps, 1e-6).max_relative_error, 1e-6) << "length " << T;
    }
}

TEST(ScanFilterSet, SingleItemIsOneStepUnroll) {
    Rng rng(8);
    auto p = random_params(rng, 2, 3);
    p.D = {0.0, 0.0};
    const std::vector<double> x{0.4, -0.7};
    const double s = p.gate_b + p.gate_w[0] * x[0] + p.gate_w[1] * x[1];
    const double dt = p.delta / (1.0 + std::exp(-s));
    const auto y = scan_filter_set(SsmValues::constant(p), as_values({x}));
    for (std::size_t c = 0; c < 2; ++c) {
        double expected = 0.0;
        for (std::size_t i = 0; i < 3; ++i) {
            const std::size_t k = c * 3 + i;
            expected += p.C[k] * discretize(p.A[k], p.B[k], dt).bbar * x[c];
        }
        EXPECT_NEAR(y.data().values[c], expected, 1e-14);
    }
}

TEST(ScanFilterSet, ZeroItemsGiveZeroOutput) {
    Rng rng(9);
    const auto p = random_params(rng, 3, 2);
    const auto y = scan_filter_set(SsmValues::constant(p), as_values({{0, 0, 0}, {0, 0, 0}, {0, 0, 0}}), 0.5);
    for (double v : y.data().values) EXPECT_EQ(v, 0.0);
}

TEST(ScanFilterSet, OrderMattersOnAFixedInstance) {
    Rng rng(10);
    const auto p = random_params(rng, 2, 3);
    const auto xs = random_inputs(rng, 4, 2);
    auto reversed = xs;
    std::reverse(reversed.begin(), reversed.end());
    const auto a = scan_filter_set(SsmValues::constant(p), as_values(xs)).data().values;
    const auto b = scan_filter_set(SsmValues::constant(p), as_values(reversed)).data().values;
    EXPECT_GT(std::abs(a[0] - b[0]) + std::abs(a[1] - b[1]), 1e-6);
}

TEST(ScanFilterSet, EmptyListIsRejected) {
    Rng rng(11);
    const auto p = random_params(rng, 1, 1);
    EXPECT_EQ(error_code_of([&] { scan_filter_set(SsmValues::constant(p), {}); }), ErrorCode::validation);
}

TEST(RegisterSsm, InitialValues) {
    Rng rng(12);
    ad::ParamStore ps;
    register_ssm(ps, "m", 2, 3, rng);
    const auto v = ssm_from_store(ps, "m").values();
    const std::vector<double> A{-1, -2, -3, -1, -2, -3};
    for (std::size_t k = 0; k < A.size(); ++k) EXPECT_NEAR(v.A[k], A[k], 1e-15);
    EXPECT_NEAR(v.delta, 0.1, 1e-15);
    EXPECT_EQ(v.D, (std::vector<double>{0, 0}));
    EXPECT_EQ(v.gate_b, 0.0);
}
