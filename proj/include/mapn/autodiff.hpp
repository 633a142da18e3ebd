#pragma once

// Minimal reverse-mode differentiation over dense float64 arrays.
//
// Every operation returns a new Value. When any operand requires a
// gradient, the result records its parents and a backward rule; otherwise
// it is a plain constant and nothing is retained.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mapn/error.hpp"
#include "mapn/tensor.hpp"

namespace mapn::ad {

struct Node {
    Tensor data;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    std::vector<double>& grad_buffer() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
        return grad;
    }
};

using NodePtr = std::shared_ptr<Node>;

class Value {
public:
    Value() = default;
    explicit Value(NodePtr node) : node_(std::move(node)) {}
    explicit Value(Tensor t, bool requires_grad = false) : node_(std::make_shared<Node>()) {
        node_->data = std::move(t);
        node_->requires_grad = requires_grad;
    }

    static Value constant(Tensor t) { return Value(std::move(t), false); }
    static Value param(Tensor t) { return Value(std::move(t), true); }
    static Value scalar(double x, bool requires_grad = false) {
        return Value(Tensor::scalar(x), requires_grad);
    }

    const Tensor& data() const { return node_->data; }
    Tensor& mutable_data() { return node_->data; }
    const Shape& shape() const { return node_->data.shape; }
    std::size_t size() const { return node_->data.size(); }
    bool requires_grad() const { return node_->requires_grad; }
    const char* op() const { return node_->op; }
    const NodePtr& node() const { return node_; }
    explicit operator bool() const { return static_cast<bool>(node_); }

    double item() const {
        require(size() == 1, ErrorCode::shape,
                std::string("item: expected a single element, got shape ") + shape().str());
        return node_->data.values[0];
    }

    double operator[](std::size_t i) const { return node_->data.values[i]; }

    /// Gradient as a tensor; zeros when nothing has been accumulated.
    Tensor grad() const {
        if (node_->grad.empty()) return Tensor(shape(), 0.0);
        return Tensor(shape(), node_->grad);
    }

    bool has_grad() const { return !node_->grad.empty(); }

    void zero_grad() { node_->grad.clear(); }

private:
    NodePtr node_;
};

namespace detail {

inline void shape_error(const char* op, const Shape& a, const Shape& b) {
    fail(ErrorCode::shape, std::string(op) + ": incompatible shapes " + a.str() + " and " + b.str());
}

inline Value make(Tensor out, const char* op, std::initializer_list<Value> parents,
                  std::function<void(Node&)> fn) {
    auto n = std::make_shared<Node>();
    n->data = std::move(out);
    n->op = op;
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (any) {
        n->requires_grad = true;
        for (const auto& p : parents) n->parents.push_back(p.node());
        n->backward_fn = std::move(fn);
    }
    return Value(std::move(n));
}

inline Value make(Tensor out, const char* op, const std::vector<Value>& parents,
                  std::function<void(Node&)> fn) {
    auto n = std::make_shared<Node>();
    n->data = std::move(out);
    n->op = op;
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (any) {
        n->requires_grad = true;
        for (const auto& p : parents) n->parents.push_back(p.node());
        n->backward_fn = std::move(fn);
    }
    return Value(std::move(n));
}

/// Accumulation target for parent i, or nullptr when it takes no gradient.
inline double* grad_of(Node& self, std::size_t i) {
    Node& p = *self.parents[i];
    return p.requires_grad ? p.grad_buffer().data() : nullptr;
}

struct Broadcast {
    Shape out;
    std::array<std::size_t, 3> dims{};
    std::array<std::size_t, 3> sa{};
    std::array<std::size_t, 3> sb{};
};

inline std::array<std::size_t, 3> strides_for(const std::array<std::size_t, 3>& p,
                                               const std::array<std::size_t, 3>& out) {
    std::array<std::size_t, 3> s{p[1] * p[2], p[2], 1};
    for (int i = 0; i < 3; ++i)
        if (p[i] == 1 && out[i] != 1) s[i] = 0;
    return s;
}

inline Broadcast broadcast(const Shape& a, const Shape& b, const char* op) {
    const auto pa = a.padded();
    const auto pb = b.padded();
    Broadcast bc;
    for (int i = 0; i < 3; ++i) {
        if (pa[i] == pb[i]) bc.dims[i] = pa[i];
        else if (pa[i] == 1) bc.dims[i] = pb[i];
        else if (pb[i] == 1) bc.dims[i] = pa[i];
        else shape_error(op, a, b);
    }
    bc.out = Shape::from_padded(bc.dims, std::max(a.rank(), b.rank()));
    bc.sa = strides_for(pa, bc.dims);
    bc.sb = strides_for(pb, bc.dims);
    return bc;
}

template <class F>
void for_each_broadcast(const Broadcast& bc, F&& f) {
    std::size_t o = 0;
    for (std::size_t i0 = 0; i0 < bc.dims[0]; ++i0)
        for (std::size_t i1 = 0; i1 < bc.dims[1]; ++i1)
            for (std::size_t i2 = 0; i2 < bc.dims[2]; ++i2, ++o)
                f(o, i0 * bc.sa[0] + i1 * bc.sa[1] + i2 * bc.sa[2],
                  i0 * bc.sb[0] + i1 * bc.sb[1] + i2 * bc.sb[2]);
}

/// Elementwise binary op with broadcasting. `da`/`db` return the partial
/// derivative of the output with respect to each operand.
template <class F, class DA, class DB>
Value binary(const Value& a, const Value& b, const char* op, F f, DA da, DB db) {
    const Broadcast bc = broadcast(a.shape(), b.shape(), op);
    Tensor out(bc.out);
    const auto& x = a.data().values;
    const auto& y = b.data().values;
    for_each_broadcast(bc, [&](std::size_t o, std::size_t ia, std::size_t ib) {
        out.values[o] = f(x[ia], y[ib]);
    });
    return make(std::move(out), op, {a, b}, [bc, da, db](Node& self) {
        const auto& x = self.parents[0]->data.values;
        const auto& y = self.parents[1]->data.values;
        const auto& z = self.data.values;
        const auto& g = self.grad;
        double* ga = grad_of(self, 0);
        double* gb = grad_of(self, 1);
        for_each_broadcast(bc, [&](std::size_t o, std::size_t ia, std::size_t ib) {
            if (ga) ga[ia] += g[o] * da(x[ia], y[ib], z[o]);
            if (gb) gb[ib] += g[o] * db(x[ia], y[ib], z[o]);
        });
    });
}

/// Elementwise unary op; `df(x, y)` is dy/dx given input and output.
template <class F, class DF>
Value unary(const Value& a, const char* op, F f, DF df) {
    Tensor out(a.shape());
    const auto& x = a.data().values;
    for (std::size_t i = 0; i < x.size(); ++i) out.values[i] = f(x[i]);
    return make(std::move(out), op, {a}, [df](Node& self) {
        const auto& x = self.parents[0]->data.values;
        const auto& y = self.data.values;
        double* ga = grad_of(self, 0);
        for (std::size_t i = 0; i < x.size(); ++i) ga[i] += self.grad[i] * df(x[i], y[i]);
    });
}

/// Views a shape as (outer, n, inner) around `axis`.
struct AxisSplit {
    std::size_t outer = 1, n = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis, const char* op) {
    require(axis < s.rank(), ErrorCode::shape,
            std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " + s.str());
    AxisSplit sp;
    for (std::size_t i = 0; i < axis; ++i) sp.outer *= s[i];
    sp.n = s[axis];
    for (std::size_t i = axis + 1; i < s.rank(); ++i) sp.inner *= s[i];
    return sp;
}

inline double stable_log_sigmoid(double x) {
    return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

inline double stable_sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// expm1(z)/z and its derivative, with series near zero.
inline double phi1(double z) {
    if (std::abs(z) < 1e-2) {
        double term = 1.0, sum = 1.0;
        for (int k = 2; k <= 8; ++k) {
            term *= z / k;
            sum += term;
        }
        return sum;
    }
    return std::expm1(z) / z;
}

inline double phi1_derivative(double z) {
    if (std::abs(z) < 1e-2) {
        // sum_k k z^(k-1) / (k+1)!
        double sum = 0.0, zp = 1.0, fact = 2.0;
        for (int k = 1; k <= 7; ++k) {
            sum += k * zp / fact;
            zp *= z;
            fact *= (k + 2);
        }
        return sum;
    }
    return (std::exp(z) * (z - 1.0) + 1.0) / (z * z);
}

} // namespace detail

// ---------------------------------------------------------------- arithmetic

inline Value add(const Value& a, const Value& b) {
    return detail::binary(
        a, b, "add", [](double x, double y) { return x + y; },
        [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

inline Value sub(const Value& a, const Value& b) {
    return detail::binary(
        a, b, "sub", [](double x, double y) { return x - y; },
        [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

inline Value mul(const Value& a, const Value& b) {
    return detail::binary(
        a, b, "mul", [](double x, double y) { return x * y; },
        [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

inline Value div(const Value& a, const Value& b) {
    return detail::binary(
        a, b, "div", [](double x, double y) { return x / y; },
        [](double, double y, double) { return 1.0 / y; },
        [](double, double y, double z) { return -z / y; });
}

inline Value operator+(const Value& a, const Value& b) { return add(a, b); }
inline Value operator-(const Value& a, const Value& b) { return sub(a, b); }
inline Value operator*(const Value& a, const Value& b) { return mul(a, b); }
inline Value operator/(const Value& a, const Value& b) { return div(a, b); }
inline Value operator+(const Value& a, double c) { return add(a, Value::scalar(c)); }
inline Value operator-(const Value& a, double c) { return sub(a, Value::scalar(c)); }
inline Value operator*(const Value& a, double c) { return mul(a, Value::scalar(c)); }
inline Value operator*(double c, const Value& a) { return mul(Value::scalar(c), a); }
inline Value operator+(double c, const Value& a) { return add(Value::scalar(c), a); }
inline Value operator-(double c, const Value& a) { return sub(Value::scalar(c), a); }

inline Value neg(const Value& a) {
    return detail::unary(a, "neg", [](double x) { return -x; }, [](double, double) { return -1.0; });
}
inline Value operator-(const Value& a) { return neg(a); }

// ---------------------------------------------------------------- elementwise

inline Value exp(const Value& a) {
    return detail::unary(a, "exp", [](double x) { return std::exp(x); },
                         [](double, double y) { return y; });
}

inline Value log(const Value& a) {
    for (double x : a.data().values)
        require(x > 0.0, ErrorCode::numeric, "log: non-positive input " + std::to_string(x));
    return detail::unary(a, "log", [](double x) { return std::log(x); },
                         [](double x, double) { return 1.0 / x; });
}

inline Value sigmoid(const Value& a) {
    return detail::unary(a, "sigmoid", detail::stable_sigmoid,
                         [](double, double y) { return y * (1.0 - y); });
}

inline Value tanh(const Value& a) {
    return detail::unary(a, "tanh", [](double x) { return std::tanh(x); },
                         [](double, double y) { return 1.0 - y * y; });
}

/// LeakyReLU; at x == 0 the positive-side derivative (1) is used.
inline Value leaky_relu(const Value& a, double slope = 0.01) {
    return detail::unary(
        a, "leaky_relu", [slope](double x) { return x >= 0 ? x : slope * x; },
        [slope](double x, double) { return x >= 0 ? 1.0 : slope; });
}

inline Value relu(const Value& a) { return leaky_relu(a, 0.0); }

/// log(sigmoid(x)) without overflow.
inline Value log_sigmoid(const Value& a) {
    return detail::unary(a, "log_sigmoid", detail::stable_log_sigmoid,
                         [](double x, double) { return detail::stable_sigmoid(-x); });
}

/// expm1(x) / x, continuous at 0 with value 1.
inline Value phi1(const Value& a) {
    return detail::unary(a, "phi1", detail::phi1,
                         [](double x, double) { return detail::phi1_derivative(x); });
}

inline Value square(const Value& a) {
    return detail::unary(a, "square", [](double x) { return x * x; },
                         [](double x, double) { return 2.0 * x; });
}

// ---------------------------------------------------------------- reductions

inline Value sum(const Value& a) {
    double s = 0.0;
    for (double x : a.data().values) s += x;
    return detail::make(Tensor::scalar(s), "sum", {a}, [](Node& self) {
        double* ga = detail::grad_of(self, 0);
        const double g = self.grad[0];
        for (std::size_t i = 0; i < self.parents[0]->data.size(); ++i) ga[i] += g;
    });
}

inline Value mean(const Value& a) {
    const double n = static_cast<double>(a.size());
    double s = 0.0;
    for (double x : a.data().values) s += x;
    return detail::make(Tensor::scalar(s / n), "mean", {a}, [n](Node& self) {
        double* ga = detail::grad_of(self, 0);
        const double g = self.grad[0] / n;
        for (std::size_t i = 0; i < self.parents[0]->data.size(); ++i) ga[i] += g;
    });
}

/// Sum along one axis; the axis is removed from the result shape.
inline Value sum(const Value& a, std::size_t axis) {
    const auto sp = detail::split_axis(a.shape(), axis, "sum");
    Tensor out(a.shape().with_axis_removed(axis));
    const auto& x = a.data().values;
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t k = 0; k < sp.n; ++k)
            for (std::size_t i = 0; i < sp.inner; ++i)
                out.values[o * sp.inner + i] += x[(o * sp.n + k) * sp.inner + i];
    return detail::make(std::move(out), "sum_axis", {a}, [sp](Node& self) {
        double* ga = detail::grad_of(self, 0);
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t k = 0; k < sp.n; ++k)
                for (std::size_t i = 0; i < sp.inner; ++i)
                    ga[(o * sp.n + k) * sp.inner + i] += self.grad[o * sp.inner + i];
    });
}

inline Value mean(const Value& a, std::size_t axis) {
    const auto sp = detail::split_axis(a.shape(), axis, "mean");
    require(sp.n > 0, ErrorCode::shape, "mean: empty axis");
    return sum(a, axis) * (1.0 / static_cast<double>(sp.n));
}

/// Softmax along `axis`, max-shifted for stability.
inline Value softmax(const Value& a, std::size_t axis) {
    const auto sp = detail::split_axis(a.shape(), axis, "softmax");
    require(sp.n > 0, ErrorCode::shape, "softmax: empty axis");
    Tensor out(a.shape());
    const auto& x = a.data().values;
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t i = 0; i < sp.inner; ++i) {
            auto idx = [&](std::size_t k) { return (o * sp.n + k) * sp.inner + i; };
            double m = x[idx(0)];
            for (std::size_t k = 1; k < sp.n; ++k) m = std::max(m, x[idx(k)]);
            double z = 0.0;
            for (std::size_t k = 0; k < sp.n; ++k) z += (out.values[idx(k)] = std::exp(x[idx(k)] - m));
            for (std::size_t k = 0; k < sp.n; ++k) out.values[idx(k)] /= z;
        }
    return detail::make(std::move(out), "softmax", {a}, [sp](Node& self) {
        double* ga = detail::grad_of(self, 0);
        const auto& y = self.data.values;
        const auto& g = self.grad;
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t i = 0; i < sp.inner; ++i) {
                auto idx = [&](std::size_t k) { return (o * sp.n + k) * sp.inner + i; };
                double dot = 0.0;
                for (std::size_t k = 0; k < sp.n; ++k) dot += g[idx(k)] * y[idx(k)];
                for (std::size_t k = 0; k < sp.n; ++k) ga[idx(k)] += y[idx(k)] * (g[idx(k)] - dot);
            }
    });
}

/// Inner product of two vectors of equal length.
inline Value dot(const Value& a, const Value& b) {
    require(a.shape().rank() == 1 && a.shape() == b.shape(), ErrorCode::shape,
            "dot: expected equal-length vectors, got " + a.shape().str() + " and " + b.shape().str());
    return sum(mul(a, b));
}

/// Entrywise p-norm over all elements: (sum |x|^p)^(1/p). Gradient at the
/// zero vector is taken as zero.
inline Value norm_p(const Value& a, double p) {
    require(p >= 1.0, ErrorCode::numeric, "norm_p: p must be >= 1");
    double s = 0.0;
    for (double x : a.data().values) s += std::pow(std::abs(x), p);
    const double nrm = std::pow(s, 1.0 / p);
    return detail::make(Tensor::scalar(nrm), "norm_p", {a}, [p](Node& self) {
        const double nrm = self.data.values[0];
        if (nrm == 0.0) return;
        double* ga = detail::grad_of(self, 0);
        const auto& x = self.parents[0]->data.values;
        const double g = self.grad[0];
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double ax = std::abs(x[i]);
            if (ax == 0.0) continue;
            const double sgn = x[i] > 0 ? 1.0 : -1.0;
            ga[i] += g * sgn * std::pow(ax / nrm, p - 1.0);
        }
    });
}

// ---------------------------------------------------------------- linear algebra

/// (m x k) @ (k x n).
inline Value matmul(const Value& a, const Value& b) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    if (sa.rank() != 2 || sb.rank() != 2 || sa[1] != sb[0]) detail::shape_error("matmul", sa, sb);
    const std::size_t m = sa[0], k = sa[1], n = sb[1];
    Tensor out(Shape::mat(m, n));
    const auto& x = a.data().values;
    const auto& y = b.data().values;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double xv = x[i * k + p];
            if (xv == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) out.values[i * n + j] += xv * y[p * n + j];
        }
    return detail::make(std::move(out), "matmul", {a, b}, [m, k, n](Node& self) {
        const auto& x = self.parents[0]->data.values;
        const auto& y = self.parents[1]->data.values;
        const auto& g = self.grad;
        if (double* ga = detail::grad_of(self, 0)) {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * y[p * n + j];
                    ga[i * k + p] += s;
                }
        }
        if (double* gb = detail::grad_of(self, 1)) {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double xv = x[i * k + p];
                    if (xv == 0.0) continue;
                    for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += xv * g[i * n + j];
                }
        }
    });
}

inline Value transpose(const Value& a) {
    require(a.shape().rank() == 2, ErrorCode::shape, "transpose: expected a matrix, got " + a.shape().str());
    const std::size_t r = a.shape()[0], c = a.shape()[1];
    Tensor out(Shape::mat(c, r));
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.values[j * r + i] = a.data().values[i * c + j];
    return detail::make(std::move(out), "transpose", {a}, [r, c](Node& self) {
        double* ga = detail::grad_of(self, 0);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += self.grad[j * r + i];
    });
}

/// Constant sparse matrix in CSR layout.
struct SparseMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::size_t> row_ptr{0};
    std::vector<std::size_t> col_idx;
    std::vector<double> vals;

    void push_row(const std::vector<std::pair<std::size_t, double>>& entries) {
        for (const auto& [c, v] : entries) {
            col_idx.push_back(c);
            vals.push_back(v);
        }
        row_ptr.push_back(col_idx.size());
        ++rows;
    }
};

/// S (r x c, constant) @ X (c x d).
inline Value sparse_matmul(std::shared_ptr<const SparseMatrix> s, const Value& x) {
    const auto& sx = x.shape();
    require(sx.rank() == 2 && sx[0] == s->cols, ErrorCode::shape,
            "sparse_matmul: matrix has " + std::to_string(s->cols) + " columns, operand shape " + sx.str());
    const std::size_t d = sx[1];
    Tensor out(Shape::mat(s->rows, d));
    const auto& xv = x.data().values;
    for (std::size_t r = 0; r < s->rows; ++r)
        for (std::size_t e = s->row_ptr[r]; e < s->row_ptr[r + 1]; ++e) {
            const double w = s->vals[e];
            const std::size_t c = s->col_idx[e];
            for (std::size_t j = 0; j < d; ++j) out.values[r * d + j] += w * xv[c * d + j];
        }
    return detail::make(std::move(out), "sparse_matmul", {x}, [s, d](Node& self) {
        double* gx = detail::grad_of(self, 0);
        for (std::size_t r = 0; r < s->rows; ++r)
            for (std::size_t e = s->row_ptr[r]; e < s->row_ptr[r + 1]; ++e) {
                const double w = s->vals[e];
                const std::size_t c = s->col_idx[e];
                for (std::size_t j = 0; j < d; ++j) gx[c * d + j] += w * self.grad[r * d + j];
            }
    });
}

// ---------------------------------------------------------------- structure

inline Value reshape(const Value& a, Shape shape) {
    require(shape.size() == a.size(), ErrorCode::shape,
            "reshape: cannot view " + a.shape().str() + " as " + shape.str());
    Tensor out(shape, a.data().values);
    return detail::make(std::move(out), "reshape", {a}, [](Node& self) {
        double* ga = detail::grad_of(self, 0);
        for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    });
}

/// Concatenates along `axis`; all other dimensions must agree.
inline Value concat(const std::vector<Value>& parts, std::size_t axis) {
    require(!parts.empty(), ErrorCode::shape, "concat: no operands");
    const Shape& first = parts.front().shape();
    std::size_t total = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        bool ok = s.rank() == first.rank() && axis < s.rank();
        for (std::size_t i = 0; ok && i < s.rank(); ++i)
            if (i != axis && s[i] != first[i]) ok = false;
        if (!ok) detail::shape_error("concat", first, s);
        total += s[axis];
    }
    const Shape out_shape = first.with_dim(axis, total);
    const auto sp = detail::split_axis(out_shape, axis, "concat");
    Tensor out(out_shape);
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        const std::size_t n = p.shape()[axis];
        const auto& x = p.data().values;
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t k = 0; k < n; ++k)
                for (std::size_t i = 0; i < sp.inner; ++i)
                    out.values[(o * sp.n + off + k) * sp.inner + i] = x[(o * n + k) * sp.inner + i];
        off += n;
    }
    return detail::make(std::move(out), "concat", parts, [sp, offsets](Node& self) {
        for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
            double* gp = detail::grad_of(self, pi);
            if (!gp) continue;
            const std::size_t n = self.parents[pi]->data.size() / (sp.outer * sp.inner);
            for (std::size_t o = 0; o < sp.outer; ++o)
                for (std::size_t k = 0; k < n; ++k)
                    for (std::size_t i = 0; i < sp.inner; ++i)
                        gp[(o * n + k) * sp.inner + i] +=
                            self.grad[(o * sp.n + offsets[pi] + k) * sp.inner + i];
        }
    });
}

/// Half-open slice [begin, end) along `axis`.
inline Value slice(const Value& a, std::size_t axis, std::size_t begin, std::size_t end) {
    const auto sp = detail::split_axis(a.shape(), axis, "slice");
    require(begin <= end && end <= sp.n, ErrorCode::shape,
            "slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") outside axis of size " +
                std::to_string(sp.n));
    const std::size_t n = end - begin;
    Tensor out(a.shape().with_dim(axis, n));
    const auto& x = a.data().values;
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t k = 0; k < n; ++k)
            for (std::size_t i = 0; i < sp.inner; ++i)
                out.values[(o * n + k) * sp.inner + i] = x[(o * sp.n + begin + k) * sp.inner + i];
    return detail::make(std::move(out), "slice", {a}, [sp, n, begin](Node& self) {
        double* ga = detail::grad_of(self, 0);
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t k = 0; k < n; ++k)
                for (std::size_t i = 0; i < sp.inner; ++i)
                    ga[(o * sp.n + begin + k) * sp.inner + i] += self.grad[(o * n + k) * sp.inner + i];
    });
}

/// Selects index `i` along axis 0 and drops that axis.
inline Value select(const Value& a, std::size_t i) {
    return reshape(slice(a, 0, i, i + 1), a.shape().with_axis_removed(0));
}

/// Gathers rows along axis 0 (rows may repeat).
inline Value take_rows(const Value& a, std::span<const std::size_t> rows) {
    require(a.shape().rank() >= 1, ErrorCode::shape, "take_rows: scalar operand");
    const std::size_t n = a.shape()[0];
    const std::size_t w = n ? a.size() / n : 0;
    for (auto r : rows)
        require(r < n, ErrorCode::shape, "take_rows: row " + std::to_string(r) + " out of range " + std::to_string(n));
    Tensor out(a.shape().with_dim(0, rows.size()));
    const auto& x = a.data().values;
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(rows[i] * w), w,
                    out.values.begin() + static_cast<std::ptrdiff_t>(i * w));
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    return detail::make(std::move(out), "take_rows", {a}, [idx = std::move(idx), w](Node& self) {
        double* ga = detail::grad_of(self, 0);
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t j = 0; j < w; ++j) ga[idx[i] * w + j] += self.grad[i * w + j];
    });
}

// ---------------------------------------------------------------- backward

/// Reverse-mode sweep from a scalar root. Intermediate gradients are reset
/// at the start of every sweep; leaf gradients accumulate across sweeps.
inline void backward(const Value& root) {
    require(root.size() == 1, ErrorCode::shape,
            std::string("backward: root must be scalar, got shape ") + root.shape().str());
    if (!root.requires_grad()) return;

    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    // Each sweep fills fresh leaf buffers; earlier leaf gradients are added
    // back at the end, so two identical sweeps give exactly twice the first.
    std::vector<std::pair<Node*, std::vector<double>>> previous;
    for (Node* n : order) {
        if (n->parents.empty() && !n->grad.empty()) previous.emplace_back(n, std::move(n->grad));
        n->grad.clear();
        if (!n->parents.empty()) n->grad.assign(n->data.size(), 0.0);
    }
    root.node()->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (!n->parents.empty() && n->backward_fn) n->backward_fn(*n);
    }
    for (auto& [n, g] : previous) {
        auto& cur = n->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) cur[i] += g[i];
    }
}

} // namespace mapn::ad
