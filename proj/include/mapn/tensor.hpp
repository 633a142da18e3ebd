#pragma once

#include <array>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mapn/error.hpp"

namespace mapn::ad {

/// Shape of a dense array with at most three axes. Rank 0 is a scalar.
class Shape {
public:
    static constexpr std::size_t max_rank = 3;

    Shape() = default;
    Shape(std::initializer_list<std::size_t> dims) {
        require(dims.size() <= max_rank, ErrorCode::shape, "shape: at most 3 axes supported");
        for (auto d : dims) dims_[rank_++] = d;
    }

    static Shape scalar() { return {}; }
    static Shape from_padded(const std::array<std::size_t, 3>& p, std::size_t rank) {
        Shape s;
        s.rank_ = rank;
        for (std::size_t i = 0; i < rank; ++i) s.dims_[i] = p[3 - rank + i];
        return s;
    }
    static Shape vec(std::size_t n) { return {n}; }
    static Shape mat(std::size_t r, std::size_t c) { return {r, c}; }

    std::size_t rank() const { return rank_; }
    std::size_t operator[](std::size_t axis) const { return dims_[axis]; }

    std::size_t size() const {
        std::size_t n = 1;
        for (std::size_t i = 0; i < rank_; ++i) n *= dims_[i];
        return n;
    }

    /// Dimensions right-aligned into three slots, padded with leading 1s.
    std::array<std::size_t, 3> padded() const {
        std::array<std::size_t, 3> out{1, 1, 1};
        for (std::size_t i = 0; i < rank_; ++i) out[3 - rank_ + i] = dims_[i];
        return out;
    }

    Shape with_axis_removed(std::size_t axis) const {
        Shape s;
        for (std::size_t i = 0; i < rank_; ++i)
            if (i != axis) s.dims_[s.rank_++] = dims_[i];
        return s;
    }

    Shape with_dim(std::size_t axis, std::size_t value) const {
        Shape s = *this;
        s.dims_[axis] = value;
        return s;
    }

    bool operator==(const Shape& o) const {
        if (rank_ != o.rank_) return false;
        for (std::size_t i = 0; i < rank_; ++i)
            if (dims_[i] != o.dims_[i]) return false;
        return true;
    }

    std::string str() const {
        std::ostringstream os;
        os << '(';
        for (std::size_t i = 0; i < rank_; ++i) os << (i ? "," : "") << dims_[i];
        os << ')';
        return os.str();
    }

private:
    std::array<std::size_t, max_rank> dims_{0, 0, 0};
    std::size_t rank_ = 0;
};

/// Row-major dense array of doubles.
struct Tensor {
    Shape shape;
    std::vector<double> values;

    Tensor() : shape(Shape::scalar()), values(1, 0.0) {}
    explicit Tensor(Shape s, double fill = 0.0) : shape(s), values(s.size(), fill) {}
    Tensor(Shape s, std::vector<double> v) : shape(s), values(std::move(v)) {
        require(values.size() == shape.size(), ErrorCode::shape,
                "tensor: " + std::to_string(values.size()) + " values for shape " + shape.str());
    }

    static Tensor scalar(double x) { return Tensor(Shape::scalar(), std::vector<double>{x}); }
    static Tensor vec(std::vector<double> v) {
        const auto n = v.size();
        return Tensor(Shape::vec(n), std::move(v));
    }
    static Tensor mat(std::size_t r, std::size_t c, std::vector<double> v) {
        return Tensor(Shape::mat(r, c), std::move(v));
    }

    std::size_t size() const { return values.size(); }
    double& operator[](std::size_t i) { return values[i]; }
    double operator[](std::size_t i) const { return values[i]; }

    double& at(std::size_t r, std::size_t c) { return values[r * shape[1] + c]; }
    double at(std::size_t r, std::size_t c) const { return values[r * shape[1] + c]; }

    std::span<const double> row(std::size_t r) const {
        const std::size_t w = shape.rank() >= 2 ? shape.size() / shape[0] : shape.size();
        return {values.data() + r * w, w};
    }
};

} // namespace mapn::ad
