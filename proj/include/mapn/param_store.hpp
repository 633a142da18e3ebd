#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mapn/autodiff.hpp"
#include "mapn/error.hpp"
#include "mapn/rng.hpp"

namespace mapn::ad {

struct InitSpec {
    enum class Kind { zeros, constant, uniform, normal, explicit_values };
    Kind kind = Kind::zeros;
    double scale = 0.0;  // constant value, uniform half-width, or normal stddev

    static InitSpec zeros() { return {Kind::zeros, 0.0}; }
    static InitSpec constant(double v) { return {Kind::constant, v}; }
    static InitSpec uniform(double half_width) { return {Kind::uniform, half_width}; }
    static InitSpec normal(double stddev) { return {Kind::normal, stddev}; }
    /// Glorot-uniform bound for a fan_in x fan_out matrix.
    static InitSpec glorot(std::size_t fan_in, std::size_t fan_out) {
        return uniform(std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)));
    }
};

/// Named trainable parameters. Iteration order is the lexicographic order of
/// names, which fixes the checkpoint layout and the optimizer sweep order.
class ParamStore {
public:
    struct Entry {
        Value value;
        InitSpec init;
    };

    Value add(const std::string& name, Shape shape, InitSpec init, Rng& rng) {
        require(!entries_.contains(name), ErrorCode::validation, "param store: duplicate name '" + name + "'");
        Tensor t(shape);
        for (auto& x : t.values) {
            switch (init.kind) {
            case InitSpec::Kind::zeros: x = 0.0; break;
            case InitSpec::Kind::constant: x = init.scale; break;
            case InitSpec::Kind::uniform: x = rng.uniform(-init.scale, init.scale); break;
            case InitSpec::Kind::normal: x = rng.normal(0.0, init.scale); break;
            case InitSpec::Kind::explicit_values: break;
            }
        }
        return insert(name, std::move(t), init);
    }

    Value add(const std::string& name, Tensor values) {
        require(!entries_.contains(name), ErrorCode::validation, "param store: duplicate name '" + name + "'");
        return insert(name, std::move(values), InitSpec{InitSpec::Kind::explicit_values, 0.0});
    }

    bool contains(const std::string& name) const { return entries_.contains(name); }

    const Value& get(const std::string& name) const {
        auto it = entries_.find(name);
        require(it != entries_.end(), ErrorCode::validation, "param store: no parameter '" + name + "'");
        return it->second.value;
    }

    Value& get(const std::string& name) {
        auto it = entries_.find(name);
        require(it != entries_.end(), ErrorCode::validation, "param store: no parameter '" + name + "'");
        return it->second.value;
    }

    const std::map<std::string, Entry>& entries() const { return entries_; }
    std::map<std::string, Entry>& entries() { return entries_; }

    std::size_t size() const { return entries_.size(); }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& [_, e] : entries_) n += e.value.size();
        return n;
    }

    void zero_grad() {
        for (auto& [_, e] : entries_) e.value.zero_grad();
    }

    /// Binary checkpoint: "MAPN", u32 version, then per entry
    /// u32 name length, name bytes, u32 rank, u64 dims[rank], f64 payload.
    /// All integers and floats little-endian.
    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        require(out.good(), ErrorCode::io, "checkpoint: cannot open '" + path + "' for writing");
        out.write("MAPN", 4);
        put_u32(out, checkpoint_version);
        for (const auto& [name, e] : entries_) {
            put_u32(out, static_cast<std::uint32_t>(name.size()));
            out.write(name.data(), static_cast<std::streamsize>(name.size()));
            const Shape& s = e.value.shape();
            put_u32(out, static_cast<std::uint32_t>(s.rank()));
            for (std::size_t i = 0; i < s.rank(); ++i) put_u64(out, s[i]);
            for (double x : e.value.data().values) put_u64(out, std::bit_cast<std::uint64_t>(x));
        }
        require(out.good(), ErrorCode::io, "checkpoint: write failed for '" + path + "'");
    }

    static ParamStore load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        require(in.good(), ErrorCode::io, "checkpoint: cannot open '" + path + "'");
        char magic[4];
        in.read(magic, 4);
        require(in.gcount() == 4 && std::string(magic, 4) == "MAPN", ErrorCode::parse,
                "checkpoint: bad magic in '" + path + "'");
        const auto version = get_u32(in);
        require(version == checkpoint_version, ErrorCode::parse,
                "checkpoint: unsupported version " + std::to_string(version));
        ParamStore store;
        while (in.peek() != std::char_traits<char>::eof()) {
            const auto len = get_u32(in);
            std::string name(len, '\0');
            in.read(name.data(), len);
            const auto rank = get_u32(in);
            require(rank <= Shape::max_rank, ErrorCode::parse, "checkpoint: rank too large for '" + name + "'");
            std::array<std::size_t, 3> dims{1, 1, 1};
            for (std::uint32_t i = 0; i < rank; ++i) dims[3 - rank + i] = get_u64(in);
            const Shape shape = Shape::from_padded(dims, rank);
            Tensor t(shape);
            for (auto& x : t.values) x = std::bit_cast<double>(get_u64(in));
            require(in.good(), ErrorCode::parse, "checkpoint: truncated entry '" + name + "'");
            store.add(name, std::move(t));
        }
        return store;
    }

    /// Copies values from `other` for every shared name with equal shape.
    void assign_from(const ParamStore& other) {
        for (auto& [name, e] : entries_) {
            auto it = other.entries_.find(name);
            require(it != other.entries_.end(), ErrorCode::validation, "param store: missing '" + name + "'");
            require(it->second.value.shape() == e.value.shape(), ErrorCode::shape,
                    "param store: shape mismatch for '" + name + "'");
            e.value.mutable_data().values = it->second.value.data().values;
        }
    }

    static constexpr std::uint32_t checkpoint_version = 1;

private:
    Value insert(const std::string& name, Tensor t, InitSpec init) {
        Value v = Value::param(std::move(t));
        entries_.emplace(name, Entry{v, init});
        return v;
    }

    static void put_u32(std::ostream& out, std::uint32_t x) {
        unsigned char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(x >> (8 * i));
        out.write(reinterpret_cast<const char*>(b), 4);
    }
    static void put_u64(std::ostream& out, std::uint64_t x) {
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(x >> (8 * i));
        out.write(reinterpret_cast<const char*>(b), 8);
    }
    static std::uint32_t get_u32(std::istream& in) {
        unsigned char b[4] = {};
        in.read(reinterpret_cast<char*>(b), 4);
        std::uint32_t x = 0;
        for (int i = 0; i < 4; ++i) x |= static_cast<std::uint32_t>(b[i]) << (8 * i);
        return x;
    }
    static std::uint64_t get_u64(std::istream& in) {
        unsigned char b[8] = {};
        in.read(reinterpret_cast<char*>(b), 8);
        std::uint64_t x = 0;
        for (int i = 0; i < 8; ++i) x |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        return x;
    }

    std::map<std::string, Entry> entries_;
};

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::string worst_parameter;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t checked = 0;
};

/// Compares reverse-mode gradients of a scalar computation against central
/// differences, entry by entry. Relative error is
/// |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
inline GradCheckResult grad_check(const std::function<Value(ParamStore&)>& f, ParamStore& params,
                                  double eps = 1e-5) {
    params.zero_grad();
    Value root = f(params);
    require(std::isfinite(root.item()), ErrorCode::numeric, "grad_check: non-finite objective");
    backward(root);

    GradCheckResult result;
    for (auto& [name, entry] : params.entries()) {
        Value& v = entry.value;
        const Tensor analytic = v.grad();
        auto& data = v.mutable_data().values;
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double saved = data[i];
            data[i] = saved + eps;
            const double fp = f(params).item();
            data[i] = saved - eps;
            const double fm = f(params).item();
            data[i] = saved;
            require(std::isfinite(fp) && std::isfinite(fm), ErrorCode::numeric,
                    "grad_check: non-finite value while perturbing '" + name + "'");
            const double numeric = (fp - fm) / (2.0 * eps);
            const double a = analytic.values[i];
            const double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
            ++result.checked;
            if (err > result.max_relative_error) {
                result.max_relative_error = err;
                result.worst_parameter = name;
                result.worst_index = i;
                result.analytic = a;
                result.numeric = numeric;
            }
        }
    }
    return result;
}

} // namespace mapn::ad
