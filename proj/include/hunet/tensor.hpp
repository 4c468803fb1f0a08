#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "hunet/rng.hpp"

namespace hunet {

template <typename T>
class Graph;

// Extents of a dense NCHW tensor. All four are always >= 1; parameter vectors
// and scalars reuse the same container with unit extents.
struct Shape {
    int n = 1;
    int c = 1;
    int h = 1;
    int w = 1;

    std::int64_t numel() const {
        return static_cast<std::int64_t>(n) * c * h * w;
    }
    bool operator==(const Shape& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
    bool operator!=(const Shape& o) const { return !(*this == o); }
};

inline std::string to_string(const Shape& s) {
    return "[" + std::to_string(s.n) + "," + std::to_string(s.c) + "," +
           std::to_string(s.h) + "," + std::to_string(s.w) + "]";
}

inline void check_shape_valid(const Shape& s, const char* where) {
    if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1)
        throw std::invalid_argument(std::string(where) + ": invalid shape " + to_string(s));
}

// Global toggle for scanning op outputs for NaN/Inf. On by default so a bad
// backward rule or exploding update surfaces at the op that produced it.
inline std::atomic<bool>& finite_checks_flag() {
    static std::atomic<bool> flag{true};
    return flag;
}
inline void set_finite_checks(bool on) { finite_checks_flag().store(on); }
inline bool finite_checks_enabled() { return finite_checks_flag().load(); }

// Dense 4-D value in row-major (n, c, h, w) order. When produced by an op on
// live inputs it carries a handle into the recording Graph; otherwise it is a
// plain constant.
template <typename T>
struct Tensor {
    Shape shape{};
    std::vector<T> data;
    Graph<T>* graph = nullptr;
    int node = -1;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(s) {
        check_shape_valid(s, "Tensor");
        data.assign(static_cast<std::size_t>(s.numel()), T(0));
    }
    Tensor(Shape s, std::vector<T> d) : shape(s), data(std::move(d)) {
        check_shape_valid(s, "Tensor");
        if (static_cast<std::int64_t>(data.size()) != s.numel())
            throw std::invalid_argument("Tensor: data length " + std::to_string(data.size()) +
                                        " does not match shape " + to_string(s));
    }

    static Tensor zeros(Shape s) { return Tensor(s); }
    static Tensor full(Shape s, T v) {
        Tensor t(s);
        for (auto& x : t.data) x = v;
        return t;
    }
    static Tensor ones(Shape s) { return full(s, T(1)); }
    static Tensor scalar(T v) { return full(Shape{1, 1, 1, 1}, v); }
    static Tensor uniform(Shape s, Rng& rng, T lo, T hi) {
        Tensor t(s);
        for (auto& x : t.data) x = static_cast<T>(rng.uniform(static_cast<double>(lo), static_cast<double>(hi)));
        return t;
    }

    std::int64_t numel() const { return shape.numel(); }
    bool tracked() const { return graph != nullptr; }

    std::int64_t index(int in, int ic, int ih, int iw) const {
        return ((static_cast<std::int64_t>(in) * shape.c + ic) * shape.h + ih) * shape.w + iw;
    }
    T& at(int in, int ic, int ih, int iw) { return data[static_cast<std::size_t>(index(in, ic, ih, iw))]; }
    T at(int in, int ic, int ih, int iw) const { return data[static_cast<std::size_t>(index(in, ic, ih, iw))]; }

    // Scalar extraction; the tensor must be 1x1x1x1.
    T item() const {
        if (numel() != 1)
            throw std::logic_error("Tensor::item: tensor of shape " + to_string(shape) + " is not a scalar");
        return data[0];
    }

    Tensor detached() const {
        Tensor t;
        t.shape = shape;
        t.data = data;
        return t;
    }

    void fill(T v) {
        for (auto& x : data) x = v;
    }
};

// Scans for NaN/Inf and throws naming the producing op and offending index.
template <typename T>
void validate_finite(const Tensor<T>& t, const char* op) {
    if (!finite_checks_enabled()) return;
    for (std::size_t i = 0; i < t.data.size(); ++i) {
        if (!std::isfinite(static_cast<double>(t.data[i])))
            throw std::runtime_error(std::string(op) + ": non-finite value at element " +
                                     std::to_string(i) + " of " + to_string(t.shape));
    }
}

}  // namespace hunet
