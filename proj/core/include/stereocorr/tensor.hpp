#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "stereocorr/errors.hpp"

namespace stereocorr {

struct Shape4 {
    int n = 1; // batch
    int c = 1; // channels
    int h = 1; // rows
    int w = 1; // cols

    friend bool operator==(const Shape4&, const Shape4&) = default;

    std::int64_t numel() const {
        return std::int64_t(n) * c * h * w;
    }
    std::string str() const {
        return std::to_string(n) + "x" + std::to_string(c) + "x" +
               std::to_string(h) + "x" + std::to_string(w);
    }
};

/// Dense rank-4 array (batch, channels, rows, cols) in row-major order,
/// innermost axis = cols. Carries an optional same-shape gradient.
template <typename T>
struct Tensor4T {
    Shape4 shape;
    std::vector<T> values;
    std::vector<T> grad; // empty until ensure_grad()

    Tensor4T() = default;
    explicit Tensor4T(Shape4 s) : shape(s) {
        if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1)
            throw ShapeError("Tensor4: all dimensions must be >= 1, got " + s.str());
        values.assign(size_t(s.numel()), T(0));
    }
    Tensor4T(int n, int c, int h, int w) : Tensor4T(Shape4{n, c, h, w}) {}

    std::int64_t numel() const { return shape.numel(); }

    T* data() { return values.data(); }
    const T* data() const { return values.data(); }

    std::int64_t index(int b, int c, int i, int j) const {
        return ((std::int64_t(b) * shape.c + c) * shape.h + i) * shape.w + j;
    }
    T& at(int b, int c, int i, int j) { return values[size_t(index(b, c, i, j))]; }
    const T& at(int b, int c, int i, int j) const { return values[size_t(index(b, c, i, j))]; }

    T* plane(int b, int c) { return values.data() + size_t((std::int64_t(b) * shape.c + c) * shape.h * shape.w); }
    const T* plane(int b, int c) const {
        return values.data() + size_t((std::int64_t(b) * shape.c + c) * shape.h * shape.w);
    }

    bool has_grad() const { return !grad.empty(); }
    void ensure_grad() {
        if (grad.size() != values.size()) grad.assign(values.size(), T(0));
    }
    void zero_grad() {
        if (has_grad()) std::fill(grad.begin(), grad.end(), T(0));
    }
    T* grad_data() { return grad.data(); }
    const T* grad_data() const { return grad.data(); }
    T* grad_plane(int b, int c) { return grad.data() + size_t((std::int64_t(b) * shape.c + c) * shape.h * shape.w); }

    void fill(T v) { std::fill(values.begin(), values.end(), v); }

    void fill_randn(std::mt19937_64& rng, T stddev) {
        std::normal_distribution<T> dist(T(0), stddev);
        for (auto& v : values) v = dist(rng);
    }
    void fill_uniform(std::mt19937_64& rng, T lo, T hi) {
        std::uniform_real_distribution<T> dist(lo, hi);
        for (auto& v : values) v = dist(rng);
    }
};

using Tensor4 = Tensor4T<float>;

namespace detail {
inline void check_same_shape(const Shape4& a, const Shape4& b, const char* what) {
    if (!(a == b))
        throw ShapeError(std::string(what) + ": shape mismatch " + a.str() + " vs " + b.str());
}
} // namespace detail

} // namespace stereocorr
