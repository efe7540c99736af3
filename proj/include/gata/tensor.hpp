#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "gata/rng.hpp"

namespace gata::nn {

// Dense row-major tensor. The whole network stack is rank <= 2; vectors are
// stored as 1 x n rows.
template <class T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> v;

    Tensor() = default;
    Tensor(int r, int c) : shape{r, c}, v(static_cast<size_t>(r) * c, T(0)) {
        if (r < 0 || c < 0) throw std::invalid_argument("Tensor: negative dimension");
    }

    static Tensor zeros(int r, int c) { return Tensor(r, c); }
    static Tensor full(int r, int c, T x) {
        Tensor t(r, c);
        std::fill(t.v.begin(), t.v.end(), x);
        return t;
    }
    static Tensor row(std::vector<T> xs) {
        Tensor t;
        t.shape = {1, static_cast<int>(xs.size())};
        t.v = std::move(xs);
        return t;
    }
    static Tensor from(int r, int c, std::vector<T> xs) {
        if (static_cast<size_t>(r) * c != xs.size()) throw std::invalid_argument("Tensor::from: size mismatch");
        Tensor t;
        t.shape = {r, c};
        t.v = std::move(xs);
        return t;
    }

    int rows() const { return shape.empty() ? 0 : shape[0]; }
    int cols() const { return shape.size() < 2 ? (shape.empty() ? 0 : 1) : shape[1]; }
    int64_t numel() const { return static_cast<int64_t>(v.size()); }
    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    bool is_scalar() const { return numel() == 1; }

    T& at(int i, int j) { return v[static_cast<size_t>(i) * cols() + j]; }
    T at(int i, int j) const { return v[static_cast<size_t>(i) * cols() + j]; }

    bool all_finite() const {
        for (T x : v)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }

    std::string shape_str() const {
        return "[" + std::to_string(rows()) + "x" + std::to_string(cols()) + "]";
    }
};

// Trainable (or frozen) weight with its gradient accumulator.
template <class T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    bool trainable = true;

    Parameter() = default;
    Parameter(std::string n, Tensor<T> val, bool train = true)
        : name(std::move(n)), value(std::move(val)), grad(value.rows(), value.cols()), trainable(train) {}

    void zero_grad() { std::fill(grad.v.begin(), grad.v.end(), T(0)); }
};

// Uniform fan-in initialization for weight matrices (rows = fan_in).
template <class T>
Tensor<T> init_uniform(int fan_in, int fan_out, Rng& rng) {
    Tensor<T> t(fan_in, fan_out);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& x : t.v) x = static_cast<T>((rng.real01() * 2.0 - 1.0) * bound);
    return t;
}

// normal(0, 1/sqrt(dim)) for embedding tables of width dim.
template <class T>
Tensor<T> init_embedding(int count, int dim, Rng& rng) {
    Tensor<T> t(count, dim);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
    for (size_t i = 0; i + 1 < t.v.size(); i += 2) {
        double u1 = rng.real01(), u2 = rng.real01();
        while (u1 <= 1e-12) u1 = rng.real01();
        double r = std::sqrt(-2.0 * std::log(u1));
        t.v[i] = static_cast<T>(r * std::cos(6.283185307179586 * u2) * scale);
        t.v[i + 1] = static_cast<T>(r * std::sin(6.283185307179586 * u2) * scale);
    }
    if (t.v.size() % 2 == 1) {
        double u1 = std::max(rng.real01(), 1e-12), u2 = rng.real01();
        t.v.back() = static_cast<T>(std::sqrt(-2.0 * std::log(u1)) *
                                    std::cos(6.283185307179586 * u2) * scale);
    }
    return t;
}

}  // namespace gata::nn
