#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "vie/errors.hpp"

namespace vie {

/// Ordered quadrature nodes 0 = t_0 < t_1 < ... < t_{N-1} = T for paths in R^d.
class TimeMesh {
public:
    TimeMesh(std::vector<double> nodes, std::size_t dim) : nodes_(std::move(nodes)), dim_(dim) {
        if (nodes_.size() < 2) throw InvalidArgument("TimeMesh: at least 2 nodes required");
        if (dim_ == 0) throw InvalidArgument("TimeMesh: dimension must be positive");
        if (nodes_.front() != 0.0) throw InvalidArgument("TimeMesh: first node must be 0");
        for (std::size_t i = 1; i < nodes_.size(); ++i) {
            if (!(nodes_[i] > nodes_[i - 1]) || !std::isfinite(nodes_[i]))
                throw InvalidArgument("TimeMesh: nodes must be finite and strictly increasing");
        }
    }

    std::size_t size() const noexcept { return nodes_.size(); }
    std::size_t dim() const noexcept { return dim_; }
    double T() const noexcept { return nodes_.back(); }
    double operator[](std::size_t i) const { return nodes_[i]; }
    std::span<const double> nodes() const noexcept { return nodes_; }

    /// Length of the interval [t_{i-1}, t_i], i >= 1.
    double step(std::size_t i) const { return nodes_[i] - nodes_[i - 1]; }

    double max_step() const {
        double h = 0.0;
        for (std::size_t i = 1; i < nodes_.size(); ++i) h = std::max(h, step(i));
        return h;
    }

    /// Index m of the last node with t_m <= t (t clamped into [0,T]).
    std::size_t locate(double t) const {
        if (t <= nodes_.front()) return 0;
        if (t >= nodes_.back()) return nodes_.size() - 1;
        auto it = std::upper_bound(nodes_.begin(), nodes_.end(), t);
        return static_cast<std::size_t>(it - nodes_.begin()) - 1;
    }

    bool same_as(const TimeMesh& other) const noexcept {
        return this == &other || (dim_ == other.dim_ && nodes_ == other.nodes_);
    }

private:
    std::vector<double> nodes_;
    std::size_t dim_;
};

using MeshPtr = std::shared_ptr<const TimeMesh>;

/// N equally spaced nodes on [0,T].
inline MeshPtr make_uniform_mesh(double T, std::size_t N, std::size_t dim) {
    if (!(T > 0.0) || !std::isfinite(T)) throw InvalidArgument("make_uniform_mesh: T must be positive");
    if (N < 2) throw InvalidArgument("make_uniform_mesh: N must be at least 2");
    std::vector<double> nodes(N);
    for (std::size_t i = 0; i < N; ++i) nodes[i] = T * static_cast<double>(i) / static_cast<double>(N - 1);
    nodes.back() = T;
    return std::make_shared<const TimeMesh>(std::move(nodes), dim);
}

inline MeshPtr make_mesh(std::vector<double> nodes, std::size_t dim) {
    return std::make_shared<const TimeMesh>(std::move(nodes), dim);
}

/// A scalar function sampled at the mesh nodes (growth data, psi, norm profiles).
using Sampled = std::vector<double>;

inline Sampled sample(const TimeMesh& mesh, auto&& fn) {
    Sampled out(mesh.size());
    for (std::size_t i = 0; i < mesh.size(); ++i) out[i] = fn(mesh[i]);
    return out;
}

namespace quad {

/// Composite trapezoid of samples g over the nodes t[0..last].
inline double trapezoid(std::span<const double> t, std::span<const double> g, std::size_t last) {
    double acc = 0.0;
    for (std::size_t j = 1; j <= last; ++j) acc += 0.5 * (t[j] - t[j - 1]) * (g[j] + g[j - 1]);
    return acc;
}

inline double trapezoid(std::span<const double> t, std::span<const double> g) {
    return trapezoid(t, g, t.size() - 1);
}

/// Trapezoid weight of node j in the rule over t[0..last].
inline double weight(std::span<const double> t, std::size_t j, std::size_t last) {
    if (last == 0) return 0.0;
    if (j == 0) return 0.5 * (t[1] - t[0]);
    if (j == last) return 0.5 * (t[last] - t[last - 1]);
    return 0.5 * (t[j + 1] - t[j - 1]);
}

/// Conjugate exponent; p = 1 maps to +infinity.
inline double conjugate(double p) {
    if (p < 1.0) throw InvalidArgument("conjugate exponent: p must be >= 1");
    if (p == 1.0) return INFINITY;
    return p / (p - 1.0);
}

/// (integral of |g|^p)^(1/p) by trapezoid on |g|^p; p = inf gives the max.
inline double lp_of_samples(std::span<const double> t, std::span<const double> g, double p, std::size_t last) {
    if (std::isinf(p)) {
        double m = 0.0;
        for (std::size_t j = 0; j <= last; ++j) m = std::max(m, std::abs(g[j]));
        return m;
    }
    if (p < 1.0) throw InvalidArgument("lp norm: p must be >= 1");
    double acc = 0.0;
    for (std::size_t j = 1; j <= last; ++j)
        acc += 0.5 * (t[j] - t[j - 1]) * (std::pow(std::abs(g[j]), p) + std::pow(std::abs(g[j - 1]), p));
    return std::pow(acc, 1.0 / p);
}

}  // namespace quad

/// ||g||_p over the whole mesh for a sampled scalar function.
inline double lp_norm(const TimeMesh& mesh, std::span<const double> g, double p) {
    if (g.size() != mesh.size()) throw InvalidArgument("lp_norm: sample count does not match mesh");
    return quad::lp_of_samples(mesh.nodes(), g, p, mesh.size() - 1);
}

}  // namespace vie
