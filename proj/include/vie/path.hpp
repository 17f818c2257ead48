#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "vie/errors.hpp"
#include "vie/mesh.hpp"

namespace vie {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Piecewise-linear map from the mesh into R^d; column i holds the value at node i.
class Path {
public:
    Path(MeshPtr mesh, Mat values) : mesh_(std::move(mesh)), values_(std::move(values)) {
        if (!mesh_) throw InvalidArgument("Path: null mesh");
        if (static_cast<std::size_t>(values_.rows()) != mesh_->dim() ||
            static_cast<std::size_t>(values_.cols()) != mesh_->size())
            throw InvalidArgument("Path: values must be d x N");
    }

    static Path zero(const MeshPtr& mesh) {
        return Path(mesh, Mat::Zero(static_cast<Eigen::Index>(mesh->dim()), static_cast<Eigen::Index>(mesh->size())));
    }

    static Path constant(const MeshPtr& mesh, const Vec& v) {
        Path p = zero(mesh);
        p.values_.colwise() = v;
        return p;
    }

    /// Samples fn(t) -> R^d at every node.
    static Path from_function(const MeshPtr& mesh, const std::function<Vec(double)>& fn) {
        Path p = zero(mesh);
        for (std::size_t i = 0; i < mesh->size(); ++i) {
            Vec v = fn((*mesh)[i]);
            if (static_cast<std::size_t>(v.size()) != mesh->dim())
                throw InvalidArgument("Path::from_function: value has wrong dimension");
            p.values_.col(static_cast<Eigen::Index>(i)) = v;
        }
        return p;
    }

    const MeshPtr& mesh_ptr() const noexcept { return mesh_; }
    const TimeMesh& mesh() const noexcept { return *mesh_; }
    std::size_t size() const noexcept { return mesh_->size(); }
    std::size_t dim() const noexcept { return mesh_->dim(); }

    const Mat& values() const noexcept { return values_; }
    Mat& values() noexcept { return values_; }

    auto node(std::size_t i) const { return values_.col(static_cast<Eigen::Index>(i)); }
    auto node(std::size_t i) { return values_.col(static_cast<Eigen::Index>(i)); }

    /// Linear interpolation between nodes; t is clamped into [0,T].
    Vec eval(double t) const {
        const auto& m = *mesh_;
        if (t <= 0.0) return node(0);
        if (t >= m.T()) return node(m.size() - 1);
        std::size_t i = m.locate(t);
        double a = (t - m[i]) / m.step(i + 1);
        return (1.0 - a) * node(i) + a * node(i + 1);
    }

    bool same_mesh(const Path& other) const noexcept { return mesh_->same_as(*other.mesh_); }

    Path& operator+=(const Path& o) { check(o); values_ += o.values_; return *this; }
    Path& operator-=(const Path& o) { check(o); values_ -= o.values_; return *this; }
    Path& operator*=(double a) { values_ *= a; return *this; }

    friend Path operator+(Path a, const Path& b) { return a += b; }
    friend Path operator-(Path a, const Path& b) { return a -= b; }
    friend Path operator*(double s, Path a) { return a *= s; }
    friend Path operator*(Path a, double s) { return a *= s; }

private:
    void check(const Path& o) const {
        if (!same_mesh(o)) throw InvalidArgument("Path: mesh mismatch");
    }

    MeshPtr mesh_;
    Mat values_;
};

/// Max over nodes of the Euclidean norm (exact for piecewise-linear paths).
inline double sup_norm(const Path& x) {
    return x.values().colwise().norm().maxCoeff();
}

inline double sup_distance(const Path& a, const Path& b) {
    if (!a.same_mesh(b)) throw InvalidArgument("sup_distance: mesh mismatch");
    return (a.values() - b.values()).colwise().norm().maxCoeff();
}

/// (int_0^T |x(t)|^p dt)^(1/p), trapezoid on |x|^p.
inline double lp_norm(const Path& x, double p) {
    if (!(p >= 1.0)) throw InvalidArgument("lp_norm: p must be >= 1");
    Eigen::RowVectorXd n = x.values().colwise().norm();
    std::vector<double> g(n.data(), n.data() + n.size());
    return quad::lp_of_samples(x.mesh().nodes(), g, p, x.size() - 1);
}

/// Finite family of paths on one mesh.
class PathFamily {
public:
    PathFamily() = default;
    explicit PathFamily(std::vector<Path> members) : members_(std::move(members)) {
        for (std::size_t i = 1; i < members_.size(); ++i) {
            if (!members_[i].same_mesh(members_[0])) throw InvalidArgument("PathFamily: members must share a mesh");
        }
    }

    void add(Path p) {
        if (!members_.empty() && !p.same_mesh(members_[0]))
            throw InvalidArgument("PathFamily: members must share a mesh");
        members_.push_back(std::move(p));
    }

    std::size_t size() const noexcept { return members_.size(); }
    bool empty() const noexcept { return members_.empty(); }
    const Path& operator[](std::size_t i) const { return members_[i]; }
    const std::vector<Path>& members() const noexcept { return members_; }
    auto begin() const { return members_.begin(); }
    auto end() const { return members_.end(); }

private:
    std::vector<Path> members_;
};

namespace detail {

// Closed balls and time windows admit this relative roundoff slack.
inline constexpr double kClosedSlack = 1e-12;

inline std::vector<double> pairwise_sup_distances(const PathFamily& fam) {
    const std::size_t m = fam.size();
    std::vector<double> d(m * m, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = i + 1; j < m; ++j) d[i * m + j] = d[j * m + i] = sup_distance(fam[i], fam[j]);
    return d;
}

}  // namespace detail

/// sup over members and node pairs with |t - tau| <= xi of |x(t) - x(tau)|.
inline double modulus_of_continuity(const PathFamily& fam, double xi) {
    if (fam.empty()) throw InvalidArgument("modulus_of_continuity: empty family");
    if (!(xi > 0.0)) throw InvalidArgument("modulus_of_continuity: xi must be positive");
    const auto& mesh = fam[0].mesh();
    const double window = xi * (1.0 + detail::kClosedSlack);
    double best = 0.0;
    for (const auto& x : fam) {
        for (std::size_t i = 0; i < mesh.size(); ++i) {
            for (std::size_t j = i + 1; j < mesh.size() && mesh[j] - mesh[i] <= window; ++j)
                best = std::max(best, (x.node(j) - x.node(i)).norm());
        }
    }
    return best;
}

/// Number of sup-norm balls of radius eps, centred at members, covering the family.
///
/// Greedy set cover (largest uncovered coverage first, lowest index on ties), minimised
/// over every pairwise-distance threshold not exceeding eps. Every candidate is a valid
/// cover at eps, so the result bounds the minimal covering number from above, and the
/// minimisation makes it antitone in eps.
inline std::size_t covering_number(const PathFamily& fam, double eps) {
    if (fam.empty()) throw InvalidArgument("covering_number: empty family");
    if (!(eps > 0.0)) throw InvalidArgument("covering_number: eps must be positive");
    const std::size_t m = fam.size();
    if (m == 1) return 1;

    const std::vector<double> dist = detail::pairwise_sup_distances(fam);
    const double reach = eps * (1.0 + detail::kClosedSlack);

    std::vector<std::pair<double, std::pair<std::size_t, std::size_t>>> edges;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = i + 1; j < m; ++j)
            if (dist[i * m + j] <= reach) edges.push_back({dist[i * m + j], {i, j}});
    std::sort(edges.begin(), edges.end());

    const std::size_t words = (m + 63) / 64;
    std::vector<std::uint64_t> adj(m * words, 0);
    auto set_bit = [&](std::size_t row, std::size_t col) { adj[row * words + col / 64] |= (std::uint64_t{1} << (col % 64)); };
    for (std::size_t i = 0; i < m; ++i) set_bit(i, i);

    auto greedy = [&]() {
        std::vector<std::uint64_t> uncovered(words, ~std::uint64_t{0});
        if (m % 64) uncovered.back() = (std::uint64_t{1} << (m % 64)) - 1;
        std::size_t remaining = m, count = 0;
        while (remaining > 0) {
            std::size_t best_c = 0, best_gain = 0;
            for (std::size_t c = 0; c < m; ++c) {
                std::size_t gain = 0;
                for (std::size_t w = 0; w < words; ++w) gain += std::popcount(adj[c * words + w] & uncovered[w]);
                if (gain > best_gain) { best_gain = gain; best_c = c; }
            }
            for (std::size_t w = 0; w < words; ++w) uncovered[w] &= ~adj[best_c * words + w];
            remaining -= best_gain;
            ++count;
        }
        return count;
    };

    std::size_t best = m;
    for (std::size_t e = 0; e < edges.size() && best > 1;) {
        const double level = edges[e].first;
        for (; e < edges.size() && edges[e].first == level; ++e) {
            set_bit(edges[e].second.first, edges[e].second.second);
            set_bit(edges[e].second.second, edges[e].second.first);
        }
        best = std::min(best, greedy());
    }
    return best;
}

/// max over a in A of min over b in B of ||a - b||_sup.
inline double hausdorff_semidistance(const PathFamily& from, const PathFamily& to) {
    if (from.empty() || to.empty()) throw InvalidArgument("hausdorff_semidistance: empty family");
    if (!from[0].same_mesh(to[0])) throw InvalidArgument("hausdorff_semidistance: mesh mismatch");
    double worst = 0.0;
    for (const auto& a : from) {
        double nearest = std::numeric_limits<double>::infinity();
        for (const auto& b : to) nearest = std::min(nearest, sup_distance(a, b));
        worst = std::max(worst, nearest);
    }
    return worst;
}

struct HausdorffReport {
    double a_to_b = 0.0;
    double b_to_a = 0.0;
    double distance = 0.0;
};

inline HausdorffReport hausdorff(const PathFamily& a, const PathFamily& b) {
    HausdorffReport r;
    r.a_to_b = hausdorff_semidistance(a, b);
    r.b_to_a = hausdorff_semidistance(b, a);
    r.distance = std::max(r.a_to_b, r.b_to_a);
    return r;
}

inline double hausdorff_distance(const PathFamily& a, const PathFamily& b) { return hausdorff(a, b).distance; }

}  // namespace vie
