#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "vie/errors.hpp"
#include "vie/path.hpp"

namespace vie {

struct Ball {
    Vec center;
    double radius = 0.0;
};

struct Box {
    Vec lower;
    Vec upper;
};

/// Convex hull of a nonempty vertex list.
struct Polytope {
    std::vector<Vec> vertices;
};

/// Nonempty convex compact subset of R^d.
class ConvexSet {
public:
    using Variant = std::variant<Ball, Box, Polytope>;

    ConvexSet(Ball b) : v_(std::move(b)) { validate(); }
    ConvexSet(Box b) : v_(std::move(b)) { validate(); }
    ConvexSet(Polytope p) : v_(std::move(p)) { validate(); }

    static ConvexSet point(const Vec& y) { return Ball{y, 0.0}; }
    static ConvexSet interval(double lo, double hi) { return Box{Vec::Constant(1, lo), Vec::Constant(1, hi)}; }

    const Variant& variant() const noexcept { return v_; }
    std::size_t dim() const {
        return std::visit([](const auto& s) -> std::size_t {
            using S = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<S, Ball>) return static_cast<std::size_t>(s.center.size());
            else if constexpr (std::is_same_v<S, Box>) return static_cast<std::size_t>(s.lower.size());
            else return static_cast<std::size_t>(s.vertices.front().size());
        }, v_);
    }

    template <class S> bool is() const noexcept { return std::holds_alternative<S>(v_); }
    template <class S> const S& as() const { return std::get<S>(v_); }

private:
    void validate() const {
        std::visit([](const auto& s) {
            using S = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<S, Ball>) {
                if (!(s.radius >= 0.0) || s.center.size() == 0) throw InvalidArgument("Ball: radius must be >= 0");
            } else if constexpr (std::is_same_v<S, Box>) {
                if (s.lower.size() != s.upper.size() || s.lower.size() == 0 || (s.lower.array() > s.upper.array()).any())
                    throw InvalidArgument("Box: lower <= upper required");
            } else {
                if (s.vertices.empty()) throw InvalidArgument("Polytope: vertex list must be nonempty");
                for (const auto& v : s.vertices)
                    if (v.size() != s.vertices.front().size()) throw InvalidArgument("Polytope: vertex dimension mismatch");
            }
        }, v_);
    }

    Variant v_;
};

struct SupportResult {
    double value;
    Vec point;
};

/// sigma(dir, A) = max over A of <dir, y> with a maximiser. Flat-face ties: lowest-index vertex,
/// centre + radius dir for balls, zero components mapped to the upper bound for boxes.
inline SupportResult support(const ConvexSet& A, const Vec& dir) {
    const double nrm = dir.norm();
    if (!(nrm > 0.0)) throw InvalidArgument("support: direction must be nonzero");
    const Vec u = dir / nrm;
    return std::visit([&](const auto& s) -> SupportResult {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, Ball>) {
            Vec p = s.center + s.radius * u;
            return {u.dot(s.center) + s.radius, std::move(p)};
        } else if constexpr (std::is_same_v<S, Box>) {
            Vec p = s.upper;
            for (Eigen::Index i = 0; i < u.size(); ++i)
                if (u(i) < 0.0) p(i) = s.lower(i);
            return {u.dot(p), std::move(p)};
        } else {
            std::size_t best = 0;
            double val = u.dot(s.vertices[0]);
            for (std::size_t i = 1; i < s.vertices.size(); ++i) {
                const double v = u.dot(s.vertices[i]);
                if (v > val) { val = v; best = i; }
            }
            return {val, s.vertices[best]};
        }
    }, A.variant());
}

namespace detail {

// Nearest point of conv{V} by enumerating vertex subsets of size <= d+1: each affinely
// independent subset is projected onto its affine hull, kept when the barycentric weights are
// nonnegative. The minimiser lies in the relative interior of one such face.
inline Vec project_polytope(const std::vector<Vec>& V, const Vec& x) {
    const std::size_t n = V.size();
    const std::size_t d = static_cast<std::size_t>(x.size());
    const std::size_t kmax = std::min(n, d + 1);
    Vec best = V[0];
    double best_d2 = (x - V[0]).squaredNorm();
    for (std::size_t i = 1; i < n; ++i) {
        const double d2 = (x - V[i]).squaredNorm();
        if (d2 < best_d2) { best_d2 = d2; best = V[i]; }
    }
    std::vector<std::size_t> idx;
    auto visit = [&](auto&& self, std::size_t start, std::size_t size) -> void {
        if (idx.size() == size) {
            // minimise |x - v0 - E a|^2 over a, E = [v_i - v0]
            const auto k = static_cast<Eigen::Index>(size - 1);
            Mat E(static_cast<Eigen::Index>(d), k);
            for (Eigen::Index c = 0; c < k; ++c) E.col(c) = V[idx[static_cast<std::size_t>(c) + 1]] - V[idx[0]];
            Mat G = E.transpose() * E;
            Eigen::LDLT<Mat> ldlt(G);
            if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) return;
            Eigen::JacobiSVD<Mat> svd(G);
            const auto& sv = svd.singularValues();
            if (sv(sv.size() - 1) <= 1e-12 * std::max(1.0, sv(0))) return;
            Vec a = ldlt.solve(E.transpose() * (x - V[idx[0]]));
            if ((a.array() < -1e-12).any() || a.sum() > 1.0 + 1e-12) return;
            Vec p = V[idx[0]] + E * a;
            const double d2 = (x - p).squaredNorm();
            if (d2 < best_d2) { best_d2 = d2; best = p; }
            return;
        }
        for (std::size_t i = start; i < n; ++i) {
            idx.push_back(i);
            self(self, i + 1, size);
            idx.pop_back();
        }
    };
    for (std::size_t size = 2; size <= kmax; ++size) visit(visit, 0, size);
    return best;
}

}  // namespace detail

/// Euclidean nearest point of A to x (unique: R^d is strictly convex).
inline Vec project(const ConvexSet& A, const Vec& x) {
    return std::visit([&](const auto& s) -> Vec {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, Ball>) {
            Vec r = x - s.center;
            const double n = r.norm();
            if (n <= s.radius) return x;
            return s.center + (s.radius / n) * r;
        } else if constexpr (std::is_same_v<S, Box>) {
            return x.cwiseMax(s.lower).cwiseMin(s.upper);
        } else {
            return detail::project_polytope(s.vertices, x);
        }
    }, A.variant());
}

inline double distance(const ConvexSet& A, const Vec& x) { return (x - project(A, x)).norm(); }

/// Componentwise bounding box.
inline Box bounding_box(const ConvexSet& A) {
    return std::visit([](const auto& s) -> Box {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, Ball>) {
            return {s.center.array() - s.radius, s.center.array() + s.radius};
        } else if constexpr (std::is_same_v<S, Box>) {
            return s;
        } else {
            Vec lo = s.vertices[0], hi = s.vertices[0];
            for (const auto& v : s.vertices) { lo = lo.cwiseMin(v); hi = hi.cwiseMax(v); }
            return {lo, hi};
        }
    }, A.variant());
}

/// Largest distance from the origin, the ||A||^+ of growth conditions.
inline double magnitude(const ConvexSet& A) {
    return std::visit([](const auto& s) -> double {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, Ball>) {
            return s.center.norm() + s.radius;
        } else if constexpr (std::is_same_v<S, Box>) {
            return s.lower.cwiseAbs().cwiseMax(s.upper.cwiseAbs()).norm();
        } else {
            double m = 0.0;
            for (const auto& v : s.vertices) m = std::max(m, v.norm());
            return m;
        }
    }, A.variant());
}

/// A convex set containing every argument: exact for intervals and for point/polytope lists,
/// a ball about the first centre for balls, a bounding box otherwise.
inline ConvexSet enclose(const std::vector<ConvexSet>& sets) {
    if (sets.empty()) throw InvalidArgument("enclose: empty list");
    const bool all_balls = std::all_of(sets.begin(), sets.end(), [](const ConvexSet& s) { return s.is<Ball>(); });
    const bool all_points = all_balls && std::all_of(sets.begin(), sets.end(), [](const ConvexSet& s) { return s.as<Ball>().radius == 0.0; });
    const bool all_polys = std::all_of(sets.begin(), sets.end(), [](const ConvexSet& s) { return s.is<Polytope>() || (s.is<Ball>() && s.as<Ball>().radius == 0.0); });
    if (sets.size() == 1) return sets.front();
    if (all_balls && !all_points) {
        const Vec& c0 = sets.front().as<Ball>().center;
        double r = 0.0;
        for (const auto& s : sets) r = std::max(r, (s.as<Ball>().center - c0).norm() + s.as<Ball>().radius);
        return Ball{c0, r};
    }
    if (all_polys && sets.front().dim() > 1) {
        Polytope P;
        for (const auto& s : sets) {
            if (s.is<Ball>()) P.vertices.push_back(s.as<Ball>().center);
            else for (const auto& v : s.as<Polytope>().vertices) P.vertices.push_back(v);
        }
        std::vector<Vec> uniq;
        for (auto& v : P.vertices)
            if (std::none_of(uniq.begin(), uniq.end(), [&](const Vec& u) { return (u - v).norm() == 0.0; })) uniq.push_back(v);
        P.vertices = std::move(uniq);
        return P;
    }
    Box b = bounding_box(sets.front());
    for (const auto& s : sets) {
        Box bs = bounding_box(s);
        b.lower = b.lower.cwiseMin(bs.lower);
        b.upper = b.upper.cwiseMax(bs.upper);
    }
    return b;
}

}  // namespace vie
