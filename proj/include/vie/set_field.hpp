#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <regex>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "vie/convex_set.hpp"
#include "vie/errors.hpp"
#include "vie/path.hpp"
#include "vie/solver.hpp"

namespace vie {

using SetFn = std::function<ConvexSet(double t, const Vec& x)>;

/// Convex-compact-valued right-hand side F(t, x).
class SetField {
public:
    SetField(std::size_t dim, SetFn eval, std::string name = {}) : dim_(dim), eval_(std::move(eval)), name_(std::move(name)) {
        if (dim_ == 0) throw InvalidArgument("SetField: dimension must be positive");
        if (!eval_) throw InvalidArgument("SetField: empty evaluation function");
    }

    ConvexSet operator()(double t, const Vec& x) const { return eval_(t, x); }

    std::size_t dim() const noexcept { return dim_; }
    const std::string& name() const noexcept { return name_; }

    /// Optional Lipschitz modulus of x -> F(t,x) in the Hausdorff metric.
    std::optional<double> lipschitz;

private:
    std::size_t dim_;
    SetFn eval_;
    std::string name_;
};

/// F(t,x) = {f(t,x)}.
inline SetField singleton_field(std::size_t dim, RhsFn f, std::string name = "singleton") {
    return SetField(dim, [f = std::move(f)](double t, const Vec& x) { return ConvexSet::point(f(t, x)); }, std::move(name));
}

/// Named fields addressable from experiment configs:
///   unit-box              F = [-1,1]^d
///   band(lo,hi)           F = [lo,hi]^d
///   affine-interval(a)    F(t,x) = prod_i [a x_i - 1, a x_i + 1]
///   ball-sine(rho)        F(t,x) = ball(sin(x), rho)  (sin componentwise)
inline SetField make_catalog_field(const std::string& spec, std::size_t dim) {
    const auto d = static_cast<Eigen::Index>(dim);
    auto args = [&](const std::string& head, std::size_t count) -> std::optional<std::vector<double>> {
        const std::regex re("^" + head + R"(\(([^)]*)\)$)");
        std::smatch m;
        if (!std::regex_match(spec, m, re)) return std::nullopt;
        std::vector<double> out;
        std::string body = m[1].str();
        std::size_t pos = 0;
        while (pos <= body.size()) {
            std::size_t comma = body.find(',', pos);
            std::string tok = body.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
            try {
                out.push_back(std::stod(tok));
            } catch (const std::exception&) {
                throw InvalidArgument("bad field arguments: " + spec);
            }
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        if (out.size() != count) throw InvalidArgument("wrong number of field arguments: " + spec);
        return out;
    };
    if (spec == "unit-box") {
        SetField F(dim, [d](double, const Vec&) { return ConvexSet(Box{Vec::Constant(d, -1.0), Vec::Constant(d, 1.0)}); }, spec);
        F.lipschitz = 0.0;
        return F;
    }
    if (auto a = args("band", 2)) {
        const double lo = (*a)[0], hi = (*a)[1];
        if (lo > hi) throw InvalidArgument("band: lo must not exceed hi");
        SetField F(dim, [d, lo, hi](double, const Vec&) { return ConvexSet(Box{Vec::Constant(d, lo), Vec::Constant(d, hi)}); }, spec);
        F.lipschitz = 0.0;
        return F;
    }
    if (auto a = args("affine-interval", 1)) {
        const double s = (*a)[0];
        SetField F(dim, [s](double, const Vec& x) { return ConvexSet(Box{(s * x).array() - 1.0, (s * x).array() + 1.0}); }, spec);
        F.lipschitz = std::abs(s);
        return F;
    }
    if (auto a = args("ball-sine", 1)) {
        const double rho = (*a)[0];
        if (rho < 0.0) throw InvalidArgument("ball-sine: radius must be >= 0");
        SetField F(dim, [rho](double, const Vec& x) { return ConvexSet(Ball{x.array().sin().matrix(), rho}); }, spec);
        F.lipschitz = 1.0;
        return F;
    }
    throw InvalidArgument("unknown field: " + spec);
}

/// Probe points of the ball B(x, r): centre, x +- r e_i, and x + (r / sqrt d)(+-1,...,+-1) for d > 1.
inline std::vector<Vec> ball_probes(const Vec& x, double r) {
    const auto d = x.size();
    std::vector<Vec> probes{x};
    if (r == 0.0) return probes;
    for (Eigen::Index i = 0; i < d; ++i) {
        Vec e = Vec::Zero(d);
        e(i) = r;
        probes.push_back(x + e);
        probes.push_back(x - e);
    }
    if (d > 1) {
        const double a = r / std::sqrt(static_cast<double>(d));
        for (std::size_t mask = 0; mask < (std::size_t{1} << d); ++mask) {
            Vec v(d);
            for (Eigen::Index i = 0; i < d; ++i) v(i) = (mask >> i) & 1U ? a : -a;
            probes.push_back(x + v);
        }
    }
    return probes;
}

/// F_r(t,x) = a convex set containing F(t,y) for every probe y of B(x, r); F_0 = F.
inline SetField inflate_field(const SetField& F, double r) {
    if (!(r >= 0.0)) throw InvalidArgument("inflate_field: r must be >= 0");
    SetField out(F.dim(), [F, r](double t, const Vec& x) {
        if (r == 0.0) return F(t, x);
        std::vector<ConvexSet> sets;
        for (const auto& y : ball_probes(x, r)) sets.push_back(F(t, y));
        return enclose(sets);
    }, F.name() + "+inflate");
    if (F.lipschitz) out.lipschitz = F.lipschitz;
    return out;
}

/// Selection rule turning F(t, x(t)) into a value w(t).
struct Extremal {
    std::vector<Vec> directions;  // one per node, or a single fixed direction
};
struct ProjectRelax {};  // project the previous selection onto the current set
using Strategy = std::variant<Extremal, ProjectRelax>;

inline Strategy extremal(Vec dir) { return Extremal{{std::move(dir)}}; }

namespace detail {

/// Integrand for the causal/square solvers. ProjectRelax keeps per-node state between sweeps.
inline Integrand make_selector(const SetField& F, const Strategy& strategy, std::size_t nodes) {
    if (const auto* e = std::get_if<Extremal>(&strategy)) {
        if (e->directions.empty()) throw InvalidArgument("Extremal strategy: no directions");
        if (e->directions.size() != 1 && e->directions.size() != nodes)
            throw InvalidArgument("Extremal strategy: need one direction or one per node");
        return [F, dirs = e->directions](std::size_t j, double t, const Vec& x) -> Vec {
            return support(F(t, x), dirs.size() == 1 ? dirs[0] : dirs[j]).point;
        };
    }
    auto prev = std::make_shared<std::vector<Vec>>(nodes, Vec::Zero(static_cast<Eigen::Index>(F.dim())));
    return [F, prev](std::size_t j, double t, const Vec& x) -> Vec {
        Vec w = project(F(t, x), (*prev)[j]);
        (*prev)[j] = w;
        return w;
    };
}

}  // namespace detail

}  // namespace vie
