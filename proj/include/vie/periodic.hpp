#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "vie/conditions.hpp"
#include "vie/csv.hpp"
#include "vie/errors.hpp"
#include "vie/funnel.hpp"
#include "vie/kernel.hpp"
#include "vie/path.hpp"
#include "vie/set_field.hpp"
#include "vie/solver.hpp"
#include "vie/volterra.hpp"

namespace vie {

enum class StabilityCertificate { Uniform, EndpointOnly };  // (U3) at every node / ||U(T)|| < 1 only

/// U(t) = exp(tA) sampled at the mesh nodes.
struct StableFamily {
    Mat A;
    double omega = 0.0;
    std::vector<Mat> U;
    StabilityCertificate certificate = StabilityCertificate::Uniform;
    double norm_UT = 0.0;  // spectral norm of U(T)

    /// h(t_i) = U(t_i) x0.
    Path apply(const MeshPtr& mesh, const Vec& x0) const {
        Path h = Path::zero(mesh);
        for (std::size_t i = 0; i < mesh->size(); ++i) h.node(i) = U[i] * x0;
        return h;
    }
};

inline double spectral_norm(const Mat& m) { return Eigen::JacobiSVD<Mat>(m).singularValues()(0); }

/// Certifies ||U(t_i)|| <= e^{-omega t_i} at every node, or falls back to ||U(T)|| < 1.
inline StableFamily make_stable_family(const Mat& A, const TimeMesh& mesh, double omega_claim) {
    if (A.rows() != A.cols() || static_cast<std::size_t>(A.rows()) != mesh.dim())
        throw InvalidArgument("make_stable_family: generator must be d x d");
    if (!(omega_claim > 0.0)) throw InvalidArgument("make_stable_family: omega must be positive");
    StableFamily fam{A, omega_claim, {}, StabilityCertificate::Uniform, 0.0};
    bool uniform = true;
    for (std::size_t i = 0; i < mesh.size(); ++i) {
        Mat Ui = (mesh[i] * A).exp();
        if (spectral_norm(Ui) > std::exp(-omega_claim * mesh[i]) * (1.0 + 1e-12)) uniform = false;
        fam.U.push_back(std::move(Ui));
    }
    fam.norm_UT = spectral_norm(fam.U.back());
    if (!uniform) {
        if (!(fam.norm_UT < 1.0)) throw NotStable("make_stable_family: neither ||U(t)|| <= e^{-wt} nor ||U(T)|| < 1 holds");
        fam.certificate = StabilityCertificate::EndpointOnly;
    }
    return fam;
}

/// Right-hand side of a periodic problem: single-valued f, or a set field with one strategy per branch.
struct Forcing {
    std::variant<RhsFn, SetField> rhs;

    bool set_valued() const noexcept { return std::holds_alternative<SetField>(rhs); }
};

namespace detail {

inline Mat causal_solve(const Kernel& k, const Forcing& F, const Strategy* strategy, const Path& h, const SolverConfig& cfg,
                        Mat* w_out = nullptr) {
    DiscreteKernel K(k, h.mesh().nodes());
    Integrand g = F.set_valued() ? make_selector(std::get<SetField>(F.rhs), *strategy, h.size())
                                 : wrap(std::get<RhsFn>(F.rhs));
    CausalSolver s(K, h.values(), std::move(g), cfg);
    s.run(h.values());
    if (w_out) *w_out = std::move(s.w);
    return std::move(s.x);
}

}  // namespace detail

/// P_T(x0) = x(T) for x = U(.)x0 + V(f(., x)).
inline Vec poincare_map(const Kernel& k, const RhsFn& f, const StableFamily& U, const MeshPtr& mesh, const Vec& x0,
                        const SolverConfig& cfg) {
    cfg.validate();
    Forcing F{f};
    Mat x = detail::causal_solve(k, F, nullptr, U.apply(mesh, x0), cfg);
    return x.col(x.cols() - 1);
}

/// Finite sample of the set-valued P_T(x0): one value per strategy.
inline std::vector<Vec> poincare_map(const Kernel& k, const SetField& F, const StableFamily& U, const MeshPtr& mesh,
                                     const Vec& x0, const std::vector<Strategy>& strategies, const SolverConfig& cfg) {
    cfg.validate();
    if (strategies.empty()) throw InvalidArgument("poincare_map: at least one strategy required");
    Forcing G{F};
    std::vector<Vec> out;
    for (const auto& s : strategies) {
        Mat x = detail::causal_solve(k, G, &s, U.apply(mesh, x0), cfg);
        out.emplace_back(x.col(x.cols() - 1));
    }
    return out;
}

/// R = (1 - e^{-wT})^{-1} ||k(T,.)||_q ||mu||_p; with only the endpoint certificate the factor is (1 - ||U(T)||)^{-1}.
inline double invariant_radius(const Kernel& k, const StableFamily& U, const TimeMesh& mesh, std::span<const double> mu, double p) {
    if (mu.size() != mesh.size()) throw InvalidArgument("invariant_radius: mu sample count does not match mesh");
    const double q = quad::conjugate(p);
    std::vector<double> row(mesh.size());
    for (std::size_t j = 0; j < mesh.size(); ++j) row[j] = op_norm(k(mesh.T(), mesh[j]));
    const double M = quad::lp_of_samples(mesh.nodes(), row, q, mesh.size() - 1) * lp_norm(mesh, mu, p);
    const double factor = U.certificate == StabilityCertificate::Uniform ? 1.0 / -std::expm1(-U.omega * mesh.T())
                                                                          : 1.0 / (1.0 - U.norm_UT);
    return factor * M;
}

struct PeriodicOptions {
    double fp_tol = 1e-10;        // on |x0 - P_T(x0)|
    std::size_t max_iter = 200;
    bool warn_and_proceed = false;  // run even when the contraction condition fails
    Sampled eta;                    // contraction density; empty = not checked
};

struct PeriodicResult {
    Vec x0;
    Path orbit;
    Path w;
    double fixed_point_residual = 0.0;
    double periodicity_residual = 0.0;
    std::size_t iterations = 0;
    double contraction_estimate = 0.0;  // max observed |P x_n - P x_{n-1}| / |x_n - x_{n-1}|
    double radius = 0.0;                // invariant ball radius (infinite when mu unknown)
    bool accepted = false;
    std::optional<ConditionCheck> condition;
};

namespace detail {

inline PeriodicResult find_periodic(const Kernel& k, const Forcing& F, const Strategy* strategy, const StableFamily& U,
                                    const MeshPtr& mesh, std::span<const double> mu, const SolverConfig& cfg,
                                    const PeriodicOptions& opt) {
    cfg.validate();
    if (!k.triangular()) throw InvalidArgument("find_periodic_volterra: triangular kernel required");
    if (U.U.size() != mesh->size()) throw InvalidArgument("find_periodic_volterra: family sampled on another mesh");
    PeriodicResult res{Vec(), Path::zero(mesh), Path::zero(mesh), 0.0, 0.0, 0, 0.0, 0.0, false, std::nullopt};
    if (!opt.eta.empty()) {
        res.condition = check_contraction_condition(k, opt.eta, cfg.p, *mesh);
        if (!res.condition->holds && !opt.warn_and_proceed)
            throw PreconditionViolated("find_periodic_volterra: contraction condition fails");
    }
    res.radius = mu.empty() ? std::numeric_limits<double>::infinity() : invariant_radius(k, U, *mesh, mu, cfg.p);

    const auto d = static_cast<Eigen::Index>(mesh->dim());
    auto P = [&](const Vec& x0) {
        Mat x = causal_solve(k, F, strategy, U.apply(mesh, x0), cfg);
        return Vec(x.col(x.cols() - 1));
    };
    Vec x = Vec::Zero(d);
    Vec Px = P(x);
    Vec x_prev, Px_prev;
    for (std::size_t it = 1;; ++it) {
        res.iterations = it;
        res.fixed_point_residual = (x - Px).norm();
        if (x_prev.size() > 0 && (x - x_prev).norm() > 0.0)
            res.contraction_estimate = std::max(res.contraction_estimate, (Px - Px_prev).norm() / (x - x_prev).norm());
        if (res.fixed_point_residual <= opt.fp_tol) break;
        if (it >= opt.max_iter)
            throw NonConvergence("find_periodic_volterra: iteration cap reached (contraction estimate " +
                                     std::to_string(res.contraction_estimate) + ")",
                                 res.fixed_point_residual);
        x_prev = x;
        Px_prev = Px;
        x = Px;
        const double n = x.norm();
        if (n > res.radius) x *= res.radius / n;
        Px = P(x);
    }
    res.x0 = x;
    Mat w;
    Mat orbit = causal_solve(k, F, strategy, U.apply(mesh, x), cfg, &w);
    res.orbit = Path(mesh, std::move(orbit));
    res.w = Path(mesh, std::move(w));
    res.periodicity_residual = (res.orbit.node(0) - res.orbit.node(mesh->size() - 1)).norm();
    res.accepted = res.fixed_point_residual <= opt.fp_tol && res.periodicity_residual <= opt.fp_tol;
    return res;
}

}  // namespace detail

/// Fixed point of P_T by iteration from 0, radially projected back into D(0, R) when it leaves.
/// mu may be empty, in which case no projection happens.
inline PeriodicResult find_periodic_volterra(const Kernel& k, const RhsFn& f, const StableFamily& U, const MeshPtr& mesh,
                                             std::span<const double> mu, const SolverConfig& cfg, const PeriodicOptions& opt = {}) {
    return detail::find_periodic(k, Forcing{f}, nullptr, U, mesh, mu, cfg, opt);
}

/// Per-strategy fixed points of the set-valued P_T.
inline PeriodicResult find_periodic_volterra(const Kernel& k, const SetField& F, const Strategy& strategy, const StableFamily& U,
                                             const MeshPtr& mesh, std::span<const double> mu, const SolverConfig& cfg,
                                             const PeriodicOptions& opt = {}) {
    return detail::find_periodic(k, Forcing{F}, &strategy, U, mesh, mu, cfg, opt);
}

/// Largest |P(a) - P(b)| / |a - b| over random pairs drawn uniformly from D(0, R).
inline double measure_contraction(const Kernel& k, const RhsFn& f, const StableFamily& U, const MeshPtr& mesh, double R,
                                  std::size_t pairs, std::uint64_t seed, const SolverConfig& cfg) {
    if (!(R > 0.0) || !std::isfinite(R)) throw InvalidArgument("measure_contraction: radius must be positive and finite");
    const auto d = static_cast<Eigen::Index>(mesh->dim());
    auto draw = [&](detail::SampleRng& rng) {
        Vec v(d);
        do {
            for (Eigen::Index i = 0; i < d; ++i) v(i) = rng.normal();
        } while (!(v.norm() > 0.0));
        v.normalize();
        return Vec(v * (R * std::pow(rng.uniform(), 1.0 / static_cast<double>(d))));
    };
    double worst = 0.0;
    for (std::size_t i = 0; i < pairs; ++i) {
        detail::SampleRng rng(seed, i, 0);
        const Vec a = draw(rng), b = draw(rng);
        if ((a - b).norm() == 0.0) continue;
        worst = std::max(worst, (poincare_map(k, f, U, mesh, a, cfg) - poincare_map(k, f, U, mesh, b, cfg)).norm() / (a - b).norm());
    }
    return worst;
}

struct HammersteinOptions {
    double precondition_tol = 1e-8;  // on |h(0) - h(T)| and ||k(0,.) - k(T,.)||_q
    bool warn_and_proceed = false;   // run despite failed checks
    Sampled eta;                     // empty = condition not checked
};

struct HammersteinResult {
    Path x;
    Path w;
    double periodicity_residual = 0.0;  // |x(0) - x(T)|, measured after the fact
    double residual = 0.0;              // sup |x - h - V_T(w)|
    std::size_t iterations = 0;
    bool accepted = false;
    std::optional<ConditionCheck> condition;
};

namespace detail {

inline HammersteinResult hammerstein(const Kernel& k, const Forcing& F, const Strategy* strategy, const Path& h,
                                     const SolverConfig& cfg, const HammersteinOptions& opt) {
    cfg.validate();
    if (k.triangular()) throw InvalidArgument("solve_hammerstein_periodic: square-domain kernel required");
    require_kernel_fits(k, h);
    const auto& mesh = h.mesh();
    const double q = quad::conjugate(cfg.p);
    HammersteinResult res{h, Path::zero(h.mesh_ptr()), 0.0, 0.0, 0, false, std::nullopt};
    if (!opt.warn_and_proceed) {
        if ((h.node(0) - h.node(h.size() - 1)).norm() > opt.precondition_tol)
            throw PreconditionViolated("solve_hammerstein_periodic: h is not T-periodic");
        if (periodicity_defect(k, mesh, q) > opt.precondition_tol)
            throw PreconditionViolated("solve_hammerstein_periodic: kernel is not T-periodic in t");
    }
    if (!opt.eta.empty()) {
        res.condition = check_hammerstein_condition(k, opt.eta, cfg.p, mesh);
        if (!res.condition->holds && !opt.warn_and_proceed)
            throw PreconditionViolated("solve_hammerstein_periodic: 2 B ||eta||_p < 1 fails");
    }

    DiscreteKernel K(k, mesh.nodes());
    Integrand g = F.set_valued() ? make_selector(std::get<SetField>(F.rhs), *strategy, h.size()) : wrap(std::get<RhsFn>(F.rhs));
    const auto t = mesh.nodes();
    Mat x = h.values();
    Mat w(x.rows(), x.cols());
    for (std::size_t it = 1;; ++it) {
        res.iterations = it;
        for (std::size_t j = 0; j < t.size(); ++j) {
            Vec wj = g(j, t[j], Vec(x.col(static_cast<Eigen::Index>(j))));
            if (!wj.allFinite()) throw NumericFailure("solve_hammerstein_periodic: non-finite right-hand side value");
            w.col(static_cast<Eigen::Index>(j)) = wj;
        }
        Mat y = h.values() + K.apply(w);
        const double scale = 1.0 + y.colwise().norm().maxCoeff();
        res.residual = (y - x).colwise().norm().maxCoeff();
        if (!std::isfinite(res.residual)) throw NumericFailure("solve_hammerstein_periodic: iteration diverged");
        if (res.residual <= cfg.tol * scale) break;
        if (it >= cfg.max_iter) throw NonConvergence("solve_hammerstein_periodic: iteration cap reached", res.residual);
        x = (1.0 - cfg.damping) * x + cfg.damping * y;
    }
    res.x = Path(h.mesh_ptr(), std::move(x));
    res.w = Path(h.mesh_ptr(), std::move(w));
    res.periodicity_residual = (res.x.node(0) - res.x.node(h.size() - 1)).norm();
    res.accepted = res.periodicity_residual <= std::max(opt.precondition_tol, 2.0 * cfg.tol);
    return res;
}

}  // namespace detail

/// Picard iteration x <- h + V_T(f(., x)). Periodicity is not imposed; it is measured afterwards.
inline HammersteinResult solve_hammerstein_periodic(const Kernel& k, const RhsFn& f, const Path& h, const SolverConfig& cfg,
                                                    const HammersteinOptions& opt = {}) {
    return detail::hammerstein(k, Forcing{f}, nullptr, h, cfg, opt);
}

inline HammersteinResult solve_hammerstein_periodic(const Kernel& k, const SetField& F, const Strategy& strategy, const Path& h,
                                                    const SolverConfig& cfg, const HammersteinOptions& opt = {}) {
    return detail::hammerstein(k, Forcing{F}, &strategy, h, cfg, opt);
}

/// x0 components, fixed_point_residual, periodicity_residual, iterations, contraction_estimate.
inline void write_periodic_csv(std::ostream& os, const PeriodicResult& r) {
    for (Eigen::Index c = 0; c < r.x0.size(); ++c) os << "x0_" << c << ',';
    os << "fixed_point_residual,periodicity_residual,iterations,contraction_estimate\n";
    for (Eigen::Index c = 0; c < r.x0.size(); ++c) os << csv::num(r.x0(c)) << ',';
    os << csv::num(r.fixed_point_residual) << ',' << csv::num(r.periodicity_residual) << ',' << r.iterations << ','
       << csv::num(r.contraction_estimate) << '\n';
}

/// An orbit in the funnel layout (a single sample 0).
inline void write_orbit_csv(std::ostream& os, const Path& x, const Path& w, double eq_residual, double incl_residual = 0.0) {
    Funnel f;
    f.mesh = x.mesh_ptr();
    f.samples.push_back(FunnelSample{0, x, w, eq_residual, incl_residual, true, 0, {}});
    write_funnel_csv(os, f);
}

}  // namespace vie
