#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "vie/errors.hpp"
#include "vie/kernel.hpp"
#include "vie/mesh.hpp"
#include "vie/path.hpp"
#include "vie/volterra.hpp"

namespace vie {

struct SolverConfig {
    std::size_t max_iter = 500;
    double tol = 1e-10;     // relative sup-norm change and residual
    double damping = 1.0;   // in (0, 1]
    double p = 2.0;         // integrability exponent of the selections

    void validate() const {
        if (max_iter == 0) throw InvalidArgument("SolverConfig: max_iter must be positive");
        if (!(tol > 0.0)) throw InvalidArgument("SolverConfig: tol must be positive");
        if (!(damping > 0.0 && damping <= 1.0)) throw InvalidArgument("SolverConfig: damping must lie in (0,1]");
        if (!(p >= 1.0)) throw InvalidArgument("SolverConfig: p must be >= 1");
    }
};

/// Growth c, contraction density eta and uniform bound mu, sampled on the mesh.
struct GrowthData {
    Sampled c;
    Sampled eta;
    Sampled mu;

    void validate(const TimeMesh& mesh) const {
        for (const Sampled* s : {&c, &eta, &mu}) {
            if (s->empty()) continue;
            if (s->size() != mesh.size()) throw InvalidArgument("GrowthData: sample count does not match mesh");
            for (double v : *s)
                if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidArgument("GrowthData: samples must be finite and >= 0");
        }
    }
};

/// Right-hand side f(t, x) of the single-valued equation.
using RhsFn = std::function<Vec(double t, const Vec& x)>;

struct SolveReport {
    std::size_t iterations = 0;
    double residual = 0.0;  // sup |x - g - V(w)|
    double change = 0.0;    // last relative sup-norm change
    std::size_t blocks = 1; // > 1 when the interval had to be split
};

struct Solution {
    Path x;
    Path w;  // integrand values f(t_i, x_i)
    SolveReport report;
};

/// A-priori solution bound M = 2^{1-1/p} A exp(p^{-1} 2^{p-1} B^p ||c||_p^p), A = ||h|| + B ||c||_p.
inline double apriori_bound(double h_sup, double B, std::span<const double> c, double p, const TimeMesh& mesh) {
    if (!(p >= 1.0)) throw InvalidArgument("apriori_bound: p must be >= 1");
    if (h_sup < 0.0 || B < 0.0) throw InvalidArgument("apriori_bound: inputs must be nonnegative");
    const double cp = lp_norm(mesh, c, p);
    const double A = h_sup + B * cp;
    return std::pow(2.0, 1.0 - 1.0 / p) * A * std::exp(std::pow(2.0, p - 1.0) * std::pow(B, p) * std::pow(cp, p) / p);
}

namespace detail {

/// Integrand evaluated at free node j: f(tau_j, x_j) or a selection from a set-valued field.
using Integrand = std::function<Vec(std::size_t j, double t, const Vec& x)>;

inline bool finite_vec(const Vec& v) { return v.allFinite(); }

/// Causal fixed point x = g + K w(x) on the node list of K (triangular). Damped Picard on the
/// whole list first; a block that stalls or hits the cap is split in half and the halves are
/// solved in order, earlier nodes frozen (local solution plus continuation).
class CausalSolver {
public:
    CausalSolver(const DiscreteKernel& K, const Mat& g, Integrand integrand, const SolverConfig& cfg)
        : K_(K), g_(g), f_(std::move(integrand)), cfg_(cfg) {}

    Mat x, w;
    SolveReport report;

    void run(const Mat& x_init) {
        const auto n = static_cast<std::size_t>(g_.cols());
        x = x_init;
        w = Mat::Zero(g_.rows(), g_.cols());
        report = {};
        report.blocks = 0;
        solve_block(0, n - 1, x_init);
        // global residual at the accepted iterate
        Mat y = g_ + K_.apply(w);
        report.residual = (x - y).colwise().norm().maxCoeff();
    }

private:
    void solve_block(std::size_t a, std::size_t b, const Mat& x_init) {
        const auto d = g_.rows();
        const auto t = K_.times();
        const std::size_t len = b - a + 1;
        Mat frozen = Mat::Zero(d, static_cast<Eigen::Index>(len));
        if (a > 0)
            for (std::size_t i = a; i <= b; ++i) frozen.col(static_cast<Eigen::Index>(i - a)) = K_.row(i, w, 0, a - 1);

        for (std::size_t i = a; i <= b; ++i) x.col(static_cast<Eigen::Index>(i)) = x_init.col(static_cast<Eigen::Index>(i));

        std::vector<double> history;
        double change = 0.0;
        double residual = std::numeric_limits<double>::infinity();
        Mat y(d, static_cast<Eigen::Index>(len));
        for (std::size_t it = 1; it <= cfg_.max_iter; ++it) {
            ++report.iterations;
            for (std::size_t j = a; j <= b; ++j) {
                const auto jj = static_cast<Eigen::Index>(j);
                Vec xj = x.col(jj);
                Vec wj = f_(j, t[j], xj);
                if (!finite_vec(wj)) throw NumericFailure("solver: non-finite right-hand side value");
                w.col(jj) = wj;
            }
            double ymax = 0.0;
            residual = 0.0;
            for (std::size_t i = a; i <= b; ++i) {
                const auto c = static_cast<Eigen::Index>(i - a);
                y.col(c) = g_.col(static_cast<Eigen::Index>(i)) + frozen.col(c) + K_.row(i, w, a, i);
                ymax = std::max(ymax, y.col(c).norm());
                residual = std::max(residual, (y.col(c) - x.col(static_cast<Eigen::Index>(i))).norm());
            }
            const double scale = 1.0 + ymax;
            if (!std::isfinite(residual) || ymax > 1e150) break;
            if (residual <= cfg_.tol * scale && change <= cfg_.tol * scale) {
                report.change = change / scale;
                ++report.blocks;
                return;
            }
            history.push_back(residual);
            if (history.size() > 25 && residual > 0.98 * history[history.size() - 11]) break;  // stalled

            change = 0.0;
            for (std::size_t i = a; i <= b; ++i) {
                const auto ii = static_cast<Eigen::Index>(i);
                Vec next = (1.0 - cfg_.damping) * x.col(ii) + cfg_.damping * y.col(static_cast<Eigen::Index>(i - a));
                change = std::max(change, (next - x.col(ii)).norm());
                x.col(ii) = next;
            }
        }
        if (len == 1) throw NonConvergence("solver: Picard iteration did not converge", residual);
        const std::size_t mid = a + len / 2 - 1;
        solve_block(a, mid, x_init);
        solve_block(mid + 1, b, x_init);
    }

    const DiscreteKernel& K_;
    const Mat& g_;
    Integrand f_;
    SolverConfig cfg_;
};

inline Integrand wrap(const RhsFn& f) {
    return [&f](std::size_t, double t, const Vec& x) { return f(t, x); };
}

}  // namespace detail

/// Damped Picard solution of x = h + V(f(., x(.))) started from x0 = h (or a supplied start).
inline Solution solve_equation(const Kernel& k, const RhsFn& f, const Path& h, const SolverConfig& cfg,
                               const std::optional<Path>& start = std::nullopt) {
    cfg.validate();
    if (!k.triangular()) throw InvalidArgument("solve_equation: triangular kernel required");
    detail::require_kernel_fits(k, h);
    if (start && !start->same_mesh(h)) throw InvalidArgument("solve_equation: start path on a different mesh");
    DiscreteKernel K(k, h.mesh().nodes());
    detail::CausalSolver s(K, h.values(), detail::wrap(f), cfg);
    s.run(start ? start->values() : h.values());
    return {Path(h.mesh_ptr(), std::move(s.x)), Path(h.mesh_ptr(), std::move(s.w)), s.report};
}

struct ContinuationSolution {
    Path x;                       // prefix state before the cut, continuation solution from it on
    Path w;                       // w_prefix before the cut, f(t, x(t)) from it on
    double cut = 0.0;             // s_frac * T
    Vec value_at_cut;             // x(cut)
    std::size_t first_free_node = 0;  // first mesh node with t >= cut
    SolveReport report;
};

/// x(t) = h(t) + int_0^{sT} k(t,tau) w_prefix(tau) dtau + int_{sT}^t k(t,tau) f(tau, x(tau)) dtau on [sT, T].
/// The cut need not be a node: it is inserted as the first free quadrature node.
inline ContinuationSolution solve_continuation(const Kernel& k, const RhsFn& f, const Path& w_prefix, double s_frac,
                                               const Path& h, const SolverConfig& cfg) {
    cfg.validate();
    if (!k.triangular()) throw InvalidArgument("solve_continuation: triangular kernel required");
    if (!(s_frac >= 0.0 && s_frac <= 1.0)) throw InvalidArgument("solve_continuation: s_frac must lie in [0,1]");
    if (!w_prefix.same_mesh(h)) throw InvalidArgument("solve_continuation: mesh mismatch");
    detail::require_kernel_fits(k, h);

    const auto& mesh = h.mesh();
    const std::size_t n = mesh.size();
    const double snap = 1e-12 * mesh.T();
    double cut = s_frac * mesh.T();
    std::size_t m = mesh.locate(cut);
    if (cut - mesh[m] <= snap) cut = mesh[m];
    else if (m + 1 < n && mesh[m + 1] - cut <= snap) cut = mesh[++m];
    const bool on_node = cut == mesh[m];
    const std::size_t first_free = on_node ? m : m + 1;

    std::vector<double> times;
    if (!on_node) times.push_back(cut);
    for (std::size_t i = first_free; i < n; ++i) times.push_back(mesh[i]);

    const auto d = static_cast<Eigen::Index>(h.dim());
    Mat g(d, static_cast<Eigen::Index>(times.size()));
    for (std::size_t r = 0; r < times.size(); ++r) {
        const auto rr = static_cast<Eigen::Index>(r);
        const bool node = on_node || r > 0;
        g.col(rr) = node ? Vec(h.node(first_free + r - (on_node ? 0 : 1))) : h.eval(cut);
        if (cut > 0.0) g.col(rr) += truncated_integral(k, w_prefix, times[r], cut);
    }

    DiscreteKernel K(k, times);
    detail::CausalSolver s(K, g, detail::wrap(f), cfg);
    s.run(g);

    ContinuationSolution out{Path::zero(h.mesh_ptr()), Path::zero(h.mesh_ptr()), cut, Vec(s.x.col(0)), first_free, s.report};
    for (std::size_t i = 0; i < first_free; ++i) {
        out.x.node(i) = h.node(i) + truncated_integral(k, w_prefix, mesh[i], mesh[i]);
        out.w.node(i) = w_prefix.node(i);
    }
    const std::size_t shift = on_node ? 0 : 1;
    for (std::size_t i = first_free; i < n; ++i) {
        out.x.node(i) = s.x.col(static_cast<Eigen::Index>(i - first_free + shift));
        out.w.node(i) = s.w.col(static_cast<Eigen::Index>(i - first_free + shift));
    }
    return out;
}

/// H(s, y): y on [0, sT], the continuation solution x[s;y] driven by w_y on [sT, T].
/// H(1, y) = y and H(0, y) = x[0] does not depend on y.
inline Path homotopy_eval(const Kernel& k, const RhsFn& f, const Path& y, const Path& w_y, double s, const Path& h,
                          const SolverConfig& cfg) {
    cfg.validate();
    if (!(s >= 0.0 && s <= 1.0)) throw InvalidArgument("homotopy_eval: s must lie in [0,1]");
    if (!y.same_mesh(h) || !w_y.same_mesh(h)) throw InvalidArgument("homotopy_eval: mesh mismatch");
    const double defect = sup_distance(y, h + apply_V(k, w_y));
    if (defect > cfg.tol * (1.0 + sup_norm(y)))
        throw InconsistentData("homotopy_eval: (y, w_y) does not satisfy y = h + V(w_y)");
    if (s == 1.0) return y;
    auto cont = solve_continuation(k, f, w_y, s, h, cfg);
    Path out = y;
    for (std::size_t i = cont.first_free_node; i < y.size(); ++i) out.node(i) = cont.x.node(i);
    return out;
}

/// Same, recovering w_y from y by inverting V on y - h.
inline Path homotopy_eval(const Kernel& k, const RhsFn& f, const Path& y, double s, const Path& h, const SolverConfig& cfg) {
    auto inv = invert_V(k, y - h);
    return homotopy_eval(k, f, y, inv.w, s, h, cfg);
}

namespace detail {

// int_0^h (g_b - (g_b - g_a) u / h) e^{-lambda u} du, stable for large lambda h.
inline double exp_weighted_segment(double g_a, double g_b, double h, double lambda) {
    const double z = lambda * h;
    double e0, e1;  // int_0^h e^{-lambda u} du, int_0^h u e^{-lambda u} du
    if (z < 1e-4) {
        e0 = h * (1.0 - z / 2.0 + z * z / 6.0);
        e1 = h * h * (0.5 - z / 3.0 + z * z / 8.0);
    } else {
        e0 = -std::expm1(-z) / lambda;
        e1 = (1.0 - std::exp(-z) * (1.0 + z)) / (lambda * lambda);
    }
    return g_b * e0 - (g_b - g_a) / h * e1;
}

}  // namespace detail

/// phi(L) = sup_t e^{-Lt} (int_0^t (eta(s) e^{Ls})^p ds)^{1/p}. Product integration: eta^p is
/// piecewise linear between nodes and the weight e^{-pL(t-s)} is integrated exactly.
inline double phi_of_L(std::span<const double> eta, double p, double L, const TimeMesh& mesh) {
    if (!(p >= 1.0)) throw InvalidArgument("phi_of_L: p must be >= 1");
    if (eta.size() != mesh.size()) throw InvalidArgument("phi_of_L: sample count does not match mesh");
    const double lambda = p * L;
    double acc = 0.0, best = 0.0;
    for (std::size_t i = 1; i < mesh.size(); ++i) {
        const double h = mesh.step(i);
        acc = acc * std::exp(-lambda * h) +
              detail::exp_weighted_segment(std::pow(eta[i - 1], p), std::pow(eta[i], p), h, lambda);
        best = std::max(best, std::pow(std::max(acc, 0.0), 1.0 / p));
    }
    return best;
}

struct LChoice {
    double L = 0.0;
    double phi = 0.0;        // phi(L)
    double threshold = 0.0;  // (2B)^{-1}
    double B = 0.0;
    bool trivial = false;    // B = 0: nothing to certify
};

/// Doubling search L in {0, 1, 2, 4, ...} for the first L with phi(L) < (2B)^{-1}.
inline LChoice choose_L(double B, std::span<const double> eta, double p, const TimeMesh& mesh) {
    LChoice out;
    out.B = B;
    if (!(B > 0.0)) {
        out.trivial = true;
        out.threshold = std::numeric_limits<double>::infinity();
        out.phi = phi_of_L(eta, p, 0.0, mesh);
        return out;
    }
    out.threshold = 1.0 / (2.0 * B);
    for (double L = 0.0; L <= std::ldexp(1.0, 40); L = (L == 0.0 ? 1.0 : 2.0 * L)) {
        const double phi = phi_of_L(eta, p, L, mesh);
        if (phi < out.threshold) {
            out.L = L;
            out.phi = phi;
            return out;
        }
    }
    throw NumericalError("choose_L: no L <= 2^40 satisfies phi(L) < (2B)^{-1}");
}

inline LChoice choose_L(const Kernel& k, std::span<const double> eta, double p, const TimeMesh& mesh) {
    return choose_L(kernel_qnorm_profile(k, mesh, quad::conjugate(p)).B, eta, p, mesh);
}

}  // namespace vie
