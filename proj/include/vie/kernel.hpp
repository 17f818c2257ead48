#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <regex>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "vie/errors.hpp"
#include "vie/mesh.hpp"
#include "vie/path.hpp"

namespace vie {

/// Triangle {0 <= s <= t <= T} for Volterra operators, square [0,T]^2 for Hammerstein ones.
enum class KernelDomain { Triangle, Square };

inline const char* to_string(KernelDomain d) { return d == KernelDomain::Triangle ? "triangle" : "square"; }

using MatrixFn = std::function<Mat(double t, double s)>;

/// Matrix-valued kernel k(t,s) with an optional exact time derivative.
class Kernel {
public:
    Kernel(KernelDomain domain, std::size_t dim, double T, MatrixFn eval, std::optional<MatrixFn> dt = std::nullopt,
           std::string name = {})
        : domain_(domain), dim_(dim), T_(T), eval_(std::move(eval)), dt_(std::move(dt)), name_(std::move(name)) {
        if (dim_ == 0) throw InvalidArgument("Kernel: dimension must be positive");
        if (!(T_ > 0.0)) throw InvalidArgument("Kernel: T must be positive");
        if (!eval_) throw InvalidArgument("Kernel: empty evaluation function");
    }

    KernelDomain domain() const noexcept { return domain_; }
    bool triangular() const noexcept { return domain_ == KernelDomain::Triangle; }
    std::size_t dim() const noexcept { return dim_; }
    double T() const noexcept { return T_; }
    const std::string& name() const noexcept { return name_; }
    bool has_derivative() const noexcept { return dt_.has_value(); }

    /// k(t,s), zero for s > t on the triangle. No range validation.
    Mat operator()(double t, double s) const {
        if (triangular() && s > t) return Mat::Zero(static_cast<Eigen::Index>(dim_), static_cast<Eigen::Index>(dim_));
        return eval_(t, s);
    }

    /// dk/dt(t,s); requires has_derivative().
    Mat derivative(double t, double s) const {
        if (!dt_) throw InvalidArgument("Kernel: no exact derivative registered");
        if (triangular() && s > t) return Mat::Zero(static_cast<Eigen::Index>(dim_), static_cast<Eigen::Index>(dim_));
        return (*dt_)(t, s);
    }

private:
    KernelDomain domain_;
    std::size_t dim_;
    double T_;
    MatrixFn eval_;
    std::optional<MatrixFn> dt_;
    std::string name_;
};

/// Range-checked evaluation.
inline Mat eval_kernel(const Kernel& k, double t, double s) {
    const double slack = 1e-12 * k.T();
    if (t < -slack || t > k.T() + slack || s < -slack || s > k.T() + slack)
        throw InvalidArgument("eval_kernel: (t,s) outside [0,T]^2");
    return k(t, s);
}

/// Spectral norm; the operator norm on L(R^d) used throughout.
inline double op_norm(const Mat& a) {
    if (a.size() == 1) return std::abs(a(0, 0));
    return Eigen::JacobiSVD<Mat>(a).singularValues()(0);
}

using TimeMatrixFn = std::function<Mat(double)>;

/// k(t,s) = f(t) g(s). The optional f_dot supplies the exact dk/dt = f'(t) g(s).
inline Kernel separable_kernel(TimeMatrixFn f, TimeMatrixFn g, KernelDomain domain, const TimeMesh& mesh,
                               std::optional<TimeMatrixFn> f_dot = std::nullopt, std::string name = "separable") {
    const auto d = static_cast<Eigen::Index>(mesh.dim());
    for (double t : mesh.nodes()) {
        Mat ft = f(t), gt = g(t);
        if (ft.rows() != d || ft.cols() != d || gt.rows() != d || gt.cols() != d)
            throw InvalidArgument("separable_kernel: factors must be d x d");
        if (!ft.allFinite() || !gt.allFinite()) throw InvalidArgument("separable_kernel: non-finite sample");
    }
    std::optional<MatrixFn> dt;
    if (f_dot) dt = [f_dot = *f_dot, g](double t, double s) -> Mat { return f_dot(t) * g(s); };
    return Kernel(domain, mesh.dim(), mesh.T(), [f, g](double t, double s) -> Mat { return f(t) * g(s); }, std::move(dt),
                  std::move(name));
}

/// Named kernels addressable from experiment configs:
///   identity             k(t,s) = Id                                  (triangle)
///   zero                 k(t,s) = 0                                   (triangle)
///   difference           k(t,s) = (t - s) Id                          (triangle)
///   convolution-exp(l)   k(t,s) = exp(-l (t - s)) Id                  (triangle)
///   separable-cos        k(t,s) = cos(t) Id                           (triangle)
///   fredholm-constant    k(t,s) = Id                                  (square)
///   fredholm-periodic    k(t,s) = (1 + cos(2 pi t / T) / 2) Id        (square)
inline Kernel make_catalog_kernel(const std::string& spec, std::size_t dim, double T) {
    const auto d = static_cast<Eigen::Index>(dim);
    const Mat id = Mat::Identity(d, d);
    auto scalar = [id](auto fn) { return [id, fn](double t, double s) -> Mat { return fn(t, s) * id; }; };

    if (spec == "identity")
        return Kernel(KernelDomain::Triangle, dim, T, scalar([](double, double) { return 1.0; }),
                      scalar([](double, double) { return 0.0; }), spec);
    if (spec == "zero")
        return Kernel(KernelDomain::Triangle, dim, T, scalar([](double, double) { return 0.0; }),
                      scalar([](double, double) { return 0.0; }), spec);
    if (spec == "difference")
        return Kernel(KernelDomain::Triangle, dim, T, scalar([](double t, double s) { return t - s; }),
                      scalar([](double, double) { return 1.0; }), spec);
    if (spec == "separable-cos")
        return Kernel(KernelDomain::Triangle, dim, T, scalar([](double t, double) { return std::cos(t); }),
                      scalar([](double t, double) { return -std::sin(t); }), spec);
    if (spec == "fredholm-constant")
        return Kernel(KernelDomain::Square, dim, T, scalar([](double, double) { return 1.0; }),
                      scalar([](double, double) { return 0.0; }), spec);
    if (spec == "fredholm-periodic") {
        const double w = 2.0 * std::numbers::pi / T;
        return Kernel(KernelDomain::Square, dim, T, scalar([w](double t, double) { return 1.0 + 0.5 * std::cos(w * t); }),
                      scalar([w](double t, double) { return -0.5 * w * std::sin(w * t); }), spec);
    }
    static const std::regex conv(R"(convolution-exp\(\s*([-+0-9.eE]+)\s*\))");
    std::smatch m;
    if (std::regex_match(spec, m, conv)) {
        double lambda = 0.0;
        try {
            lambda = std::stod(m[1].str());
        } catch (const std::exception&) {
            throw InvalidArgument("unknown kernel: " + spec);
        }
        return Kernel(KernelDomain::Triangle, dim, T, scalar([lambda](double t, double s) { return std::exp(-lambda * (t - s)); }),
                      scalar([lambda](double t, double s) { return -lambda * std::exp(-lambda * (t - s)); }), spec);
    }
    throw InvalidArgument("unknown kernel: " + spec);
}

struct DiagonalReport {
    bool pass = false;
    double min_singular = 0.0;
    double M_inv = std::numeric_limits<double>::infinity();  // max ||k(t,t)^{-1}||, infinite on failure
};

/// (k3) on the mesh: smallest singular value of k(t,t) above tol at every node.
inline DiagonalReport check_diagonal_invertible(const Kernel& k, const TimeMesh& mesh, double tol) {
    if (!k.triangular()) throw InvalidArgument("check_diagonal_invertible: triangular kernel required");
    if (!(tol > 0.0)) throw InvalidArgument("check_diagonal_invertible: tol must be positive");
    DiagonalReport r;
    r.min_singular = std::numeric_limits<double>::infinity();
    double m_inv = 0.0;
    for (double t : mesh.nodes()) {
        Eigen::JacobiSVD<Mat> svd(k(t, t));
        const double smin = svd.singularValues().minCoeff();
        r.min_singular = std::min(r.min_singular, smin);
        if (smin > 0.0) m_inv = std::max(m_inv, 1.0 / smin);
    }
    r.pass = r.min_singular > tol;
    if (r.pass) r.M_inv = m_inv;
    return r;
}

namespace detail {

// Derivative at x of the quadratic through (z_i, f_i).
inline Mat lagrange_derivative(double x, const std::array<double, 3>& z, const std::array<Mat, 3>& f) {
    const double w0 = ((x - z[1]) + (x - z[2])) / ((z[0] - z[1]) * (z[0] - z[2]));
    const double w1 = ((x - z[0]) + (x - z[2])) / ((z[1] - z[0]) * (z[1] - z[2]));
    const double w2 = ((x - z[0]) + (x - z[1])) / ((z[2] - z[0]) * (z[2] - z[1]));
    return w0 * f[0] + w1 * f[1] + w2 * f[2];
}

// dk/dt at (t_i, s) from samples with t >= s only: one-sided at the diagonal, central inside.
inline Mat fd_time_derivative(const Kernel& k, const TimeMesh& mesh, std::size_t i, std::size_t j) {
    const std::size_t n = mesh.size();
    auto K = [&](std::size_t a) { return k(mesh[a], mesh[j]); };
    const std::size_t lo = k.triangular() ? j : 0;
    if (i > lo && i + 1 < n)
        return lagrange_derivative(mesh[i], {mesh[i - 1], mesh[i], mesh[i + 1]}, {K(i - 1), K(i), K(i + 1)});
    if (i == lo && i + 2 < n)
        return lagrange_derivative(mesh[i], {mesh[i], mesh[i + 1], mesh[i + 2]}, {K(i), K(i + 1), K(i + 2)});
    if (i == n - 1 && i >= lo + 2)
        return lagrange_derivative(mesh[i], {mesh[i - 2], mesh[i - 1], mesh[i]}, {K(i - 2), K(i - 1), K(i)});
    // only two admissible nodes: add the midpoint, which still has t >= s
    const std::size_t a = (i == lo) ? i : i - 1;
    const double mid = 0.5 * (mesh[a] + mesh[a + 1]);
    return lagrange_derivative(mesh[i], {mesh[a], mid, mesh[a + 1]}, {K(a), k(mid, mesh[j]), K(a + 1)});
}

}  // namespace detail

/// (k4): psi(s_j) = max over t_i >= s_j of ||dk/dt(t_i, s_j)||; exact derivative when registered,
/// finite differences otherwise. On the triangle the last node (only t = T available) copies its neighbour.
inline Sampled estimate_psi(const Kernel& k, const TimeMesh& mesh) {
    const std::size_t n = mesh.size();
    Sampled psi(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        if (k.triangular() && j + 1 == n) {
            psi[j] = n >= 2 ? psi[j - 1] : 0.0;
            if (k.has_derivative()) psi[j] = op_norm(k.derivative(mesh[j], mesh[j]));
            continue;
        }
        double best = 0.0;
        for (std::size_t i = k.triangular() ? j : 0; i < n; ++i) {
            const Mat dk = k.has_derivative() ? k.derivative(mesh[i], mesh[j]) : detail::fd_time_derivative(k, mesh, i, j);
            best = std::max(best, op_norm(dk));
        }
        psi[j] = best;
    }
    return psi;
}

/// Finite-difference psi regardless of a registered derivative (consistency checks).
inline Sampled estimate_psi_fd(const Kernel& k, const TimeMesh& mesh) {
    Kernel plain(k.domain(), k.dim(), k.T(), [k](double t, double s) { return k(t, s); }, std::nullopt, k.name());
    return estimate_psi(plain, mesh);
}

struct QNormProfile {
    Sampled profile;                // t_i -> ||k(t_i, .)||_q
    double B = 0.0;                 // max of the profile
    double continuity_modulus = 0.0;  // max over adjacent nodes of ||k(t_i,.) - k(t_{i-1},.)||_q
    double q = 2.0;
};

/// (k5)/(k6) on the mesh. q = infinity takes the max over nodes.
inline QNormProfile kernel_qnorm_profile(const Kernel& k, const TimeMesh& mesh, double q) {
    if (!(q >= 1.0)) throw InvalidArgument("kernel_qnorm_profile: q must be >= 1");
    const std::size_t n = mesh.size();
    const auto t = mesh.nodes();
    QNormProfile out;
    out.q = q;
    out.profile.assign(n, 0.0);
    std::vector<Mat> prev_row;
    std::vector<double> g(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<Mat> row(n);
        for (std::size_t j = 0; j < n; ++j) row[j] = k(t[i], t[j]);
        const std::size_t last = k.triangular() ? i : n - 1;
        for (std::size_t j = 0; j <= last; ++j) g[j] = op_norm(row[j]);
        if (last == 0 && !std::isinf(q))
            out.profile[i] = 0.0;
        else
            out.profile[i] = quad::lp_of_samples(t, g, q, last);
        if (i > 0) {
            for (std::size_t j = 0; j < n; ++j) g[j] = op_norm(row[j] - prev_row[j]);
            out.continuity_modulus = std::max(out.continuity_modulus, quad::lp_of_samples(t, g, q, n - 1));
        }
        prev_row = std::move(row);
    }
    out.B = *std::max_element(out.profile.begin(), out.profile.end());
    return out;
}

/// ||k(0,.) - k(T,.)||_q over [0,T]: the sampled periodicity defect of (k6').
inline double periodicity_defect(const Kernel& k, const TimeMesh& mesh, double q) {
    const std::size_t n = mesh.size();
    std::vector<double> g(n);
    for (std::size_t j = 0; j < n; ++j) g[j] = op_norm(k(0.0, mesh[j]) - k(mesh.T(), mesh[j]));
    return quad::lp_of_samples(mesh.nodes(), g, q, n - 1);
}

/// Sampled certificate of the kernel conditions on one mesh.
struct KernelReport {
    std::size_t mesh_nodes = 0;
    double q = 2.0;
    double B = 0.0;
    double M_inv = std::numeric_limits<double>::infinity();
    bool diagonal_invertible = false;
    double psi_bound = 0.0;
    double psi_qnorm = 0.0;
    double continuity_modulus = 0.0;
    double periodicity_defect = 0.0;  // square domain only
    // Finite dimension: every k(t,s) is compact, so (k7)/(k7') hold trivially.
    static constexpr bool complete_continuity = true;
};

inline KernelReport analyze_kernel(const Kernel& k, const TimeMesh& mesh, double p, double diag_tol = 1e-12) {
    KernelReport r;
    r.mesh_nodes = mesh.size();
    r.q = quad::conjugate(p);
    auto prof = kernel_qnorm_profile(k, mesh, r.q);
    r.B = prof.B;
    r.continuity_modulus = prof.continuity_modulus;
    auto psi = estimate_psi(k, mesh);
    r.psi_bound = *std::max_element(psi.begin(), psi.end());
    r.psi_qnorm = lp_norm(mesh, psi, r.q);
    if (k.triangular()) {
        auto diag = check_diagonal_invertible(k, mesh, diag_tol);
        r.diagonal_invertible = diag.pass;
        r.M_inv = diag.M_inv;
    } else {
        r.periodicity_defect = periodicity_defect(k, mesh, r.q);
    }
    return r;
}

}  // namespace vie
