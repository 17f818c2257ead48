#pragma once

#include <cmath>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "vie/errors.hpp"
#include "vie/kernel.hpp"
#include "vie/mesh.hpp"
#include "vie/path.hpp"

namespace vie {

/// Kernel samples k(tau_i, tau_j) on an increasing node list, cached for repeated quadrature.
/// Triangular kernels store the lower triangle only.
class DiscreteKernel {
public:
    DiscreteKernel(const Kernel& k, std::span<const double> times)
        : times_(times.begin(), times.end()), dim_(k.dim()), triangular_(k.triangular()) {
        const std::size_t n = times_.size();
        const std::size_t dd = dim_ * dim_;
        data_.resize((triangular_ ? n * (n + 1) / 2 : n * n) * dd);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t last = triangular_ ? i : n - 1;
            for (std::size_t j = 0; j <= last; ++j) {
                Mat m = k(times_[i], times_[j]);
                std::copy(m.data(), m.data() + dd, data_.data() + offset(i, j));
            }
        }
    }

    std::size_t size() const noexcept { return times_.size(); }
    std::size_t dim() const noexcept { return dim_; }
    bool triangular() const noexcept { return triangular_; }
    std::span<const double> times() const noexcept { return times_; }

    Eigen::Map<const Mat> block(std::size_t i, std::size_t j) const {
        const auto d = static_cast<Eigen::Index>(dim_);
        return Eigen::Map<const Mat>(data_.data() + offset(i, j), d, d);
    }

    /// Trapezoid over tau[0..i] (triangle) or tau[0..N-1] (square) of k(tau_i, .) w(.),
    /// restricted to columns j in [from, to].
    Vec row(std::size_t i, const Mat& w, std::size_t from, std::size_t to) const {
        Vec acc = Vec::Zero(static_cast<Eigen::Index>(dim_));
        const std::size_t last = triangular_ ? i : times_.size() - 1;
        to = std::min(to, last);
        for (std::size_t j = from; j <= to && j <= last; ++j)
            acc.noalias() += quad::weight(times_, j, last) * (block(i, j) * w.col(static_cast<Eigen::Index>(j)));
        return acc;
    }

    /// All rows: the discrete operator applied to node values w (d x N).
    Mat apply(const Mat& w) const {
        Mat y(static_cast<Eigen::Index>(dim_), static_cast<Eigen::Index>(times_.size()));
        for (std::size_t i = 0; i < times_.size(); ++i) y.col(static_cast<Eigen::Index>(i)) = row(i, w, 0, times_.size() - 1);
        return y;
    }

private:
    std::size_t offset(std::size_t i, std::size_t j) const {
        const std::size_t dd = dim_ * dim_;
        return (triangular_ ? i * (i + 1) / 2 + j : i * times_.size() + j) * dd;
    }

    std::vector<double> times_;
    std::size_t dim_;
    bool triangular_;
    std::vector<double> data_;
};

namespace detail {

inline void require_kernel_fits(const Kernel& k, const Path& w) {
    if (k.dim() != w.dim()) throw InvalidArgument("kernel and path dimensions differ");
}

}  // namespace detail

/// int_0^u k(t, tau) w(tau) dtau by product trapezoid, u <= T arbitrary (partial last interval
/// uses the interpolated w(u)); t need not be a mesh node.
inline Vec truncated_integral(const Kernel& k, const Path& w, double t, double u) {
    const auto& mesh = w.mesh();
    const auto nodes = mesh.nodes();
    Vec acc = Vec::Zero(static_cast<Eigen::Index>(w.dim()));
    if (u <= 0.0) return acc;
    u = std::min(u, mesh.T());
    const std::size_t m = mesh.locate(u);
    for (std::size_t j = 0; j <= m; ++j)
        acc.noalias() += quad::weight(nodes, j, m) * (k(t, nodes[j]) * w.node(j));
    const double tail = u - nodes[m];
    if (tail > 0.0) acc.noalias() += 0.5 * tail * (k(t, nodes[m]) * w.node(m) + k(t, u) * w.eval(u));
    return acc;
}

/// (V w)(t_i) = int_0^{t_i} k(t_i,s) w(s) ds; y(0) = 0 exactly.
inline Path apply_V(const Kernel& k, const Path& w) {
    if (!k.triangular()) throw InvalidArgument("apply_V: triangular kernel required");
    detail::require_kernel_fits(k, w);
    DiscreteKernel dk(k, w.mesh().nodes());
    return Path(w.mesh_ptr(), dk.apply(w.values()));
}

inline Path apply_V(const Kernel& k, const Path& w, const TimeMesh& mesh) {
    if (!w.mesh().same_as(mesh)) throw InvalidArgument("apply_V: mesh mismatch");
    return apply_V(k, w);
}

/// (V_T w)(t_i) = int_0^T k(t_i,s) w(s) ds for square-domain kernels.
inline Path apply_V_T(const Kernel& k, const Path& w) {
    if (k.triangular()) throw InvalidArgument("apply_V_T: square-domain kernel required");
    detail::require_kernel_fits(k, w);
    DiscreteKernel dk(k, w.mesh().nodes());
    return Path(w.mesh_ptr(), dk.apply(w.values()));
}

inline Path apply_V_T(const Kernel& k, const Path& w, const TimeMesh& mesh) {
    if (!w.mesh().same_as(mesh)) throw InvalidArgument("apply_V_T: mesh mismatch");
    return apply_V_T(k, w);
}

/// y(t_i) = int_0^{min(t_i, s_frac T)} k(t_i,s) w(s) ds.
inline Path apply_V_trunc(const Kernel& k, const Path& w, double s_frac) {
    if (!k.triangular()) throw InvalidArgument("apply_V_trunc: triangular kernel required");
    if (!(s_frac >= 0.0 && s_frac <= 1.0)) throw InvalidArgument("apply_V_trunc: s_frac must lie in [0,1]");
    detail::require_kernel_fits(k, w);
    if (s_frac == 1.0) return apply_V(k, w);
    const auto& mesh = w.mesh();
    const double cut = s_frac * mesh.T();
    Path y = Path::zero(w.mesh_ptr());
    for (std::size_t i = 1; i < mesh.size(); ++i) y.node(i) = truncated_integral(k, w, mesh[i], std::min(mesh[i], cut));
    return y;
}

inline Path apply_V_trunc(const Kernel& k, const Path& w, const TimeMesh& mesh, double s_frac) {
    if (!w.mesh().same_as(mesh)) throw InvalidArgument("apply_V_trunc: mesh mismatch");
    return apply_V_trunc(k, w, s_frac);
}

struct InversionResult {
    Path w;
    double residual;  // sup |apply_V(k, w) - y|
};

/// Solves the lower-triangular collocation system of the product trapezoid rule for w with
/// V w = y. The diagonal block at node i is (h_i / 2) k(t_i, t_i). Node 0 is not determined by
/// the system; it takes the differentiated-equation value w(0) = k(0,0)^{-1} y'(0), with y'(0)
/// from a second-order one-sided difference.
inline InversionResult invert_V(const Kernel& k, const Path& y, double diag_tol = 1e-12, double data_tol = 1e-10) {
    if (!k.triangular()) throw InvalidArgument("invert_V: triangular kernel required");
    detail::require_kernel_fits(k, y);
    const auto& mesh = y.mesh();
    const auto diag = check_diagonal_invertible(k, mesh, diag_tol);
    if (!diag.pass) throw NotInvertible("invert_V: k(t,t) is singular on the mesh");
    if (y.node(0).norm() > data_tol * (1.0 + sup_norm(y)))
        throw InconsistentData("invert_V: y(0) must vanish for data in the range of V");

    const std::size_t n = mesh.size();
    const auto t = mesh.nodes();
    DiscreteKernel dk(k, t);
    Mat w = Mat::Zero(static_cast<Eigen::Index>(y.dim()), static_cast<Eigen::Index>(n));

    Vec dy0;
    if (n >= 3)
        dy0 = detail::lagrange_derivative(t[0], {t[0], t[1], t[2]}, {Mat(y.node(0)), Mat(y.node(1)), Mat(y.node(2))});
    else
        dy0 = (y.node(1) - y.node(0)) / mesh.step(1);
    w.col(0) = Mat(dk.block(0, 0)).partialPivLu().solve(dy0);

    for (std::size_t i = 1; i < n; ++i) {
        Vec rhs = y.node(i) - dk.row(i, w, 0, i - 1);
        Mat diag_block = quad::weight(t, i, i) * Mat(dk.block(i, i));
        w.col(static_cast<Eigen::Index>(i)) = diag_block.partialPivLu().solve(rhs);
    }
    Path wp(y.mesh_ptr(), std::move(w));
    const double residual = sup_distance(Path(y.mesh_ptr(), dk.apply(wp.values())), y);
    return {std::move(wp), residual};
}

}  // namespace vie
