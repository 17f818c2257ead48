#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <string>

#include "vie/kernel.hpp"
#include "vie/mesh.hpp"

namespace vie {

/// Outcome of a sampled inequality lhs < threshold.
struct ConditionCheck {
    std::string name;
    bool holds = false;
    double lhs = 0.0;
    double threshold = 0.0;
    double margin = 0.0;  // threshold - lhs
};

inline ConditionCheck strict_less(std::string name, double lhs, double threshold) {
    return {std::move(name), lhs < threshold, lhs, threshold, threshold - lhs};
}

/// sup_t ||k(t,.)||_q with q conjugate to p.
inline double kernel_bound(const Kernel& k, const TimeMesh& mesh, double p) {
    return kernel_qnorm_profile(k, mesh, quad::conjugate(p)).B;
}

/// (E1): 4 B ||eta||_p < 1.
inline ConditionCheck check_E1(double B, double eta_norm) { return strict_less("E1", 4.0 * B * eta_norm, 1.0); }

inline ConditionCheck check_E1(const Kernel& k, std::span<const double> eta, double p, const TimeMesh& mesh) {
    return check_E1(kernel_bound(k, mesh, p), lp_norm(mesh, eta, p));
}

/// Right-hand side 2^{2/p-3} e^{-1/p} of the periodic contraction condition. It is the maximum
/// over omega > (p-1) ln 2 / (pT) of xi(omega) = 2^{1/p-2} ((1-p) ln 2 + p omega T)^{1/p} e^{-omega T},
/// attained at omega_0 = (1 + (p-1) ln 2) / (pT).
inline double contraction_threshold(double p) {
    if (!(p >= 1.0)) throw InvalidArgument("contraction_threshold: p must be >= 1");
    return std::pow(2.0, 2.0 / p - 3.0) * std::exp(-1.0 / p);
}

/// B ||eta||_p < 2^{2/p-3} e^{-1/p}.
inline ConditionCheck check_contraction_condition(double B, double eta_norm, double p) {
    return strict_less("contraction", B * eta_norm, contraction_threshold(p));
}

inline ConditionCheck check_contraction_condition(const Kernel& k, std::span<const double> eta, double p,
                                                  const TimeMesh& mesh) {
    return check_contraction_condition(kernel_bound(k, mesh, p), lp_norm(mesh, eta, p), p);
}

/// 2 B ||eta||_p < 1 with B over the full square.
inline ConditionCheck check_hammerstein_condition(double B, double eta_norm) {
    return strict_less("hammerstein", 2.0 * B * eta_norm, 1.0);
}

inline ConditionCheck check_hammerstein_condition(const Kernel& k, std::span<const double> eta, double p,
                                                  const TimeMesh& mesh) {
    if (k.triangular()) throw InvalidArgument("check_hammerstein_condition: square-domain kernel required");
    return check_hammerstein_condition(kernel_bound(k, mesh, p), lp_norm(mesh, eta, p));
}

}  // namespace vie
