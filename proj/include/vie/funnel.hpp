#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "vie/conditions.hpp"
#include "vie/convex_set.hpp"
#include "vie/csv.hpp"
#include "vie/errors.hpp"
#include "vie/kernel.hpp"
#include "vie/path.hpp"
#include "vie/set_field.hpp"
#include "vie/solver.hpp"
#include "vie/volterra.hpp"

namespace vie {

struct FunnelSample {
    std::size_t id = 0;
    Path x;
    Path w;
    double eq_residual = 0.0;    // sup |x - h - V(w)|
    double incl_residual = 0.0;  // max_i dist(w_i, F(t_i, x_i))
    bool accepted = false;
    std::size_t iterations = 0;
    std::string failure;         // set for rejected samples
};

struct Funnel {
    MeshPtr mesh;
    std::vector<FunnelSample> samples;   // accepted, ordered by id
    std::vector<FunnelSample> rejected;
    std::uint64_t seed = 0;
    std::string tag;

    PathFamily family() const {
        PathFamily fam;
        for (const auto& s : samples) fam.add(s.x);
        return fam;
    }
};

namespace detail {

/// Re-verifies both residual contracts of a computed (x, w) pair.
inline void score_sample(const Kernel& k, const SetField& F, const Path& h, FunnelSample& s, double tol) {
    s.eq_residual = sup_distance(s.x, h + apply_V(k, s.w));
    double incl = 0.0;
    const auto& mesh = s.x.mesh();
    for (std::size_t i = 0; i < mesh.size(); ++i)
        incl = std::max(incl, distance(F(mesh[i], s.x.node(i)), s.w.node(i)));
    s.incl_residual = incl;
    s.accepted = s.eq_residual <= tol * (1.0 + sup_norm(s.x)) && s.incl_residual <= tol * (1.0 + sup_norm(s.w));
}

inline std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Stream for (seed, index, attempt); portable draws built from raw 64-bit output only.
class SampleRng {
public:
    SampleRng(std::uint64_t seed, std::uint64_t index, std::uint64_t attempt)
        : state_(splitmix64(splitmix64(seed) ^ splitmix64(index * 0x632be59bd9b4e019ULL + attempt))) {}

    std::uint64_t next() { return state_ = splitmix64(state_); }
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

private:
    std::uint64_t state_;
};

/// Node-wise directions for sample `index` of `count`: a random unit u (first nonzero component
/// positive) before a stratified switch time tau = (index + U) / count * T, and -u after it.
inline std::vector<Vec> switching_directions(const TimeMesh& mesh, std::size_t index, std::size_t count, SampleRng& rng) {
    const auto d = static_cast<Eigen::Index>(mesh.dim());
    Vec u(d);
    do {
        for (Eigen::Index i = 0; i < d; ++i) u(i) = rng.normal();
    } while (!(u.norm() > 1e-12));
    u.normalize();
    for (Eigen::Index i = 0; i < d; ++i)
        if (u(i) != 0.0) {
            if (u(i) < 0.0) u = -u;
            break;
        }
    const double tau = (static_cast<double>(index) + rng.uniform()) / static_cast<double>(count) * mesh.T();
    std::vector<Vec> dirs(mesh.size());
    for (std::size_t i = 0; i < mesh.size(); ++i) dirs[i] = mesh[i] < tau ? u : Vec(-u);
    return dirs;
}

}  // namespace detail

/// One solution of x = h + V(w), w(t) in F(t, x(t)), with w chosen by the strategy. Solver
/// failures come back as a rejected sample.
inline FunnelSample solve_inclusion_selection(const Kernel& k, const SetField& F, const Path& h, const Strategy& strategy,
                                              const SolverConfig& cfg) {
    cfg.validate();
    if (!k.triangular()) throw InvalidArgument("solve_inclusion_selection: triangular kernel required");
    if (F.dim() != h.dim()) throw InvalidArgument("solve_inclusion_selection: field and path dimensions differ");
    detail::require_kernel_fits(k, h);
    DiscreteKernel K(k, h.mesh().nodes());
    detail::CausalSolver s(K, h.values(), detail::make_selector(F, strategy, h.size()), cfg);
    FunnelSample out{0, Path::zero(h.mesh_ptr()), Path::zero(h.mesh_ptr()), 0.0, 0.0, false, 0, {}};
    try {
        s.run(h.values());
    } catch (const NonConvergence& e) {
        out.failure = e.what();
        out.eq_residual = e.last_residual();
        out.incl_residual = std::numeric_limits<double>::quiet_NaN();
        return out;
    } catch (const NumericFailure& e) {
        out.failure = e.what();
        out.eq_residual = out.incl_residual = std::numeric_limits<double>::quiet_NaN();
        return out;
    }
    out.x = Path(h.mesh_ptr(), std::move(s.x));
    out.w = Path(h.mesh_ptr(), std::move(s.w));
    out.iterations = s.report.iterations;
    detail::score_sample(k, F, h, out, cfg.tol);
    if (!out.accepted) out.failure = "residual above tolerance";
    return out;
}

/// n_samples accepted members, each from a switching extremal schedule drawn from (seed, index).
/// A rejected draw is retried with up to three fresh sub-streams; runs that never succeed are
/// reported in `rejected`. Results do not depend on `threads`.
inline Funnel sample_funnel(const Kernel& k, const SetField& F, const Path& h, std::size_t n_samples, std::uint64_t seed,
                            const SolverConfig& cfg, std::size_t threads = 1) {
    if (n_samples == 0) throw InvalidArgument("sample_funnel: n_samples must be >= 1");
    cfg.validate();
    constexpr std::size_t kAttempts = 4;
    std::vector<std::optional<FunnelSample>> slots(n_samples);
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;

    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n_samples) return;
            try {
                for (std::size_t attempt = 0; attempt < kAttempts; ++attempt) {
                    detail::SampleRng rng(seed, i, attempt);
                    Strategy strat = Extremal{detail::switching_directions(h.mesh(), i, n_samples, rng)};
                    slots[i] = solve_inclusion_selection(k, F, h, strat, cfg);
                    if (slots[i]->accepted) break;
                }
                slots[i]->id = i;
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                next = n_samples;
                return;
            }
        }
    };
    threads = std::max<std::size_t>(1, std::min(threads, n_samples));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (error) std::rethrow_exception(error);

    Funnel out;
    out.mesh = h.mesh_ptr();
    out.seed = seed;
    out.tag = F.name() + "|" + k.name();
    for (auto& s : slots) (s->accepted ? out.samples : out.rejected).push_back(std::move(*s));
    if (out.samples.empty()) throw EmptyFunnel("sample_funnel: no sample was accepted");
    return out;
}

/// 3 r (exp(2^{2p-1} B^p ||eta||_p^p) - 1)^{1/p}.
inline double nesting_defect_bound(double r, double B, double eta_norm, double p) {
    if (!(p >= 1.0) || r < 0.0 || B < 0.0 || eta_norm < 0.0) throw InvalidArgument("nesting_defect_bound: bad arguments");
    return 3.0 * r * std::pow(std::expm1(std::pow(2.0, 2.0 * p - 1.0) * std::pow(B, p) * std::pow(eta_norm, p)), 1.0 / p);
}

struct NestingRow {
    std::size_t n = 0;            // compares funnel n+1 against funnel n (1-based)
    double r = 0.0;               // r_n
    double semidistance = 0.0;    // e(S_{n+1}, S_n)
    double defect_bound = 0.0;
};

struct NestingReport {
    std::vector<NestingRow> rows;
    bool nonincreasing = true;
    bool within_bound = true;
};

/// funnels[i] is built with radius radii[i]; row i compares funnels[i+1] with funnels[i].
inline NestingReport nesting_report(const std::vector<Funnel>& funnels, const std::vector<double>& radii, double B,
                                    double eta_norm, double p) {
    if (funnels.size() != radii.size()) throw InvalidArgument("nesting_report: one radius per funnel required");
    for (const auto& f : funnels)
        if (!f.mesh || !funnels.front().mesh || !f.mesh->same_as(*funnels.front().mesh))
            throw InvalidArgument("nesting_report: funnels live on different meshes");
    NestingReport rep;
    for (std::size_t i = 0; i + 1 < funnels.size(); ++i) {
        NestingRow row;
        row.n = i + 1;
        row.r = radii[i];
        row.semidistance = hausdorff_semidistance(funnels[i + 1].family(), funnels[i].family());
        row.defect_bound = nesting_defect_bound(radii[i], B, eta_norm, p);
        if (!rep.rows.empty() && row.semidistance > rep.rows.back().semidistance) rep.nonincreasing = false;
        if (row.semidistance > row.defect_bound) rep.within_bound = false;
        rep.rows.push_back(row);
    }
    return rep;
}

struct CrossSection {
    double t = 0.0;
    double max_gap = 0.0;
    double diameter = 0.0;
};

struct StructureReport {
    double modulus = 0.0;         // modulus_of_continuity at the largest mesh step
    double modulus_bound = 0.0;
    std::vector<std::pair<double, std::size_t>> covering;  // (eps, N(eps))
    std::vector<CrossSection> sections;                    // d = 1 only
    double terminal_relative_gap = 0.0;                    // gap / diameter at t = T, d = 1
};

/// Gap analysis of a scalar cross-section: largest distance between consecutive sorted values.
inline CrossSection cross_section(const Funnel& funnel, std::size_t node) {
    std::vector<double> v;
    for (const auto& s : funnel.samples) v.push_back(s.x.node(node)(0));
    std::sort(v.begin(), v.end());
    CrossSection cs{(*funnel.mesh)[node], 0.0, v.back() - v.front()};
    for (std::size_t i = 1; i < v.size(); ++i) cs.max_gap = std::max(cs.max_gap, v[i] - v[i - 1]);
    return cs;
}

/// Compactness and connectedness proxies. The modulus bound is, over node pairs t < t' within one
/// step, |h(t') - h(t)| + ||k(t',.) - k(t,.)||_{q,[0,t]} ||mu||_p + B (int_t^{t'} mu^p)^{1/p}.
inline StructureReport structure_diagnostics(const Funnel& funnel, const Kernel& k, const Path& h, std::span<const double> mu,
                                             double p, const std::vector<double>& eps_ladder) {
    if (funnel.samples.empty()) throw EmptyFunnel("structure_diagnostics: empty funnel");
    const auto& mesh = *funnel.mesh;
    if (!h.mesh().same_as(mesh)) throw InvalidArgument("structure_diagnostics: mesh mismatch");
    if (mu.size() != mesh.size()) throw InvalidArgument("structure_diagnostics: mu sample count does not match mesh");
    const double q = quad::conjugate(p);
    const auto prof = kernel_qnorm_profile(k, mesh, q);
    const double mu_p = lp_norm(mesh, mu, p);
    const auto t = mesh.nodes();
    const double xi = mesh.max_step();

    StructureReport rep;
    const PathFamily fam = funnel.family();
    rep.modulus = modulus_of_continuity(fam, xi);
    for (std::size_t i = 0; i < mesh.size(); ++i)
        for (std::size_t j = i + 1; j < mesh.size() && t[j] - t[i] <= xi * (1.0 + 1e-12); ++j) {
            std::vector<double> diff(mesh.size());
            for (std::size_t m = 0; m < mesh.size(); ++m) diff[m] = op_norm(k(t[j], t[m]) - k(t[i], t[m]));
            const double kd = quad::lp_of_samples(t, diff, q, k.triangular() ? i : mesh.size() - 1);
            double mu_int = 0.0;
            for (std::size_t m = i + 1; m <= j; ++m)
                mu_int += 0.5 * (std::pow(mu[m - 1], p) + std::pow(mu[m], p)) * (t[m] - t[m - 1]);
            const double b = (h.node(j) - h.node(i)).norm() + kd * mu_p + prof.B * std::pow(mu_int, 1.0 / p);
            rep.modulus_bound = std::max(rep.modulus_bound, b);
        }
    for (double eps : eps_ladder) rep.covering.emplace_back(eps, covering_number(fam, eps));
    if (mesh.dim() == 1)
        for (std::size_t i = 0; i < mesh.size(); ++i) {
            rep.sections.push_back(cross_section(funnel, i));
            const auto& cs = rep.sections.back();
            rep.terminal_relative_gap = cs.diameter > 0.0 ? cs.max_gap / cs.diameter : 0.0;
        }
    return rep;
}

/// sample_id,node_time,x0..,w0..,eq_residual,incl_residual; accepted samples only.
inline void write_funnel_csv(std::ostream& os, const Funnel& funnel) {
    const std::size_t d = funnel.mesh->dim();
    os << "sample_id,node_time";
    for (std::size_t c = 0; c < d; ++c) os << ",x" << c;
    for (std::size_t c = 0; c < d; ++c) os << ",w" << c;
    os << ",eq_residual,incl_residual\n";
    for (const auto& s : funnel.samples)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            os << s.id << ',' << csv::num((*funnel.mesh)[i]);
            for (std::size_t c = 0; c < d; ++c) os << ',' << csv::num(s.x.node(i)(static_cast<Eigen::Index>(c)));
            for (std::size_t c = 0; c < d; ++c) os << ',' << csv::num(s.w.node(i)(static_cast<Eigen::Index>(c)));
            os << ',' << csv::num(s.eq_residual) << ',' << csv::num(s.incl_residual) << '\n';
        }
}

}  // namespace vie
