#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "vie/periodic.hpp"

using namespace vie;

namespace {

Vec v1(double a) { return Vec::Constant(1, a); }
Mat m1(double a) { return Mat::Constant(1, 1, a); }

// The scalar instance U(t) = e^{-t}, k = e^{-(t-s)}, T = 1.
struct ScalarProblem {
    explicit ScalarProblem(std::size_t n = 401)
        : mesh(make_uniform_mesh(1.0, n, 1)),
          k(make_catalog_kernel("convolution-exp(1)", 1, 1.0)),
          U(make_stable_family(m1(-1.0), *mesh, 1.0)) {}
    MeshPtr mesh;
    Kernel k;
    StableFamily U;
};

RhsFn constant_rhs(double c) {
    return [c](double, const Vec& x) -> Vec { return Vec::Constant(x.size(), c); };
}

Kernel periodic_separable(const TimeMesh& mesh) {
    const auto d = static_cast<Eigen::Index>(mesh.dim());
    return separable_kernel([d](double t) -> Mat { return (1.0 + std::cos(2.0 * std::numbers::pi * t) / 2.0) * Mat::Identity(d, d); },
                            [d](double) -> Mat { return Mat::Identity(d, d); }, KernelDomain::Square, mesh);
}

// largest singular value of e^{-t} [[1, 5t], [0, 1]]
double jordan_norm(double t) {
    const double a = 5.0 * t;
    return std::exp(-t) * (a + std::sqrt(a * a + 4.0)) / 2.0;
}

}  // namespace

TEST(StableFamily, DiagonalDecay) {
    auto m = make_uniform_mesh(1.0, 11, 2);
    auto U = make_stable_family(-Mat::Identity(2, 2), *m, 1.0);
    EXPECT_EQ(U.certificate, StabilityCertificate::Uniform);
    EXPECT_TRUE(U.U[0].isApprox(Mat::Identity(2, 2)));
    for (std::size_t i = 0; i < m->size(); ++i) EXPECT_NEAR(spectral_norm(U.U[i]), std::exp(-(*m)[i]), 1e-14);
    EXPECT_NEAR(U.norm_UT, std::exp(-1.0), 1e-14);
}

TEST(StableFamily, ZeroGeneratorIsNotStable) {
    auto m = make_uniform_mesh(1.0, 11, 2);
    EXPECT_THROW(make_stable_family(Mat::Zero(2, 2), *m, 1.0), NotStable);
}

TEST(StableFamily, TransientGrowthFallsBackToEndpoint) {
    Mat A(2, 2);
    A << -1.0, 5.0, 0.0, -1.0;
    auto m = make_uniform_mesh(6.0, 61, 2);
    auto U = make_stable_family(A, *m, 1.0);
    EXPECT_EQ(U.certificate, StabilityCertificate::EndpointOnly);
    EXPECT_NEAR(U.norm_UT, jordan_norm(6.0), 1e-12);
    EXPECT_LT(U.norm_UT, 1.0);
    EXPECT_GT(jordan_norm(0.1), std::exp(-0.1));
    for (std::size_t i = 0; i < m->size(); ++i) EXPECT_NEAR(spectral_norm(U.U[i]), jordan_norm((*m)[i]), 1e-10);

    // on [0,1] ||U(1)|| = e^{-1} (5 + sqrt 29)/2 > 1, so neither certificate holds
    auto short_mesh = make_uniform_mesh(1.0, 11, 2);
    EXPECT_THROW(make_stable_family(A, *short_mesh, 1.0), NotStable);
}

TEST(StableFamily, Errors) {
    auto m = make_uniform_mesh(1.0, 11, 2);
    EXPECT_THROW(make_stable_family(-Mat::Identity(3, 3), *m, 1.0), InvalidArgument);
    EXPECT_THROW(make_stable_family(-Mat::Identity(2, 2), *m, 0.0), InvalidArgument);
}

TEST(PoincareMap, NoForcing) {
    auto m = make_uniform_mesh(1.0, 51, 2);
    Mat A(2, 2);
    A << -1.0, 0.3, -0.3, -1.0;
    auto U = make_stable_family(A, *m, 1.0);
    Kernel k = make_catalog_kernel("convolution-exp(1)", 2, 1.0);
    Vec x0 = (Vec(2) << 0.7, -1.2).finished();
    Vec got = poincare_map(k, constant_rhs(0.0), U, m, x0, SolverConfig{});
    EXPECT_TRUE(got.isApprox(U.U.back() * x0, 1e-14));
}

TEST(PoincareMap, ScalarClosedForm) {
    ScalarProblem P;
    for (double x0 : {-2.0, 0.0, 0.5, 1.0, 3.0}) {
        Vec got = poincare_map(P.k, constant_rhs(1.0), P.U, P.mesh, v1(x0), SolverConfig{});
        EXPECT_NEAR(got(0), std::exp(-1.0) * x0 + (1.0 - std::exp(-1.0)), 1e-5);
    }
    // discrete fixed point up to the second-order quadrature error
    EXPECT_NEAR(poincare_map(P.k, constant_rhs(1.0), P.U, P.mesh, v1(1.0), SolverConfig{})(0), 1.0, 1e-6);
}

TEST(PoincareMap, SetValuedPerStrategy) {
    ScalarProblem P;
    auto F = make_catalog_field("band(0.9,1.1)", 1);
    auto vals = poincare_map(P.k, F, P.U, P.mesh, v1(0.0), {extremal(v1(1.0)), extremal(v1(-1.0))}, SolverConfig{});
    ASSERT_EQ(vals.size(), 2u);
    EXPECT_NEAR(vals[0](0), 1.1 * (1.0 - std::exp(-1.0)), 1e-5);
    EXPECT_NEAR(vals[1](0), 0.9 * (1.0 - std::exp(-1.0)), 1e-5);
    EXPECT_THROW(poincare_map(P.k, F, P.U, P.mesh, v1(0.0), {}, SolverConfig{}), InvalidArgument);
}

TEST(InvariantRadius, Formula) {
    ScalarProblem P(1001);
    Sampled mu(P.mesh->size(), 1.0);
    const double knorm = std::sqrt((1.0 - std::exp(-2.0)) / 2.0);
    EXPECT_NEAR(invariant_radius(P.k, P.U, *P.mesh, mu, 2.0), knorm / (1.0 - std::exp(-1.0)), 1e-6);
    // endpoint certificate uses (1 - ||U(T)||)^{-1}
    StableFamily E = P.U;
    E.certificate = StabilityCertificate::EndpointOnly;
    E.norm_UT = 0.5;
    EXPECT_NEAR(invariant_radius(P.k, E, *P.mesh, mu, 2.0), 2.0 * knorm, 1e-6);
}

TEST(FindPeriodicVolterra, ScalarFixedPoint) {
    ScalarProblem P(1001);
    Sampled mu(P.mesh->size(), 1.0);
    auto r = find_periodic_volterra(P.k, constant_rhs(1.0), P.U, P.mesh, mu, SolverConfig{});
    EXPECT_TRUE(r.accepted);
    EXPECT_NEAR(r.x0(0), 1.0, 1e-6);
    for (std::size_t i = 0; i < P.mesh->size(); ++i) EXPECT_NEAR(r.orbit.node(i)(0), 1.0, 1e-5);
    EXPECT_LT(r.fixed_point_residual, 1e-8);
    EXPECT_LT(r.periodicity_residual, 1e-8);
    EXPECT_LT(r.iterations, 50u);
    EXPECT_NEAR(r.contraction_estimate, std::exp(-1.0), 1e-6);
    EXPECT_EQ(r.orbit.node(0)(0), r.x0(0));
}

TEST(FindPeriodicVolterra, ZeroForcing) {
    ScalarProblem P;
    auto r = find_periodic_volterra(P.k, constant_rhs(0.0), P.U, P.mesh, {}, SolverConfig{});
    EXPECT_EQ(r.x0(0), 0.0);
    EXPECT_EQ(sup_norm(r.orbit), 0.0);
    EXPECT_TRUE(std::isinf(r.radius));
}

TEST(FindPeriodicVolterra, SetValuedBranchesMatchSingleValued) {
    ScalarProblem P;
    auto F = make_catalog_field("band(0.9,1.1)", 1);
    Sampled mu(P.mesh->size(), 1.1);
    for (double c : {1.1, 0.9}) {
        auto branch = find_periodic_volterra(P.k, F, extremal(v1(c > 1.0 ? 1.0 : -1.0)), P.U, P.mesh, mu, SolverConfig{});
        auto single = find_periodic_volterra(P.k, constant_rhs(c), P.U, P.mesh, mu, SolverConfig{});
        EXPECT_NEAR(branch.x0(0), c, 1e-6);
        EXPECT_NEAR(branch.x0(0), single.x0(0), 1e-12);
        EXPECT_TRUE(branch.accepted);
    }
}

TEST(FindPeriodicVolterra, NonlinearTwoDimensional) {
    auto m = make_uniform_mesh(1.0, 201, 2);
    Kernel k = make_catalog_kernel("convolution-exp(1)", 2, 1.0);
    auto U = make_stable_family(-Mat::Identity(2, 2), *m, 1.0);
    // |f| <= mu = 1.1 per component, Lipschitz constant eta = 0.1
    RhsFn f = [](double t, const Vec& x) -> Vec {
        return (Vec(2) << std::cos(2.0 * std::numbers::pi * t) + 0.1 * std::sin(x(1)), 0.1 * std::cos(x(0))).finished();
    };
    SolverConfig cfg;
    PeriodicOptions opt;
    opt.eta = Sampled(m->size(), 0.1);
    Sampled mu(m->size(), std::hypot(1.1, 0.1));
    auto r = find_periodic_volterra(k, f, U, m, mu, cfg, opt);
    ASSERT_TRUE(r.condition.has_value());
    EXPECT_TRUE(r.condition->holds);
    EXPECT_TRUE(r.accepted);
    EXPECT_LE(r.x0.norm(), r.radius);
    EXPECT_LE((r.orbit.node(0) - r.orbit.node(m->size() - 1)).norm(), opt.fp_tol);
    // independent check: P(x0) = x0 via a fresh map evaluation
    EXPECT_LE((poincare_map(k, f, U, m, r.x0, cfg) - r.x0).norm(), 1e-9);

    const double ratio = measure_contraction(k, f, U, m, r.radius, 20, 17, cfg);
    EXPECT_LT(ratio, 1.0);
    EXPECT_GT(ratio, 0.0);

    // ball invariance
    detail::SampleRng rng(3, 0, 0);
    for (int i = 0; i < 20; ++i) {
        Vec a = (Vec(2) << rng.uniform() - 0.5, rng.uniform() - 0.5).finished();
        a *= r.radius * rng.uniform() / a.norm();
        EXPECT_LE(poincare_map(k, f, U, m, a, cfg).norm(), r.radius + cfg.tol);
    }
}

TEST(FindPeriodicVolterra, ConditionGate) {
    ScalarProblem P;
    PeriodicOptions opt;
    opt.eta = Sampled(P.mesh->size(), 1.0);  // B ||eta|| ~ 0.66 > 0.1516
    EXPECT_THROW(find_periodic_volterra(P.k, constant_rhs(1.0), P.U, P.mesh, {}, SolverConfig{}, opt), PreconditionViolated);
    opt.warn_and_proceed = true;
    auto r = find_periodic_volterra(P.k, constant_rhs(1.0), P.U, P.mesh, {}, SolverConfig{}, opt);
    ASSERT_TRUE(r.condition.has_value());
    EXPECT_FALSE(r.condition->holds);
    EXPECT_TRUE(r.accepted);
}

TEST(FindPeriodicVolterra, IterationCap) {
    ScalarProblem P;
    PeriodicOptions opt;
    opt.max_iter = 3;
    EXPECT_THROW(find_periodic_volterra(P.k, constant_rhs(1.0), P.U, P.mesh, {}, SolverConfig{}, opt), NonConvergence);
    auto other = make_uniform_mesh(1.0, 11, 1);
    EXPECT_THROW(find_periodic_volterra(P.k, constant_rhs(1.0), P.U, other, {}, SolverConfig{}), InvalidArgument);
}

TEST(Hammerstein, ZeroForcingReturnsH) {
    auto m = make_uniform_mesh(1.0, 101, 1);
    Kernel k = periodic_separable(*m);
    Path h = Path::from_function(m, [](double t) { return v1(std::cos(2.0 * std::numbers::pi * t)); });
    auto r = solve_hammerstein_periodic(k, constant_rhs(0.0), h, SolverConfig{});
    EXPECT_TRUE(r.x.values() == h.values());
    EXPECT_LE(r.periodicity_residual, 1e-12);
    EXPECT_TRUE(r.accepted);
}

TEST(Hammerstein, AffineClosedForm) {
    auto m = make_uniform_mesh(1.0, 201, 2);
    Kernel k = periodic_separable(*m);
    const double gamma = 0.5;
    Path h = Path::from_function(m, [](double t) {
        return (Vec(2) << std::cos(2.0 * std::numbers::pi * t), std::sin(2.0 * std::numbers::pi * t)).finished();
    });
    auto r = solve_hammerstein_periodic(k, constant_rhs(gamma), h, SolverConfig{});
    for (std::size_t i = 0; i < m->size(); ++i) {
        const double t = (*m)[i];
        Vec expect = h.node(i) + Vec::Constant(2, gamma * (1.0 + std::cos(2.0 * std::numbers::pi * t) / 2.0));
        EXPECT_LT((r.x.node(i) - expect).norm(), 1e-12);
    }
    EXPECT_LT(r.periodicity_residual, 1e-6);
    EXPECT_TRUE(r.accepted);
}

TEST(Hammerstein, NonlinearAgainstFinerRun) {
    RhsFn f = [](double, const Vec& x) -> Vec { return 0.2 * x.array().sin().matrix(); };
    HammersteinOptions opt;
    SolverConfig cfg;
    auto run = [&](std::size_t n) {
        auto m = make_uniform_mesh(1.0, n, 1);
        Path h = Path::from_function(m, [](double t) { return v1(std::cos(2.0 * std::numbers::pi * t) + 0.5); });
        opt.eta = Sampled(n, 0.2);
        return solve_hammerstein_periodic(periodic_separable(*m), f, h, cfg, opt);
    };
    auto coarse = run(201);
    auto fine = run(401);
    EXPECT_TRUE(coarse.accepted);
    EXPECT_GT(coarse.iterations, 3u);
    EXPECT_LT(coarse.periodicity_residual, 1e-8);
    ASSERT_TRUE(coarse.condition.has_value());
    EXPECT_TRUE(coarse.condition->holds);
    // the solution is h + c f_k(t) with c = 0.2 int sin(x); the refined run agrees at shared nodes
    double gap = 0.0;
    for (std::size_t i = 0; i < coarse.x.size(); ++i) gap = std::max(gap, std::abs(coarse.x.node(i)(0) - fine.x.node(2 * i)(0)));
    EXPECT_LT(gap, 1e-4);
    const double c = coarse.x.node(0)(0) - 1.5;  // x(0) = h(0) + c f_k(0), f_k(0) = 1.5
    for (std::size_t i = 0; i < coarse.x.size(); ++i) {
        const double t = coarse.x.mesh()[i];
        EXPECT_NEAR(coarse.x.node(i)(0), std::cos(2.0 * std::numbers::pi * t) + 0.5 + c / 1.5 * (1.0 + std::cos(2.0 * std::numbers::pi * t) / 2.0), 1e-9);
    }
}

TEST(Hammerstein, NonlinearSymmetricForcing) {
    // with h = cos(2 pi t) the mean of sin(h) vanishes, so x = h is the fixed point
    auto m = make_uniform_mesh(1.0, 201, 1);
    Path h = Path::from_function(m, [](double t) { return v1(std::cos(2.0 * std::numbers::pi * t)); });
    RhsFn f = [](double, const Vec& x) -> Vec { return 0.2 * x.array().sin().matrix(); };
    auto r = solve_hammerstein_periodic(periodic_separable(*m), f, h, SolverConfig{});
    EXPECT_LT(std::abs(r.x.node(0)(0) - r.x.node(m->size() - 1)(0)), 1e-8);
    EXPECT_LT(sup_distance(r.x, h), 1e-9);
    EXPECT_TRUE(r.accepted);
}

TEST(Hammerstein, SetValuedBranch) {
    auto m = make_uniform_mesh(1.0, 101, 1);
    Path h = Path::from_function(m, [](double t) { return v1(std::sin(2.0 * std::numbers::pi * t)); });
    auto r = solve_hammerstein_periodic(periodic_separable(*m), make_catalog_field("band(0.9,1.1)", 1), extremal(v1(1.0)), h,
                                        SolverConfig{});
    for (std::size_t i = 0; i < m->size(); ++i) {
        const double t = (*m)[i];
        EXPECT_NEAR(r.x.node(i)(0), h.node(i)(0) + 1.1 * (1.0 + std::cos(2.0 * std::numbers::pi * t) / 2.0), 1e-12);
    }
    EXPECT_TRUE(r.accepted);
}

TEST(Hammerstein, Preconditions) {
    auto m = make_uniform_mesh(1.0, 101, 1);
    Kernel k = periodic_separable(*m);
    Path drift = Path::from_function(m, [](double t) { return v1(t); });
    EXPECT_THROW(solve_hammerstein_periodic(k, constant_rhs(0.0), drift, SolverConfig{}), PreconditionViolated);

    Kernel aperiodic = separable_kernel([](double t) -> Mat { return m1(std::exp(t)); }, [](double) -> Mat { return m1(1.0); },
                                        KernelDomain::Square, *m);
    Path h = Path::zero(m);
    EXPECT_THROW(solve_hammerstein_periodic(aperiodic, constant_rhs(0.1), h, SolverConfig{}), PreconditionViolated);

    HammersteinOptions strong;
    strong.eta = Sampled(m->size(), 0.5);  // 2 * 1.5 * 0.5 > 1
    EXPECT_THROW(solve_hammerstein_periodic(k, constant_rhs(0.1), h, SolverConfig{}, strong), PreconditionViolated);

    HammersteinOptions loose;
    loose.warn_and_proceed = true;
    auto r = solve_hammerstein_periodic(aperiodic, constant_rhs(0.1), h, SolverConfig{}, loose);
    EXPECT_FALSE(r.accepted);  // x(0) - x(T) = 0.1 (1 - e)
    EXPECT_NEAR(r.periodicity_residual, 0.1 * (std::exp(1.0) - 1.0), 1e-12);

    EXPECT_THROW(solve_hammerstein_periodic(make_catalog_kernel("identity", 1, 1.0), constant_rhs(0.0), h, SolverConfig{}),
                 InvalidArgument);
}

TEST(PeriodicCsv, Layout) {
    ScalarProblem P(51);
    auto r = find_periodic_volterra(P.k, constant_rhs(1.0), P.U, P.mesh, {}, SolverConfig{});
    std::ostringstream os;
    write_periodic_csv(os, r);
    std::istringstream is(os.str());
    std::string header, row, extra;
    std::getline(is, header);
    std::getline(is, row);
    EXPECT_EQ(header, "x0_0,fixed_point_residual,periodicity_residual,iterations,contraction_estimate");
    EXPECT_EQ(std::count(row.begin(), row.end(), ','), 4);
    EXPECT_FALSE(std::getline(is, extra));

    std::ostringstream orbit;
    write_orbit_csv(orbit, r.orbit, r.w, 0.0);
    EXPECT_EQ(orbit.str().substr(0, orbit.str().find('\n')), "sample_id,node_time,x0,w0,eq_residual,incl_residual");
}
