#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "vie/solver.hpp"

using namespace vie;

namespace {

Path scalar(const MeshPtr& m, std::function<double(double)> fn) {
    return Path::from_function(m, [fn](double t) { return Vec::Constant(1, fn(t)); });
}

double sup_error(const Path& x, std::function<double(double)> exact, std::size_t from = 0) {
    double e = 0.0;
    for (std::size_t i = from; i < x.size(); ++i) e = std::max(e, std::abs(x.node(i)(0) - exact(x.mesh()[i])));
    return e;
}

const RhsFn identity_rhs = [](double, const Vec& x) -> Vec { return x; };

}  // namespace

TEST(AprioriBound, Examples) {
    auto m = make_uniform_mesh(1.0, 101, 1);
    Sampled one(m->size(), 1.0), zero(m->size(), 0.0);
    EXPECT_NEAR(apriori_bound(0.0, 1.0, one, 1.0, *m), std::exp(1.0), 1e-12);
    for (double p : {1.0, 2.0, 3.5}) EXPECT_NEAR(apriori_bound(0.7, 2.0, zero, p, *m), std::pow(2.0, 1.0 - 1.0 / p) * 0.7, 1e-14);
    EXPECT_NEAR(apriori_bound(1.0, 1.0, one, 2.0, *m), 2.0 * std::sqrt(2.0) * std::exp(1.0), 1e-10);
    EXPECT_NEAR(2.0 * std::sqrt(2.0) * std::exp(1.0), 7.6885, 1e-4);
    EXPECT_THROW(apriori_bound(1.0, 1.0, one, 0.5, *m), InvalidArgument);
    EXPECT_THROW(apriori_bound(-1.0, 1.0, one, 1.0, *m), InvalidArgument);
}

TEST(AprioriBound, GronwallInstance) {
    // x = int_0^t (1 + x): the extremal growth |F| = c (1 + |x|) with c = 1, so x = e^t - 1 <= M = e
    auto m = make_uniform_mesh(1.0, 401, 1);
    Kernel one = make_catalog_kernel("identity", 1, 1.0);
    RhsFn f = [](double, const Vec& x) -> Vec { return (1.0 + x.norm()) * Vec::Ones(1); };
    auto sol = solve_equation(one, f, Path::zero(m), SolverConfig{});
    EXPECT_LT(sup_error(sol.x, [](double t) { return std::exp(t) - 1.0; }), 1e-4);
    Sampled c(m->size(), 1.0);
    const double M = apriori_bound(0.0, 1.0, c, 1.0, *m);
    EXPECT_LE(sup_norm(sol.x), M);
    for (std::size_t i = 0; i < m->size(); ++i) EXPECT_LE(std::abs(sol.x.node(i)(0)), M);
}

TEST(SolverConfig, Validation) {
    SolverConfig c;
    EXPECT_NO_THROW(c.validate());
    c.tol = 0.0;
    EXPECT_THROW(c.validate(), InvalidArgument);
    c = {};
    c.damping = 0.0;
    EXPECT_THROW(c.validate(), InvalidArgument);
    c.damping = 1.5;
    EXPECT_THROW(c.validate(), InvalidArgument);
    c = {};
    c.max_iter = 0;
    EXPECT_THROW(c.validate(), InvalidArgument);
    c = {};
    c.p = 0.9;
    EXPECT_THROW(c.validate(), InvalidArgument);
}

TEST(GrowthData, Validation) {
    auto m = make_uniform_mesh(1.0, 5, 1);
    GrowthData g{Sampled(5, 1.0), Sampled(5, 0.0), {}};
    EXPECT_NO_THROW(g.validate(*m));
    g.eta[2] = -1.0;
    EXPECT_THROW(g.validate(*m), InvalidArgument);
    g.eta = Sampled(4, 0.0);
    EXPECT_THROW(g.validate(*m), InvalidArgument);
    g.eta = Sampled(5, NAN);
    EXPECT_THROW(g.validate(*m), InvalidArgument);
}

TEST(SolveEquation, Examples) {
    auto m = make_uniform_mesh(1.0, 401, 1);
    Kernel one = make_catalog_kernel("identity", 1, 1.0);
    Path h = Path::constant(m, Vec::Ones(1));
    auto grow = solve_equation(one, identity_rhs, h, SolverConfig{});
    EXPECT_LT(sup_error(grow.x, [](double t) { return std::exp(t); }), 1e-3);
    EXPECT_LE(grow.report.residual, 1e-10 * (1.0 + sup_norm(grow.x)));

    RhsFn zero = [](double, const Vec& x) -> Vec { return Vec::Zero(x.size()); };
    Path hs = scalar(m, [](double t) { return std::sin(5 * t); });
    auto flat = solve_equation(one, zero, hs, SolverConfig{});
    EXPECT_EQ(flat.report.iterations, 1u);
    EXPECT_EQ(sup_distance(flat.x, hs), 0.0);

    RhsFn neg = [](double, const Vec& x) -> Vec { return -x; };
    auto decay = solve_equation(one, neg, h, SolverConfig{});
    EXPECT_LT(sup_error(decay.x, [](double t) { return std::exp(-t); }), 1e-3);
}

TEST(SolveEquation, ResidualIsIndependentlyConsistent) {
    auto m = make_uniform_mesh(2.0, 201, 2);
    Kernel k = make_catalog_kernel("convolution-exp(0.5)", 2, 2.0);
    RhsFn f = [](double t, const Vec& x) -> Vec { return Vec((Vec(2) << std::sin(x(1)) + t, -0.5 * x(0)).finished()); };
    Path h = Path::from_function(m, [](double t) { return Vec((Vec(2) << 1.0, std::cos(t)).finished()); });
    auto sol = solve_equation(k, f, h, SolverConfig{});
    Path fx = Path::from_function(m, [&](double t) { return f(t, sol.x.eval(t)); });
    EXPECT_LE(sup_distance(sol.x, h + apply_V(k, fx)), 1e-10 * (1.0 + sup_norm(sol.x)) * 1.01);
}

TEST(SolveEquation, Errors) {
    auto m = make_uniform_mesh(1.0, 51, 1);
    Kernel one = make_catalog_kernel("identity", 1, 1.0);
    Path h = Path::constant(m, Vec::Ones(1));
    RhsFn bad = [](double, const Vec& x) -> Vec { return Vec::Constant(x.size(), NAN); };
    EXPECT_THROW(solve_equation(one, bad, h, SolverConfig{}), NumericFailure);

    SolverConfig few;
    few.max_iter = 2;
    try {
        solve_equation(one, identity_rhs, h, few);
        FAIL() << "expected non-convergence";
    } catch (const NonConvergence& e) {
        EXPECT_GT(e.last_residual(), 0.0);
    }
    // x' = x^2 blows up at t = 1 for h = 1
    RhsFn sq = [](double, const Vec& x) -> Vec { return x.cwiseProduct(x); };
    auto m2 = make_uniform_mesh(2.0, 101, 1);
    EXPECT_THROW(solve_equation(make_catalog_kernel("identity", 1, 2.0), sq, Path::constant(m2, Vec::Ones(1)), SolverConfig{}),
                 NumericalError);
    EXPECT_THROW(solve_equation(make_catalog_kernel("fredholm-constant", 1, 1.0), identity_rhs, h, SolverConfig{}), InvalidArgument);
}

TEST(SolveEquation, DampingReachesSameSolution) {
    auto m = make_uniform_mesh(1.0, 201, 1);
    Kernel k = make_catalog_kernel("difference", 1, 1.0);
    Path h = Path::constant(m, Vec::Ones(1));
    SolverConfig damped;
    damped.damping = 0.5;
    damped.max_iter = 2000;
    auto a = solve_equation(k, identity_rhs, h, SolverConfig{});
    auto b = solve_equation(k, identity_rhs, h, damped);
    EXPECT_LT(sup_distance(a.x, b.x), 1e-8);
    EXPECT_LT(sup_error(a.x, [](double t) { return std::cosh(t); }), 1e-4);
}

TEST(SolveEquation, Uniqueness) {
    auto m = make_uniform_mesh(1.0, 201, 1);
    Kernel k = make_catalog_kernel("convolution-exp(1)", 1, 1.0);
    RhsFn f = [](double t, const Vec& x) -> Vec { return Vec::Constant(1, std::sin(x(0)) + t); };
    Path h = scalar(m, [](double t) { return std::cos(t); });
    SolverConfig cfg;
    auto a = solve_equation(k, f, h, cfg);
    Path start = h + Path::constant(m, Vec::Ones(1));
    auto b = solve_equation(k, f, h, cfg, start);
    EXPECT_LE(sup_distance(a.x, b.x), 10.0 * cfg.tol);
}

TEST(SolveEquation, ContinuousDependence) {
    auto m = make_uniform_mesh(1.0, 201, 1);
    Kernel k = make_catalog_kernel("identity", 1, 1.0);
    RhsFn f = [](double, const Vec& x) -> Vec { return Vec::Constant(1, std::sin(x(0))); };
    Path h = Path::constant(m, Vec::Ones(1));
    auto base = solve_equation(k, f, h, SolverConfig{});
    std::vector<double> dist;
    for (int n = 0; n < 6; ++n) {
        const double delta = 0.1 * std::ldexp(1.0, -n);
        Path hn = h + scalar(m, [delta](double t) { return delta * (1.0 + t); });
        auto sol = solve_equation(k, f, hn, SolverConfig{});
        dist.push_back(sup_distance(sol.x, base.x));
        // Gronwall: Lipschitz constant 1, so the gap is at most e^T times the data gap
        EXPECT_LE(dist.back(), std::exp(1.0) * 2.0 * delta);
    }
    for (std::size_t i = 1; i < dist.size(); ++i) EXPECT_NEAR(dist[i - 1] / dist[i], 2.0, 0.4);
}

TEST(SolveContinuation, Examples) {
    auto m = make_uniform_mesh(1.0, 401, 1);
    Kernel one = make_catalog_kernel("identity", 1, 1.0);
    Path h = Path::constant(m, Vec::Ones(1));
    Path wp = Path::constant(m, Vec::Ones(1));

    auto c0 = solve_continuation(one, identity_rhs, wp, 0.0, h, SolverConfig{});
    auto direct = solve_equation(one, identity_rhs, h, SolverConfig{});
    EXPECT_LT(sup_distance(c0.x, direct.x), 1e-12);

    Path wr = scalar(m, [](double t) { return std::cos(3 * t); });
    auto c1 = solve_continuation(one, identity_rhs, wr, 1.0, h, SolverConfig{});
    EXPECT_NEAR(c1.x.node(400)(0), (h + apply_V(one, wr)).node(400)(0), 1e-12);

    auto half = solve_continuation(one, identity_rhs, wp, 0.5, h, SolverConfig{});
    EXPECT_LT(sup_error(half.x, [](double t) { return 1.5 * std::exp(t - 0.5); }, half.first_free_node), 1e-3);
    EXPECT_EQ(half.first_free_node, 200u);

    EXPECT_THROW(solve_continuation(one, identity_rhs, wp, 1.5, h, SolverConfig{}), InvalidArgument);
}

TEST(SolveContinuation, CutBetweenNodes) {
    auto m = make_uniform_mesh(1.0, 401, 1);
    Kernel one = make_catalog_kernel("identity", 1, 1.0);
    Path h = Path::constant(m, Vec::Ones(1));
    Path wp = Path::constant(m, Vec::Ones(1));
    const double s = 0.4321;
    auto c = solve_continuation(one, identity_rhs, wp, s, h, SolverConfig{});
    EXPECT_DOUBLE_EQ(c.cut, s);
    EXPECT_NEAR(c.value_at_cut(0), 1.0 + s, 1e-12);
    EXPECT_LT(sup_error(c.x, [s](double t) { return (1.0 + s) * std::exp(t - s); }, c.first_free_node), 1e-3);
}

TEST(HomotopyEval, Endpoints) {
    auto m = make_uniform_mesh(1.0, 201, 1);
    Kernel one = make_catalog_kernel("identity", 1, 1.0);
    Path h = Path::constant(m, Vec::Ones(1));
    Path w1 = scalar(m, [](double t) { return std::cos(t); });
    Path w2 = scalar(m, [](double t) { return t * t - 1.0; });
    Path y1 = h + apply_V(one, w1);
    Path y2 = h + apply_V(one, w2);
    SolverConfig cfg;

    EXPECT_EQ(sup_distance(homotopy_eval(one, identity_rhs, y1, w1, 1.0, h, cfg), y1), 0.0);

    Path a = homotopy_eval(one, identity_rhs, y1, w1, 0.0, h, cfg);
    Path b = homotopy_eval(one, identity_rhs, y2, w2, 0.0, h, cfg);
    EXPECT_TRUE(a.values() == b.values());
    EXPECT_LT(sup_error(a, [](double t) { return std::exp(t); }), 1e-3);

    // the recovered-selection overload agrees with the explicit one
    Path c = homotopy_eval(one, identity_rhs, y1, 0.5, h, cfg);
    Path d = homotopy_eval(one, identity_rhs, y1, w1, 0.5, h, cfg);
    EXPECT_LT(sup_distance(c, d), 1e-3);
}

TEST(HomotopyEval, ContinuityInS) {
    auto m = make_uniform_mesh(1.0, 1001, 1);
    Kernel one = make_catalog_kernel("identity", 1, 1.0);
    Path h = Path::constant(m, Vec::Ones(1));
    Path w = scalar(m, [](double t) { return std::cos(t); });
    Path y = h + apply_V(one, w);
    SolverConfig cfg;
    for (double s : {0.1, 0.3333, 0.5, 0.9}) {
        Path a = homotopy_eval(one, identity_rhs, y, w, s, h, cfg);
        Path b = homotopy_eval(one, identity_rhs, y, w, s + 1e-3, h, cfg);
        EXPECT_LE(sup_distance(a, b), 10.0 * 1e-3) << "s=" << s;
    }
}

TEST(HomotopyEval, RejectsInconsistentPair) {
    auto m = make_uniform_mesh(1.0, 51, 1);
    Kernel one = make_catalog_kernel("identity", 1, 1.0);
    Path h = Path::constant(m, Vec::Ones(1));
    Path w = Path::constant(m, Vec::Ones(1));
    Path y = h + apply_V(one, w) + Path::constant(m, Vec::Constant(1, 0.1));
    EXPECT_THROW(homotopy_eval(one, identity_rhs, y, w, 0.5, h, SolverConfig{}), InconsistentData);
    EXPECT_THROW(homotopy_eval(one, identity_rhs, h, w, 1.5, h, SolverConfig{}), InvalidArgument);
}

TEST(PhiOfL, Examples) {
    auto m = make_uniform_mesh(1.0, 1001, 1);
    Sampled zero(m->size(), 0.0), one(m->size(), 1.0);
    for (double L : {0.0, 1.0, 10.0}) EXPECT_EQ(phi_of_L(zero, 2.0, L, *m), 0.0);
    EXPECT_NEAR(phi_of_L(one, 2.0, 2.0, *m), std::sqrt((1.0 - std::exp(-4.0)) / 4.0), 1e-4);
    EXPECT_LT(phi_of_L(one, 2.0, 10.0, *m), phi_of_L(one, 2.0, 1.0, *m));
    EXPECT_THROW(phi_of_L(one, 0.5, 1.0, *m), InvalidArgument);
}

TEST(PhiOfL, ClosedFormP1) {
    // p = 1, eta = 1: sup_t e^{-Lt} (e^{Lt} - 1) / L = (1 - e^{-L}) / L
    auto m = make_uniform_mesh(1.0, 201, 1);
    Sampled one(m->size(), 1.0);
    for (double L : {0.5, 3.0, 40.0}) EXPECT_NEAR(phi_of_L(one, 1.0, L, *m), (1.0 - std::exp(-L)) / L, 1e-9);
}

TEST(PhiOfL, NonincreasingInL) {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.0, 2.0);
    auto m = make_uniform_mesh(1.0, 301, 1);
    for (int trial = 0; trial < 5; ++trial) {
        const double a = u(rng), b = u(rng), c = u(rng);
        Sampled eta = sample(*m, [&](double t) { return a + b * std::abs(std::sin(7.0 * c * t)); });
        for (double p : {1.0, 2.0, 3.0}) {
            double prev = INFINITY;
            for (int i = 0; i < 10; ++i) {
                const double L = std::pow(10.0, -2.0 + 5.0 * i / 9.0);
                const double v = phi_of_L(eta, p, L, *m);
                EXPECT_LE(v, prev * (1.0 + 1e-12));
                prev = v;
            }
        }
    }
}

TEST(ChooseL, Examples) {
    auto m = make_uniform_mesh(1.0, 1001, 1);
    Kernel one = make_catalog_kernel("identity", 1, 1.0);
    Sampled zero(m->size(), 0.0), eta1(m->size(), 1.0), eta1000(m->size(), 1000.0);

    auto z = choose_L(one, zero, 2.0, *m);
    EXPECT_EQ(z.L, 0.0);

    auto a = choose_L(one, eta1, 2.0, *m);
    EXPECT_NEAR(a.B, 1.0, 1e-12);
    EXPECT_NEAR(a.threshold, 0.5, 1e-12);
    EXPECT_LE(a.L, 2.0);
    EXPECT_LT(a.phi, a.threshold);
    EXPECT_LT(phi_of_L(eta1, 2.0, 2.0, *m), 0.5);

    auto big = choose_L(one, eta1000, 2.0, *m);
    EXPECT_TRUE(std::isfinite(big.L));
    EXPECT_GT(big.L, 0.0);
    EXPECT_LT(phi_of_L(eta1000, 2.0, big.L, *m), 0.5);
    EXPECT_GE(phi_of_L(eta1000, 2.0, big.L / 2.0, *m), 0.5);

    auto triv = choose_L(make_catalog_kernel("zero", 1, 1.0), eta1, 2.0, *m);
    EXPECT_TRUE(triv.trivial);
    EXPECT_EQ(triv.L, 0.0);
}
