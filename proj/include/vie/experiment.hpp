#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vie/vie.hpp"
#include "vie/expr.hpp"

#ifndef VIE_VERSION
#define VIE_VERSION "0.1.0"
#endif

namespace vie::cli {

using json = nlohmann::json;

enum ExitCode : int { kOk = 0, kConfigError = 2, kNonConvergence = 3, kIoError = 4 };

inline const std::vector<std::string>& experiment_kinds() {
    static const std::vector<std::string> kinds{"solve-eq",           "funnel",           "nesting-ladder",
                                                "periodic-volterra",  "periodic-hammerstein", "check-conditions",
                                                "convergence-table"};
    return kinds;
}

/// Problems addressable by name; each is the inline form it expands to.
inline const std::map<std::string, json>& problem_catalog() {
    static const std::map<std::string, json> cat = [] {
        std::map<std::string, json> c;
        c["exp-growth"] = {{"kernel", "identity"}, {"f", "x"}, {"h", "1"}, {"exact", "exp(t)"},
                           {"growth", {{"c", "1"}, {"eta", "1"}}}, {"mesh", {{"T", 1.0}, {"N", 401}, {"d", 1}}}};
        c["cosh"] = {{"kernel", "difference"}, {"f", "x"}, {"h", "1"}, {"exact", "cosh(t)"},
                     {"growth", {{"c", "1"}, {"eta", "1"}}}, {"mesh", {{"T", 1.0}, {"N", 401}, {"d", 1}}}};
        c["exp-decay"] = {{"kernel", "identity"}, {"f", "-x"}, {"h", "1"}, {"exact", "exp(-t)"},
                          {"growth", {{"c", "1"}, {"eta", "1"}}}, {"mesh", {{"T", 1.0}, {"N", 401}, {"d", 1}}}};
        c["zero-forcing"] = {{"kernel", "identity"}, {"f", "0"}, {"h", "1 + t"}, {"exact", "1 + t"},
                             {"growth", {{"c", "0"}, {"eta", "0"}, {"mu", "0"}}}, {"mesh", {{"T", 1.0}, {"N", 51}, {"d", 1}}}};
        c["interval-funnel"] = {{"kernel", "identity"}, {"field", "unit-box"}, {"h", "0"},
                                {"growth", {{"c", "1"}, {"eta", "0"}, {"mu", "1"}}},
                                {"mesh", {{"T", 1.0}, {"N", 201}, {"d", 1}}}};
        c["affine-ladder"] = {{"kernel", "identity"}, {"field", "affine-interval(0.1)"}, {"h", "0"},
                              {"growth", {{"c", "1"}, {"eta", "0.1"}}}, {"mesh", {{"T", 1.0}, {"N", 101}, {"d", 1}}}};
        c["periodic-volterra-scalar"] = {{"kernel", "convolution-exp(1)"}, {"f", "1"},
                                         {"U", {{"A", {{-1.0}}}, {"omega", 1.0}}},
                                         {"growth", {{"c", "1"}, {"eta", "0"}, {"mu", "1"}}},
                                         {"mesh", {{"T", 1.0}, {"N", 1001}, {"d", 1}}}};
        c["periodic-band"] = {{"kernel", "convolution-exp(1)"}, {"field", "band(0.9,1.1)"},
                              {"strategies", {"extremal(1)", "extremal(-1)"}},
                              {"U", {{"A", {{-1.0}}}, {"omega", 1.0}}},
                              {"growth", {{"eta", "0"}, {"mu", "1.1"}}}, {"mesh", {{"T", 1.0}, {"N", 1001}, {"d", 1}}}};
        c["hammerstein-affine"] = {{"kernel", "fredholm-periodic"}, {"f", "0.5"}, {"h", "cos(2*pi*t)"},
                                   {"exact", "cos(2*pi*t) + 0.5*(1 + cos(2*pi*t)/2)"},
                                   {"growth", {{"c", "0.5"}, {"eta", "0"}, {"mu", "0.5"}}},
                                   {"mesh", {{"T", 1.0}, {"N", 201}, {"d", 1}}}};
        c["hammerstein-sine"] = {{"kernel", "fredholm-periodic"}, {"f", "0.2*sin(x)"}, {"h", "cos(2*pi*t)"},
                                 {"growth", {{"c", "0.2"}, {"eta", "0.2"}, {"mu", "0.2"}}},
                                 {"mesh", {{"T", 1.0}, {"N", 201}, {"d", 1}}}};
        c["hammerstein-zero"] = {{"kernel", "fredholm-periodic"}, {"f", "0"}, {"h", "cos(2*pi*t)"},
                                 {"exact", "cos(2*pi*t)"}, {"growth", {{"c", "0"}, {"eta", "0"}, {"mu", "0"}}},
                                 {"mesh", {{"T", 1.0}, {"N", 201}, {"d", 1}}}};
        return c;
    }();
    return cat;
}

/// Componentwise expression: one source broadcast to every component, or one per component.
class VecExpr {
public:
    VecExpr() = default;
    VecExpr(const json& j, std::size_t dim, const std::string& what) : dim_(dim) {
        if (j.is_string()) {
            parts_.emplace_back(j.get<std::string>());
        } else if (j.is_number()) {
            parts_.emplace_back(number_source(j.get<double>()));
        } else if (j.is_array() && j.size() == dim) {
            for (const auto& e : j) {
                if (e.is_string()) parts_.emplace_back(e.get<std::string>());
                else if (e.is_number()) parts_.emplace_back(number_source(e.get<double>()));
                else throw InvalidArgument(what + ": entries must be expressions");
            }
        } else {
            throw InvalidArgument(what + ": expected an expression or " + std::to_string(dim) + " of them");
        }
    }

    Vec operator()(double t, double s, const Vec& x) const {
        expr::Scope sc;
        sc.t = t;
        sc.s = s;
        for (Eigen::Index i = 0; i < x.size() && i < 10; ++i) sc.xs[static_cast<std::size_t>(i)] = x(i);
        Vec out(static_cast<Eigen::Index>(dim_));
        for (std::size_t i = 0; i < dim_; ++i) {
            sc.x = x.size() > 0 ? x(static_cast<Eigen::Index>(i)) : 0.0;
            out(static_cast<Eigen::Index>(i)) = parts_[parts_.size() == 1 ? 0 : i](sc);
        }
        return out;
    }

    Vec at(double t) const { return (*this)(t, 0.0, Vec::Zero(static_cast<Eigen::Index>(dim_))); }

    /// Scalar samples of a one-component expression in t.
    Sampled sample(const TimeMesh& mesh) const {
        Sampled v(mesh.size());
        for (std::size_t i = 0; i < mesh.size(); ++i) v[i] = at(mesh[i])(0);
        return v;
    }

private:
    static std::string number_source(double v) {
        std::ostringstream os;
        os.precision(17);
        os << '(' << v << ')';
        return os.str();
    }

    std::size_t dim_ = 1;
    std::vector<expr::Expr> parts_;
};

struct MeshSpec {
    double T = 1.0;
    std::size_t N = 101;
    std::size_t d = 1;
};

/// Fully resolved experiment: every default filled in, echoed verbatim into the manifest.
struct Experiment {
    std::string kind;
    json resolved;
    MeshSpec mesh_spec;
    MeshPtr mesh;
    SolverConfig solver;
    std::uint64_t seed = 0;
    std::size_t threads = 1;

    std::optional<Kernel> kernel;
    std::optional<RhsFn> f;
    std::optional<SetField> field;
    std::vector<Strategy> strategies;
    std::optional<Path> h;
    std::optional<VecExpr> h_expr;
    std::optional<VecExpr> exact;
    GrowthData growth;
    std::optional<std::pair<Mat, double>> U;  // generator, omega
};

namespace detail {

inline double get_number(const json& j, const std::string& key, double fallback) {
    if (!j.contains(key)) return fallback;
    if (!j[key].is_number()) throw InvalidArgument("'" + key + "' must be a number");
    return j[key].get<double>();
}

inline std::size_t get_count(const json& j, const std::string& key, std::size_t fallback) {
    if (!j.contains(key)) return fallback;
    if (!j[key].is_number_integer() || j[key].get<long long>() < 0) throw InvalidArgument("'" + key + "' must be a nonnegative integer");
    return j[key].get<std::size_t>();
}

inline Strategy parse_strategy(const std::string& src, std::size_t dim) {
    if (src == "project-relax") return ProjectRelax{};
    static const std::regex re(R"(^extremal\(([^)]*)\)$)");
    std::smatch m;
    if (!std::regex_match(src, m, re)) throw InvalidArgument("unknown strategy: " + src);
    std::vector<double> v;
    std::stringstream ss(m[1].str());
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            v.push_back(std::stod(tok));
        } catch (const std::exception&) {
            throw InvalidArgument("bad strategy direction: " + src);
        }
    }
    if (v.size() != dim) throw InvalidArgument("strategy direction has the wrong dimension: " + src);
    Vec dir = Eigen::Map<Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
    if (!(dir.norm() > 0.0)) throw InvalidArgument("strategy direction must be nonzero: " + src);
    return extremal(dir);
}

inline Kernel build_kernel(const json& j, std::size_t dim, double T) {
    if (j.is_string()) return make_catalog_kernel(j.get<std::string>(), dim, T);
    if (!j.is_object() || !j.contains("expr")) throw InvalidArgument("kernel: expected a catalog name or {\"expr\": ...}");
    const std::string dom = j.value("domain", "triangle");
    if (dom != "triangle" && dom != "square") throw InvalidArgument("kernel.domain must be 'triangle' or 'square'");
    const auto d = static_cast<Eigen::Index>(dim);
    expr::Expr e(j["expr"].get<std::string>());
    MatrixFn eval = [e, d](double t, double s) -> Mat { return e(t, s, 0.0) * Mat::Identity(d, d); };
    std::optional<MatrixFn> dt;
    if (j.contains("dt")) {
        expr::Expr de(j["dt"].get<std::string>());
        dt = [de, d](double t, double s) -> Mat { return de(t, s, 0.0) * Mat::Identity(d, d); };
    }
    return Kernel(dom == "square" ? KernelDomain::Square : KernelDomain::Triangle, dim, T, eval, dt, "inline:" + e.source());
}

inline SetField build_field(const json& j, std::size_t dim) {
    if (j.is_string()) return make_catalog_field(j.get<std::string>(), dim);
    if (j.is_object() && j.contains("lower") && j.contains("upper")) {
        VecExpr lo(j["lower"], dim, "field.lower"), hi(j["upper"], dim, "field.upper");
        return SetField(dim, [lo, hi](double t, const Vec& x) {
            Vec a = lo(t, t, x), b = hi(t, t, x);
            return ConvexSet(Box{a.cwiseMin(b), a.cwiseMax(b)});
        }, "inline-box");
    }
    if (j.is_object() && j.contains("center") && j.contains("radius")) {
        VecExpr c(j["center"], dim, "field.center"), r(j["radius"], 1, "field.radius");
        return SetField(dim, [c, r](double t, const Vec& x) {
            return ConvexSet(Ball{c(t, t, x), std::max(0.0, r(t, t, x)(0))});
        }, "inline-ball");
    }
    throw InvalidArgument("field: expected a catalog name, {lower, upper} or {center, radius}");
}

}  // namespace detail

/// Validates a config and resolves it into an Experiment. Throws InvalidArgument on any problem;
/// nothing touches the file system.
inline Experiment resolve_experiment(json cfg, const std::string& kind_override = {}, std::optional<std::uint64_t> seed_override = {},
                                     std::optional<std::size_t> threads_override = {}) {
    if (!cfg.is_object()) throw InvalidArgument("config must be a JSON object");
    Experiment ex;
    ex.kind = cfg.value("kind", std::string{});
    if (!kind_override.empty()) {
        if (!ex.kind.empty() && ex.kind != kind_override)
            throw InvalidArgument("config kind '" + ex.kind + "' does not match subcommand '" + kind_override + "'");
        ex.kind = kind_override;
    }
    const auto& kinds = experiment_kinds();
    if (std::find(kinds.begin(), kinds.end(), ex.kind) == kinds.end()) throw InvalidArgument("unknown experiment kind '" + ex.kind + "'");

    json problem;
    std::string problem_name = "inline";
    if (!cfg.contains("problem")) throw InvalidArgument("missing 'problem'");
    if (cfg["problem"].is_string()) {
        problem_name = cfg["problem"].get<std::string>();
        const auto& cat = problem_catalog();
        auto it = cat.find(problem_name);
        if (it == cat.end()) throw InvalidArgument("unknown catalog problem '" + problem_name + "'");
        problem = it->second;
    } else if (cfg["problem"].is_object()) {
        problem = cfg["problem"];
        if (problem.contains("catalog")) {
            problem_name = problem["catalog"].get<std::string>();
            const auto& cat = problem_catalog();
            auto it = cat.find(problem_name);
            if (it == cat.end()) throw InvalidArgument("unknown catalog problem '" + problem_name + "'");
            json merged = it->second;
            merged.merge_patch(problem);
            merged.erase("catalog");
            problem = merged;
        }
    } else {
        throw InvalidArgument("'problem' must be a catalog name or an object");
    }

    json mesh = problem.value("mesh", json::object());
    if (cfg.contains("mesh")) {
        if (!cfg["mesh"].is_object()) throw InvalidArgument("'mesh' must be an object");
        mesh.merge_patch(cfg["mesh"]);
    }
    problem.erase("mesh");
    ex.mesh_spec.T = detail::get_number(mesh, "T", 1.0);
    ex.mesh_spec.N = detail::get_count(mesh, "N", 101);
    ex.mesh_spec.d = detail::get_count(mesh, "d", 1);
    if (!(ex.mesh_spec.T > 0.0) || !std::isfinite(ex.mesh_spec.T)) throw InvalidArgument("mesh.T must be positive");
    if (ex.mesh_spec.N < 2) throw InvalidArgument("mesh.N must be >= 2");
    if (ex.mesh_spec.d < 1 || ex.mesh_spec.d > 10) throw InvalidArgument("mesh.d must lie in 1..10");
    ex.mesh = make_uniform_mesh(ex.mesh_spec.T, ex.mesh_spec.N, ex.mesh_spec.d);

    const json solver = cfg.value("solver", json::object());
    ex.solver.max_iter = detail::get_count(solver, "max_iter", ex.solver.max_iter);
    ex.solver.tol = detail::get_number(solver, "tol", ex.solver.tol);
    ex.solver.damping = detail::get_number(solver, "damping", ex.solver.damping);
    ex.solver.p = detail::get_number(solver, "p", ex.solver.p);
    ex.solver.validate();

    if (cfg.contains("seed") && !(cfg["seed"].is_number_unsigned() || (cfg["seed"].is_number_integer() && cfg["seed"].get<long long>() >= 0)))
        throw InvalidArgument("'seed' must be an unsigned integer");
    ex.seed = seed_override ? *seed_override : cfg.value("seed", std::uint64_t{0});
    ex.threads = threads_override ? *threads_override : detail::get_count(cfg, "threads", 1);
    if (ex.threads == 0) throw InvalidArgument("threads must be >= 1");

    const std::size_t d = ex.mesh_spec.d;
    const double T = ex.mesh_spec.T;
    if (problem.contains("kernel")) ex.kernel = detail::build_kernel(problem["kernel"], d, T);
    if (problem.contains("f")) {
        VecExpr fe(problem["f"], d, "f");
        ex.f = RhsFn([fe](double t, const Vec& x) { return fe(t, t, x); });
    }
    if (problem.contains("field")) ex.field = detail::build_field(problem["field"], d);
    if (problem.contains("strategies")) {
        if (!problem["strategies"].is_array()) throw InvalidArgument("'strategies' must be a list");
        for (const auto& s : problem["strategies"]) ex.strategies.push_back(detail::parse_strategy(s.get<std::string>(), d));
    }
    if (problem.contains("h")) {
        ex.h_expr = VecExpr(problem["h"], d, "h");
        ex.h = Path::from_function(ex.mesh, [&](double t) { return ex.h_expr->at(t); });
    }
    if (problem.contains("exact")) ex.exact = VecExpr(problem["exact"], d, "exact");
    if (problem.contains("growth")) {
        const json& g = problem["growth"];
        for (auto [key, dst] : {std::pair{"c", &ex.growth.c}, std::pair{"eta", &ex.growth.eta}, std::pair{"mu", &ex.growth.mu}})
            if (g.contains(key)) *dst = VecExpr(g[key], 1, std::string("growth.") + key).sample(*ex.mesh);
        ex.growth.validate(*ex.mesh);
    }
    if (problem.contains("U")) {
        const json& u = problem["U"];
        if (!u.contains("A") || !u["A"].is_array() || u["A"].size() != d) throw InvalidArgument("U.A must be a d x d matrix");
        Mat A(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
        for (std::size_t r = 0; r < d; ++r) {
            if (!u["A"][r].is_array() || u["A"][r].size() != d) throw InvalidArgument("U.A must be a d x d matrix");
            for (std::size_t c = 0; c < d; ++c) A(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = u["A"][r][c].get<double>();
        }
        ex.U = std::pair{A, detail::get_number(u, "omega", 0.0)};
        if (!(ex.U->second > 0.0)) throw InvalidArgument("U.omega must be positive");
    }

    // Per-kind requirements.
    auto need = [&](bool ok, const std::string& what) {
        if (!ok) throw InvalidArgument(ex.kind + " requires " + what);
    };
    need(ex.kernel.has_value(), "a kernel");
    const bool square_kind = ex.kind == "periodic-hammerstein";
    const bool causal_kind = ex.kind == "solve-eq" || ex.kind == "funnel" || ex.kind == "nesting-ladder" ||
                             ex.kind == "periodic-volterra" || ex.kind == "convergence-table";
    if (square_kind) need(!ex.kernel->triangular(), "a square-domain kernel");
    if (causal_kind) need(ex.kernel->triangular(), "a triangular kernel");
    if (ex.kind == "solve-eq" || ex.kind == "convergence-table") need(ex.f && ex.h, "'f' and 'h'");
    if (ex.kind == "convergence-table") need(ex.exact.has_value(), "a registered closed-form solution ('exact')");
    if (ex.kind == "funnel" || ex.kind == "nesting-ladder") need((ex.field || ex.f) && ex.h, "'field' (or 'f') and 'h'");
    if (ex.kind == "nesting-ladder") need(!ex.growth.eta.empty(), "growth.eta");
    if (ex.kind == "periodic-volterra") need((ex.f || ex.field) && ex.U, "'f' or 'field', and 'U'");
    if (ex.kind == "periodic-hammerstein") need((ex.f || ex.field) && ex.h, "'f' or 'field', and 'h'");
    if (ex.field && !ex.f && (ex.kind == "periodic-volterra" || ex.kind == "periodic-hammerstein") && ex.strategies.empty())
        ex.strategies.push_back(ProjectRelax{});

    const json funnel = cfg.value("funnel", json::object());
    const json ladder = cfg.value("ladder", json::object());
    const json periodic = cfg.value("periodic", json::object());
    const json conv = cfg.value("convergence", json::object());
    json eps = funnel.value("eps", json::array({0.5, 0.25, 0.1, 0.05}));
    json Ns = conv.value("N", json::array({51, 101, 201, 401}));
    if (!eps.is_array() || eps.empty()) throw InvalidArgument("funnel.eps must be a nonempty list");
    for (const auto& e : eps)
        if (!e.is_number() || !(e.get<double>() > 0.0)) throw InvalidArgument("funnel.eps entries must be positive");
    if (!Ns.is_array() || Ns.size() < 2) throw InvalidArgument("convergence.N must list at least two sizes");
    for (const auto& n : Ns)
        if (!n.is_number_integer() || n.get<long long>() < 2) throw InvalidArgument("convergence.N entries must be >= 2");
    if (detail::get_count(funnel, "samples", 1) == 0) throw InvalidArgument("funnel.samples must be >= 1");
    if (detail::get_count(ladder, "levels", 2) < 2) throw InvalidArgument("ladder.levels must be >= 2");

    ex.resolved = {
        {"kind", ex.kind},
        {"problem_name", problem_name},
        {"problem", problem},
        {"mesh", {{"T", ex.mesh_spec.T}, {"N", ex.mesh_spec.N}, {"d", ex.mesh_spec.d}}},
        {"solver", {{"max_iter", ex.solver.max_iter}, {"tol", ex.solver.tol}, {"damping", ex.solver.damping}, {"p", ex.solver.p}}},
        {"seed", ex.seed},
        {"threads", ex.threads},
        {"funnel", {{"samples", detail::get_count(funnel, "samples", 100)}, {"eps", eps}}},
        {"ladder", {{"levels", detail::get_count(ladder, "levels", 4)}, {"samples", detail::get_count(ladder, "samples", 40)}}},
        {"periodic",
         {{"fp_tol", detail::get_number(periodic, "fp_tol", 1e-10)},
          {"max_iter", detail::get_count(periodic, "max_iter", 200)},
          {"warn_and_proceed", periodic.value("warn_and_proceed", false)},
          {"contraction_pairs", detail::get_count(periodic, "contraction_pairs", 20)},
          {"precondition_tol", detail::get_number(periodic, "precondition_tol", 1e-8)}}},
        {"convergence", {{"N", Ns}}},
    };
    return ex;
}

/// One row of the conditions report.
struct ConditionRow {
    std::string name;
    bool holds = false;
    double value = 0.0;
    double threshold = 0.0;
    double margin = 0.0;
    std::string note;
};

namespace detail {

inline std::vector<Vec> state_probes(std::size_t d) {
    const auto n = static_cast<Eigen::Index>(d);
    std::vector<Vec> out{Vec::Zero(n), Vec::Ones(n)};
    for (Eigen::Index i = 0; i < n; ++i)
        for (double a : {-2.0, -0.5, 0.5, 2.0}) {
            Vec v = Vec::Zero(n);
            v(i) = a;
            out.push_back(v);
        }
    return out;
}

/// max over axis directions of |sigma(e, A) - sigma(e, B)|: a lower bound for the Hausdorff distance.
inline double support_gap(const ConvexSet& A, const ConvexSet& B) {
    const auto n = static_cast<Eigen::Index>(A.dim());
    double g = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
        for (double sgn : {1.0, -1.0}) {
            Vec e = Vec::Zero(n);
            e(i) = sgn;
            g = std::max(g, std::abs(support(A, e).value - support(B, e).value));
        }
    return g;
}

}  // namespace detail

/// Every sampled condition that applies to the experiment's data.
inline std::vector<ConditionRow> condition_report(const Experiment& ex) {
    std::vector<ConditionRow> rows;
    const auto& mesh = *ex.mesh;
    const Kernel& k = *ex.kernel;
    const double p = ex.solver.p;
    const KernelReport kr = analyze_kernel(k, mesh, p);
    auto num = [](double v) { return csv::num(v); };

    if (k.triangular()) {
        const auto diag = check_diagonal_invertible(k, mesh, 1e-12);
        rows.push_back({"k3", diag.pass, diag.min_singular, 1e-12, diag.min_singular - 1e-12, "M_inv=" + num(diag.M_inv)});
    }
    rows.push_back({"k4", std::isfinite(kr.psi_bound), kr.psi_bound, INFINITY, INFINITY, "psi_qnorm=" + num(kr.psi_qnorm)});
    rows.push_back({"k5", std::isfinite(kr.B), kr.B, INFINITY, INFINITY, "B=sup_t ||k(t,.)||_q, q=" + num(kr.q)});
    rows.push_back({"k6", std::isfinite(kr.continuity_modulus), kr.continuity_modulus, INFINITY, INFINITY, "max adjacent-node modulus"});
    if (!k.triangular()) {
        const double tol = ex.resolved["periodic"]["precondition_tol"].get<double>();
        rows.push_back({"k6'", kr.periodicity_defect <= tol, kr.periodicity_defect, tol, tol - kr.periodicity_defect,
                        "||k(0,.) - k(T,.)||_q"});
    }
    rows.push_back({"k7", true, 0.0, 0.0, 0.0, "trivially satisfied in finite dimension"});

    // Sampled F-conditions on nodes x state probes.
    std::function<ConvexSet(double, const Vec&)> Fv;
    if (ex.field) Fv = [&](double t, const Vec& x) { return (*ex.field)(t, x); };
    else if (ex.f) Fv = [&](double t, const Vec& x) { return ConvexSet::point((*ex.f)(t, x)); };
    if (Fv) {
        const auto probes = detail::state_probes(mesh.dim());
        const std::size_t stride = std::max<std::size_t>(1, mesh.size() / 50);
        double f4 = 0.0, f4p = -INFINITY, f5 = 0.0;
        bool f5_ok = true;
        for (std::size_t i = 0; i < mesh.size(); i += stride) {
            const double t = mesh[i];
            std::vector<ConvexSet> vals;
            for (const auto& x : probes) vals.push_back(Fv(t, x));
            for (std::size_t a = 0; a < probes.size(); ++a) {
                const double m = magnitude(vals[a]);
                if (!ex.growth.c.empty()) {
                    const double c = ex.growth.c[i] * (1.0 + probes[a].norm());
                    f4 = std::max(f4, c > 0.0 ? m / c : (m > 1e-12 ? INFINITY : 0.0));
                }
                if (!ex.growth.mu.empty()) f4p = std::max(f4p, m - ex.growth.mu[i]);
                if (!ex.growth.eta.empty())
                    for (std::size_t b = a + 1; b < probes.size(); ++b) {
                        const double gap = detail::support_gap(vals[a], vals[b]);
                        const double allowed = ex.growth.eta[i] * (probes[a] - probes[b]).norm();
                        if (gap > allowed + 1e-12 * (1.0 + allowed)) f5_ok = false;
                        if (allowed > 0.0) f5 = std::max(f5, gap / allowed);
                    }
            }
        }
        rows.push_back({"F1", true, 0.0, 0.0, 0.0, ex.field ? "convex compact values by construction" : "single-valued"});
        if (!ex.growth.c.empty()) rows.push_back({"F4", f4 <= 1.0 + 1e-12, f4, 1.0, 1.0 - f4, "max ||F(t,x)|| / (c(t)(1+|x|)) on probes"});
        if (!ex.growth.mu.empty()) rows.push_back({"F4'", f4p <= 1e-12, f4p, 0.0, -f4p, "max ||F(t,x)|| - mu(t) on probes"});
        if (!ex.growth.eta.empty())
            rows.push_back({"F5", f5_ok, f5, 1.0, 1.0 - f5, "support-function Lipschitz ratio against eta on probes"});
    }
    if (!ex.growth.eta.empty()) {
        const double eta_p = lp_norm(mesh, ex.growth.eta, p);
        auto add = [&](const ConditionCheck& c, const std::string& note) {
            rows.push_back({c.name, c.holds, c.lhs, c.threshold, c.margin, note});
        };
        add(check_E1(kr.B, eta_p), "4 B ||eta||_p < 1");
        if (k.triangular()) add(check_contraction_condition(kr.B, eta_p, p), "B ||eta||_p < 2^{2/p-3} e^{-1/p}");
        else add(check_hammerstein_condition(kr.B, eta_p), "2 B ||eta||_p < 1");
    }
    return rows;
}

inline std::string conditions_csv(const std::vector<ConditionRow>& rows) {
    std::ostringstream os;
    os << "condition,holds,value,threshold,margin,note\n";
    for (const auto& r : rows)
        os << r.name << ',' << (r.holds ? "pass" : "fail") << ',' << csv::num(r.value) << ',' << csv::num(r.threshold) << ','
           << csv::num(r.margin) << ",\"" << r.note << "\"\n";
    return os.str();
}

/// Outputs of one run, kept in memory until the run has finished.
struct RunOutput {
    std::vector<std::pair<std::string, std::string>> files;
    json summary = json::object();
};

namespace detail {

inline SetField funnel_field(const Experiment& ex) {
    if (ex.field) return *ex.field;
    return singleton_field(ex.mesh_spec.d, *ex.f);
}

inline std::string solution_csv(const Path& x, const Path& w, const std::optional<VecExpr>& exact, double* sup_error) {
    std::ostringstream os;
    const std::size_t d = x.dim();
    os << "node_time";
    for (std::size_t c = 0; c < d; ++c) os << ",x" << c;
    for (std::size_t c = 0; c < d; ++c) os << ",w" << c;
    if (exact) {
        for (std::size_t c = 0; c < d; ++c) os << ",exact" << c;
        os << ",abs_error";
    }
    os << '\n';
    double err = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double t = x.mesh()[i];
        os << csv::num(t);
        for (std::size_t c = 0; c < d; ++c) os << ',' << csv::num(x.node(i)(static_cast<Eigen::Index>(c)));
        for (std::size_t c = 0; c < d; ++c) os << ',' << csv::num(w.node(i)(static_cast<Eigen::Index>(c)));
        if (exact) {
            const Vec e = exact->at(t);
            for (std::size_t c = 0; c < d; ++c) os << ',' << csv::num(e(static_cast<Eigen::Index>(c)));
            const double ae = (x.node(i) - e).norm();
            err = std::max(err, ae);
            os << ',' << csv::num(ae);
        }
        os << '\n';
    }
    if (sup_error) *sup_error = err;
    return os.str();
}

inline std::string to_string(const std::function<void(std::ostream&)>& fn) {
    std::ostringstream os;
    fn(os);
    return os.str();
}

inline void run_solve(const Experiment& ex, RunOutput& out) {
    const auto sol = solve_equation(*ex.kernel, *ex.f, *ex.h, ex.solver);
    double err = 0.0;
    out.files.emplace_back("solution.csv", solution_csv(sol.x, sol.w, ex.exact, &err));
    out.summary["iterations"] = sol.report.iterations;
    out.summary["residual"] = sol.report.residual;
    out.summary["blocks"] = sol.report.blocks;
    out.summary["sup_norm"] = sup_norm(sol.x);
    if (ex.exact) out.summary["sup_error"] = err;
    if (!ex.growth.c.empty()) {
        const double B = kernel_bound(*ex.kernel, *ex.mesh, ex.solver.p);
        const double M = apriori_bound(sup_norm(*ex.h), B, ex.growth.c, ex.solver.p, *ex.mesh);
        out.summary["apriori_bound"] = M;
        out.summary["apriori_bound_holds"] = sup_norm(sol.x) <= M;
    }
}

inline void run_convergence(const Experiment& ex, RunOutput& out) {
    std::ostringstream os;
    os << "N,sup_error,ratio\n";
    double prev = NAN;
    json rows = json::array();
    for (const auto& n : ex.resolved["convergence"]["N"]) {
        const auto N = n.get<std::size_t>();
        auto mesh = make_uniform_mesh(ex.mesh_spec.T, N, ex.mesh_spec.d);
        Path h = Path::from_function(mesh, [&](double t) { return ex.h_expr->at(t); });
        const auto sol = solve_equation(*ex.kernel, *ex.f, h, ex.solver);
        double err = 0.0;
        for (std::size_t i = 0; i < mesh->size(); ++i) err = std::max(err, (sol.x.node(i) - ex.exact->at((*mesh)[i])).norm());
        os << N << ',' << csv::num(err) << ',';
        if (!std::isnan(prev)) os << csv::num(prev / err);
        os << '\n';
        rows.push_back({{"N", N}, {"sup_error", err}});
        prev = err;
    }
    out.files.emplace_back("convergence.csv", os.str());
    out.summary["rows"] = rows;
}

inline void run_funnel(const Experiment& ex, RunOutput& out) {
    const SetField F = funnel_field(ex);
    const auto n = ex.resolved["funnel"]["samples"].get<std::size_t>();
    const auto funnel = sample_funnel(*ex.kernel, F, *ex.h, n, ex.seed, ex.solver, ex.threads);
    out.files.emplace_back("funnel.csv", to_string([&](std::ostream& os) { write_funnel_csv(os, funnel); }));
    out.summary["accepted"] = funnel.samples.size();
    out.summary["rejected"] = funnel.rejected.size();
    double sup = 0.0;
    for (const auto& s : funnel.samples) sup = std::max(sup, sup_norm(s.x));
    out.summary["max_sup_norm"] = sup;
    if (!ex.growth.mu.empty()) {
        const double bound = sup_norm(*ex.h) + kernel_bound(*ex.kernel, *ex.mesh, ex.solver.p) * lp_norm(*ex.mesh, ex.growth.mu, ex.solver.p);
        out.summary["sup_bound"] = bound;
        std::vector<double> eps;
        for (const auto& e : ex.resolved["funnel"]["eps"]) eps.push_back(e.get<double>());
        const auto rep = structure_diagnostics(funnel, *ex.kernel, *ex.h, ex.growth.mu, ex.solver.p, eps);
        out.summary["modulus"] = rep.modulus;
        out.summary["modulus_bound"] = rep.modulus_bound;
        out.summary["terminal_relative_gap"] = rep.terminal_relative_gap;
        std::ostringstream cov;
        cov << "eps,covering_number\n";
        for (const auto& [e, c] : rep.covering) cov << csv::num(e) << ',' << c << '\n';
        out.files.emplace_back("covering.csv", cov.str());
        if (!rep.sections.empty()) {
            std::ostringstream sec;
            sec << "node_time,max_gap,diameter\n";
            for (const auto& s : rep.sections) sec << csv::num(s.t) << ',' << csv::num(s.max_gap) << ',' << csv::num(s.diameter) << '\n';
            out.files.emplace_back("sections.csv", sec.str());
        }
    }
}

inline void run_ladder(const Experiment& ex, RunOutput& out) {
    const SetField F = funnel_field(ex);
    const auto levels = ex.resolved["ladder"]["levels"].get<std::size_t>();
    const auto n = ex.resolved["ladder"]["samples"].get<std::size_t>();
    std::vector<Funnel> funnels;
    std::vector<double> radii;
    for (std::size_t lvl = 1; lvl <= levels; ++lvl) {
        const double r = std::pow(3.0, -static_cast<double>(lvl));
        radii.push_back(r);
        funnels.push_back(sample_funnel(*ex.kernel, inflate_field(F, 3.0 * r), *ex.h, n, ex.seed, ex.solver, ex.threads));
        out.files.emplace_back("funnel_" + std::to_string(lvl) + ".csv",
                               to_string([&](std::ostream& os) { write_funnel_csv(os, funnels.back()); }));
    }
    const double B = kernel_bound(*ex.kernel, *ex.mesh, ex.solver.p);
    const double eta = lp_norm(*ex.mesh, ex.growth.eta, ex.solver.p);
    const auto rep = nesting_report(funnels, radii, B, eta, ex.solver.p);
    std::ostringstream os;
    os << "n,r_n,semidistance,defect_bound\n";
    for (const auto& r : rep.rows) os << r.n << ',' << csv::num(r.r) << ',' << csv::num(r.semidistance) << ',' << csv::num(r.defect_bound) << '\n';
    out.files.emplace_back("nesting.csv", os.str());
    out.summary["nonincreasing"] = rep.nonincreasing;
    out.summary["within_bound"] = rep.within_bound;
}

inline void run_periodic_volterra(const Experiment& ex, RunOutput& out) {
    const auto& per = ex.resolved["periodic"];
    const StableFamily U = make_stable_family(ex.U->first, *ex.mesh, ex.U->second);
    PeriodicOptions opt;
    opt.fp_tol = per["fp_tol"].get<double>();
    opt.max_iter = per["max_iter"].get<std::size_t>();
    opt.warn_and_proceed = per["warn_and_proceed"].get<bool>();
    opt.eta = ex.growth.eta;
    std::vector<PeriodicResult> results;
    if (ex.f) {
        results.push_back(find_periodic_volterra(*ex.kernel, *ex.f, U, ex.mesh, ex.growth.mu, ex.solver, opt));
    } else {
        for (const auto& s : ex.strategies)
            results.push_back(find_periodic_volterra(*ex.kernel, *ex.field, s, U, ex.mesh, ex.growth.mu, ex.solver, opt));
    }
    std::ostringstream os;
    std::ostringstream orbit;
    Funnel orbits;
    orbits.mesh = ex.mesh;
    bool accepted = true;
    for (std::size_t b = 0; b < results.size(); ++b) {
        const auto& r = results[b];
        std::ostringstream row;
        write_periodic_csv(row, r);
        std::string text = row.str();
        const auto nl = text.find('\n');
        if (b == 0) os << "branch," << text.substr(0, nl + 1);
        os << b << ',' << text.substr(nl + 1);
        orbits.samples.push_back(FunnelSample{b, r.orbit, r.w, sup_distance(r.orbit, U.apply(ex.mesh, r.x0) + apply_V(*ex.kernel, r.w)), 0.0, true, r.iterations, {}});
        accepted = accepted && r.accepted;
    }
    out.files.emplace_back("periodic.csv", os.str());
    out.files.emplace_back("orbit.csv", to_string([&](std::ostream& s) { write_funnel_csv(s, orbits); }));
    out.summary["accepted"] = accepted;
    out.summary["certificate"] = U.certificate == StabilityCertificate::Uniform ? "U3" : "U3'";
    out.summary["radius"] = results.front().radius;
    if (ex.f && std::isfinite(results.front().radius) && results.front().radius > 0.0) {
        const double ratio = measure_contraction(*ex.kernel, *ex.f, U, ex.mesh, results.front().radius,
                                                 per["contraction_pairs"].get<std::size_t>(), ex.seed, ex.solver);
        out.summary["measured_contraction"] = ratio;
    }
}

inline void run_hammerstein(const Experiment& ex, RunOutput& out) {
    const auto& per = ex.resolved["periodic"];
    HammersteinOptions opt;
    opt.precondition_tol = per["precondition_tol"].get<double>();
    opt.warn_and_proceed = per["warn_and_proceed"].get<bool>();
    opt.eta = ex.growth.eta;
    std::vector<HammersteinResult> results;
    if (ex.f) {
        results.push_back(solve_hammerstein_periodic(*ex.kernel, *ex.f, *ex.h, ex.solver, opt));
    } else {
        for (const auto& s : ex.strategies) results.push_back(solve_hammerstein_periodic(*ex.kernel, *ex.field, s, *ex.h, ex.solver, opt));
    }
    Funnel sols;
    sols.mesh = ex.mesh;
    std::ostringstream os;
    os << "branch,periodicity_residual,residual,iterations,accepted\n";
    bool accepted = true;
    for (std::size_t b = 0; b < results.size(); ++b) {
        const auto& r = results[b];
        os << b << ',' << csv::num(r.periodicity_residual) << ',' << csv::num(r.residual) << ',' << r.iterations << ','
           << (r.accepted ? 1 : 0) << '\n';
        sols.samples.push_back(FunnelSample{b, r.x, r.w, r.residual, 0.0, r.accepted, r.iterations, {}});
        accepted = accepted && r.accepted;
    }
    out.files.emplace_back("hammerstein.csv", os.str());
    out.files.emplace_back("orbit.csv", to_string([&](std::ostream& s) { write_funnel_csv(s, sols); }));
    if (ex.exact && ex.f) {
        double err = 0.0;
        for (std::size_t i = 0; i < ex.mesh->size(); ++i) err = std::max(err, (results[0].x.node(i) - ex.exact->at((*ex.mesh)[i])).norm());
        out.summary["sup_error"] = err;
    }
    out.summary["accepted"] = accepted;
    out.summary["periodicity_residual"] = results.front().periodicity_residual;
}

}  // namespace detail

/// Runs a resolved experiment in memory: conditions report, per-kind CSVs and the manifest.
inline RunOutput execute(const Experiment& ex) {
    RunOutput out;
    const auto rows = condition_report(ex);
    if (ex.kind == "solve-eq") detail::run_solve(ex, out);
    else if (ex.kind == "convergence-table") detail::run_convergence(ex, out);
    else if (ex.kind == "funnel") detail::run_funnel(ex, out);
    else if (ex.kind == "nesting-ladder") detail::run_ladder(ex, out);
    else if (ex.kind == "periodic-volterra") detail::run_periodic_volterra(ex, out);
    else if (ex.kind == "periodic-hammerstein") detail::run_hammerstein(ex, out);
    out.files.emplace_back("conditions.csv", conditions_csv(rows));
    json manifest = {{"library", "vie"}, {"version", VIE_VERSION}, {"config", ex.resolved}, {"summary", out.summary}};
    json files = json::array();
    for (const auto& f : out.files) files.push_back(f.first);
    files.push_back("manifest.json");
    manifest["outputs"] = files;
    out.files.emplace_back("manifest.json", manifest.dump(2) + "\n");
    return out;
}

/// Writes every output file under dir. Returns false on any I/O failure.
inline bool write_outputs(const RunOutput& out, const std::filesystem::path& dir, std::ostream& err) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        err << "error: cannot create " << dir << ": " << ec.message() << '\n';
        return false;
    }
    for (const auto& [name, text] : out.files) {
        std::ofstream f(dir / name, std::ios::binary);
        f << text;
        if (!f) {
            err << "error: cannot write " << (dir / name) << '\n';
            return false;
        }
    }
    return true;
}

/// Full pipeline with the documented exit codes: 0 ok, 2 config/validation, 3 numerical failure, 4 I/O.
inline int run_experiment(const json& cfg, const std::filesystem::path& out_dir, std::ostream& err, const std::string& kind = {},
                          std::optional<std::uint64_t> seed = {}, std::optional<std::size_t> threads = {}) {
    RunOutput out;
    try {
        const Experiment ex = resolve_experiment(cfg, kind, seed, threads);
        out = execute(ex);
    } catch (const InvalidArgument& e) {
        err << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const PreconditionViolated& e) {
        err << "precondition violated: " << e.what() << '\n';
        return kConfigError;
    } catch (const NotStable& e) {
        err << "validation error: " << e.what() << '\n';
        return kConfigError;
    } catch (const json::exception& e) {
        err << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const NumericalError& e) {
        err << "numerical failure: " << e.what() << '\n';
        return kNonConvergence;
    }
    return write_outputs(out, out_dir, err) ? kOk : kIoError;
}

/// Reads and parses a config file; json parse errors surface as InvalidArgument.
inline json load_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw InvalidArgument("cannot read config " + path.string());
    try {
        return json::parse(f, nullptr, true, true);
    } catch (const json::parse_error& e) {
        throw InvalidArgument(std::string("malformed config: ") + e.what());
    }
}

}  // namespace vie::cli
