#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "nedkit/adapted_norms.hpp"
#include "nedkit/admissibility.hpp"
#include "nedkit/dichotomy.hpp"
#include "nedkit/robustness.hpp"
#include "nedkit/scenario.hpp"

namespace nedkit::cli {

enum ExitCode : int { Success = 0, Failure = 1, Declined = 2 };

struct RunOptions {
    std::string command;
    std::optional<std::filesystem::path> config;
    std::filesystem::path out_dir = ".";
    unsigned workers = 1;
    std::optional<double> tolerance;
};

inline const std::vector<std::string>& commands() {
    static const std::vector<std::string> names{"verify-ned", "fit-constants", "compute-q",     "norms",
                                                "solve",      "perturb",       "compare-ppx",   "demo-example"};
    return names;
}

/// The two-dimensional example scenario used by demo-example when no config is given.
inline const char* example_scenario_text() {
    return "system.flavor = example\n"
           "system.omega = 3\n"
           "system.a = 1\n"
           "projection.mask = 1 0\n"
           "constants.K = exp(2)\n"
           "constants.alpha = 2\n"
           "constants.epsilon = 2\n"
           "perturbation.profile = scaled-exp\n"
           "perturbation.delta = 0.01\n"
           "perturbation.decay = 2\n"
           "perturbation.matrix = 0 1; 1 0\n"
           "grid.t_min = -20\n"
           "grid.t_max = 20\n"
           "grid.h = 0.1\n"
           "run.young_p = 2\n"
           "run.alpha1 = 0.5\n";
}

namespace detail {

inline std::string fmt(double v) {
    char b[64];
    std::snprintf(b, sizeof b, "%.17g", v);
    return b;
}

inline std::string short_fmt(double v) {
    char b[64];
    std::snprintf(b, sizeof b, "%.6g", v);
    return b;
}

inline std::ofstream open_out(const std::filesystem::path& dir, const std::string& name) {
    std::filesystem::create_directories(dir);
    std::ofstream f(dir / name, std::ios::binary);
    if (!f) throw ConfigurationError("cannot write " + (dir / name).string());
    return f;
}

struct Scenario {
    ScenarioConfig cfg;
    EvolutionFamily family;
    ProjectionFamily projection;
    std::optional<DichotomyConstants> constants;
    Perturbation perturbation;
    Grid grid;
};

inline Scenario build(const ScenarioConfig& cfg) {
    EvolutionFamily f = scenario_family(cfg);
    ProjectionFamily p = scenario_projection(cfg, f.dim());
    auto c = scenario_constants(cfg);
    Perturbation b = scenario_perturbation(cfg, f.dim());
    Grid g = scenario_grid(cfg);
    return Scenario{cfg, std::move(f), std::move(p), c, std::move(b), std::move(g)};
}

inline const DichotomyConstants& need_constants(const Scenario& s) {
    if (!s.constants) throw ConfigurationError("constants block required for this command");
    return *s.constants;
}

inline Grid q_window(const Scenario& s) {
    const ScenarioConfig& c = s.cfg;
    return Grid(c.number_or("run.q_t_min", 2.0 * s.grid.t_min()), c.number_or("run.q_t_max", 2.0 * s.grid.t_max()),
                c.number_or("run.q_h", s.grid.h() / 10.0));
}

inline double tolerance(const Scenario& s, const RunOptions& o, double fallback) {
    if (o.tolerance) return *o.tolerance;
    return s.cfg.number_or("run.tolerance", fallback);
}

inline int verify_ned_cmd(const Scenario& s, const RunOptions& o, std::ostream& out) {
    const DichotomyConstants& c = need_constants(s);
    VerifyOptions vo;
    vo.record_rows = true;
    vo.workers = o.workers;
    if (o.tolerance || s.cfg.has("run.tolerance")) vo.ratio_tol = tolerance(s, o, 0.0);
    const DichotomyReport rep = verify_ned(s.family, s.projection, c, s.grid, vo);
    auto f = open_out(o.out_dir, "verify_ned.csv");
    f << "kind,t,s,lhs,bound,ratio\n";
    for (const auto& r : rep.rows)
        f << to_string(r.kind) << "," << fmt(r.t) << "," << fmt(r.s) << "," << fmt(r.lhs) << "," << fmt(r.bound) << ","
          << fmt(r.ratio) << "\n";
    out << "verify-ned: " << (rep.pass() ? "pass" : "fail") << "\n"
        << "  pairs = " << rep.pairs_checked << "\n"
        << "  max_ratio_D1 = " << fmt(rep.max_ratio_d1) << " at (t, s) = (" << short_fmt(rep.witness_d1_t) << ", "
        << short_fmt(rep.witness_d1_s) << ")\n"
        << "  max_ratio_D2 = " << fmt(rep.max_ratio_d2) << " at (t, s) = (" << short_fmt(rep.witness_d2_t) << ", "
        << short_fmt(rep.witness_d2_s) << ")\n"
        << "  invariance_max = " << fmt(rep.invariance_max) << "\n";
    return rep.pass() ? Success : Failure;
}

inline int fit_cmd(const Scenario& s, const RunOptions& o, std::ostream& out) {
    FitOptions fo;
    if (s.cfg.has("run.alpha_max"))
        fo.alpha_max = s.cfg.number("run.alpha_max");
    else if (s.constants)
        fo.alpha_max = 2.0 * s.constants->alpha;
    else
        throw ConfigurationError("run.alpha_max required when no constants block is given");
    fo.alpha_count = s.cfg.count_or("run.alpha_count", 200);
    fo.workers = o.workers;
    const FitResult fit = fit_constants(s.family, s.projection, s.grid, fo);
    auto f = open_out(o.out_dir, "fit_sweep.csv");
    f << "alpha,epsilon,K,objective\n";
    for (const auto& r : fit.sweep) f << fmt(r.alpha) << "," << fmt(r.epsilon) << "," << fmt(r.K) << "," << fmt(r.objective) << "\n";
    out << "fit-constants:\n"
        << "  K = " << fmt(fit.constants.K) << "\n"
        << "  alpha = " << fmt(fit.constants.alpha) << "\n"
        << "  epsilon = " << fmt(fit.constants.epsilon) << "\n"
        << "  objective = " << fmt(fit.objective) << "\n"
        << "  samples = " << fit.samples << "\n";
    if (fit.K_below_one) out << "  note: K < 1 (the bounds at t = s then force ||P|| < 1)\n";
    return Success;
}

inline int compute_q_cmd(const Scenario& s, const RunOptions& o, std::ostream& out) {
    const DichotomyConstants& c = need_constants(s);
    const Grid window = q_window(s);
    QOptions qo;
    qo.tail_tol = s.cfg.number_or("run.tail_tol", 1e-10);
    const QResult q = compute_q(s.perturbation, c, window, qo);
    auto f = open_out(o.out_dir, "q_profile.csv");
    f << "t,b,convolution,tail_bound\n";
    if (!s.perturbation.is_zero()) {
        const ScalarGridFn b = sample_weighted_norm(s.perturbation, c.epsilon, window);
        const auto conv = exp_conv_nodes(b, c.alpha);
        for (std::size_t k = 0; k < window.size(); ++k)
            f << fmt(window.node(k)) << "," << fmt(b[k]) << "," << fmt(conv[k].value) << "," << fmt(conv[k].tail_bound) << "\n";
    }
    out << "compute-q:\n"
        << "  q = " << fmt(q.q) << "\n"
        << "  argmax_t = " << fmt(q.argmax_t) << "\n"
        << "  tail_bound = " << fmt(q.tail_at_argmax) << "\n"
        << "  verdict = " << (q.q < 1.0 ? "q < 1" : "q >= 1 (declined)") << "\n";
    return q.q < 1.0 ? Success : Declined;
}

inline int norms_cmd(const Scenario& s, const RunOptions& o, std::ostream& out) {
    const DichotomyConstants& c = need_constants(s);
    const std::uint64_t seed = scenario_seed(s.cfg);
    const std::size_t n = s.cfg.count_or("run.samples", 500);
    const AdaptedNormCtx ctx(s.family, s.projection, c, s.grid);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> pick(0, s.grid.size() - 1);
    std::vector<NormSampleQuery> qs;
    for (std::size_t i = 0; i < n; ++i) {
        Vec v(ctx.dim());
        for (double& x : v) x = nd(rng);
        qs.push_back({v, s.grid.node(pick(rng))});
    }
    const SandwichReport rep = check_norm_sandwich(ctx, qs);
    auto f = open_out(o.out_dir, "norms.csv");
    f << "t,stable_part,unstable_part,total,upper_bound\n";
    for (const auto& qv : qs) {
        const NormParts parts = lyap_norm_parts(ctx, qv.v, qv.t);
        const double upper = rep.factor * c.K * std::exp(c.epsilon * std::abs(qv.t)) * norm2(qv.v);
        f << fmt(qv.t) << "," << fmt(parts.stable) << "," << fmt(parts.unstable) << "," << fmt(parts.total()) << ","
          << fmt(upper) << "\n";
    }
    out << "norms: " << (rep.pass() ? "pass" : "fail") << "\n"
        << "  samples = " << rep.checked << "\n"
        << "  factor = " << fmt(rep.factor) << "\n"
        << "  worst_lower_margin = " << fmt(rep.worst_lower_margin) << "\n"
        << "  worst_upper_margin = " << fmt(rep.worst_upper_margin) << "\n"
        << "  violations = " << rep.violations << "\n";
    return rep.pass() ? Success : Failure;
}

inline ForcingOnGrid scenario_forcing(const Scenario& s, std::size_t dim) {
    const std::string kind = s.cfg.text_or("run.forcing", "gaussian");
    if (kind == "gaussian") return ForcingOnGrid::sample(s.grid, [dim](double t) { return Vec(dim, std::exp(-t * t)); });
    if (kind == "ones") return ForcingOnGrid::sample(s.grid, [dim](double) { return Vec(dim, 1.0); });
    if (kind == "zero") return ForcingOnGrid::zero(s.grid, dim);
    throw ParseError("unknown run.forcing `" + kind + "`", s.cfg.line_of("run.forcing"));
}

inline int solve_cmd(const Scenario& s, const RunOptions& o, std::ostream& out) {
    const DichotomyConstants& c = need_constants(s);
    const std::uint64_t seed = scenario_seed(s.cfg);
    const double tol = tolerance(s, o, 1e-6);
    const AdaptedNormCtx ctx(s.family, s.projection, c, s.grid);
    const ForcingOnGrid y = scenario_forcing(s, ctx.dim());
    SolveOptions so;
    so.workers = o.workers;
    const PathOnGrid x = solve_inhomogeneous(ctx, y, so);
    {
        auto f = open_out(o.out_dir, "solution.csv");
        write_path_csv(f, x);
    }
    const std::size_t pairs = s.cfg.count_or("run.pairs", 100);
    const double span = s.cfg.number_or("run.max_span", 10.0);
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, s.grid.size() - 1);
    const std::size_t band = static_cast<std::size_t>(std::floor(span / s.grid.h() + 1e-9));
    auto f = open_out(o.out_dir, "residuals.csv");
    f << "t,s,residual,scale,relative\n";
    double worst = 0.0;
    for (std::size_t i = 0; i < pairs; ++i) {
        const std::size_t si = pick(rng);
        const std::size_t ti = std::min(s.grid.size() - 1, si + pick(rng) % (band + 1));
        const double t = s.grid.node(ti), sv = s.grid.node(si);
        const double r = admissibility_residual(ctx, x, y, t, sv);
        const double scale = admissibility_residual_scale(ctx, x, y, t, sv);
        const double rel = r / std::max(1.0, scale);
        worst = std::max(worst, rel);
        f << fmt(t) << "," << fmt(sv) << "," << fmt(r) << "," << fmt(scale) << "," << fmt(rel) << "\n";
    }
    const double sup = norm_sup(ctx, x, o.workers), m = norm_M(ctx, y, o.workers);
    out << "solve: " << (worst <= tol ? "pass" : "fail") << "\n"
        << "  max_relative_residual = " << fmt(worst) << "\n"
        << "  norm_sup_x = " << fmt(sup) << "\n"
        << "  norm_M_y = " << fmt(m) << "\n"
        << "  series_bound = " << fmt(admissibility_bound_factor(c.alpha) * m) << "\n";
    return worst <= tol ? Success : Failure;
}

inline PipelineOptions pipeline_options(const Scenario& s, const RunOptions& o) {
    const ScenarioConfig& cfg = s.cfg;
    PipelineOptions po;
    po.q_window = q_window(s);
    po.tail_tol = cfg.number_or("run.tail_tol", po.tail_tol);
    po.volterra_substeps = cfg.count_or("run.volterra_substeps", po.volterra_substeps);
    po.green_refinement = cfg.count_or("run.green_refinement", po.green_refinement);
    po.refinement_check = cfg.flag_or("run.refinement_check", po.refinement_check);
    po.exploratory = cfg.flag_or("run.exploratory", po.exploratory);
    if (o.tolerance || cfg.has("run.tolerance")) po.ratio_tol = tolerance(s, o, po.ratio_tol);
    if (cfg.has("run.young_p")) {
        const double p = cfg.number("run.young_p");
        if (!(p > 1.0)) throw ParseError("run.young_p must exceed 1", cfg.line_of("run.young_p"));
        po.young = YoungParams{p, p / (p - 1.0), 0.0};
    }
    if (cfg.has("run.alpha1")) {
        const double a1 = cfg.number("run.alpha1");
        po.split = PpxSplit{a1, need_constants(s).alpha - a1};
    }
    po.workers = o.workers;
    return po;
}

inline int perturb_cmd(const Scenario& s, const RunOptions& o, std::ostream& out) {
    const DichotomyConstants& c = need_constants(s);
    const RobustnessReport rep = robustness_pipeline(s.family, s.projection, c, s.perturbation, s.grid, pipeline_options(s, o));
    {
        auto f = open_out(o.out_dir, "report.txt");
        write_report(f, rep);
    }
    {
        auto f = open_out(o.out_dir, "report.csv");
        write_report_csv(f, rep);
    }
    out << "perturb:\n";
    write_report(out, rep);
    switch (rep.verdict) {
        case Verdict::Pass: return Success;
        case Verdict::Declined: return Declined;
        case Verdict::Fail: return Failure;
    }
    return Failure;
}

inline int compare_ppx_cmd(const Scenario& s, const RunOptions& o, std::ostream& out) {
    StudyOptions so;
    so.seed = scenario_seed(s.cfg);
    so.instances = s.cfg.count_or("run.instances", 100);
    so.workers = o.workers;
    const ImplicationReport rep = implication_study(so);
    auto f = open_out(o.out_dir, "compare_ppx.csv");
    write_implication_csv(f, rep);
    const bool ok = rep.counterexamples == 0 && rep.witnesses >= 1;
    out << "compare-ppx: " << (ok ? "pass" : "fail") << "\n"
        << "  instances = " << rep.rows.size() << "\n"
        << "  rob_pass = " << rep.rob_pass << "\n"
        << "  rob2_pass = " << rep.rob2_pass << "\n"
        << "  counterexamples = " << rep.counterexamples << "\n"
        << "  strictness_witnesses = " << rep.witnesses << "\n"
        << "  undetermined = " << rep.undetermined << "\n";
    return ok ? Success : Failure;
}

inline int demo_cmd(const Scenario& s, const RunOptions& o, std::ostream& out) {
    const int v = verify_ned_cmd(s, o, out);
    const int q = compute_q_cmd(s, o, out);
    const int p = perturb_cmd(s, o, out);
    out << "demo-example: q = " << short_fmt(compute_q(s.perturbation, need_constants(s), q_window(s)).q) << ", verdict "
        << (p == Success ? "pass" : p == Declined ? "declined" : "fail") << "\n";
    if (v != Success) return Failure;
    if (q == Declined || p == Declined) return Declined;
    return p;
}

}  // namespace detail

/// Runs one command; returns the exit status (0 pass, 2 declined, 1 error or failed check).
inline int run(const RunOptions& o, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    try {
        ScenarioConfig cfg;
        if (o.config)
            cfg = ScenarioConfig::load(*o.config);
        else if (o.command == "demo-example")
            cfg = ScenarioConfig::parse(example_scenario_text());
        else
            throw ConfigurationError("--config is required for `" + o.command + "`");
        const detail::Scenario s = detail::build(cfg);
        if (o.command == "verify-ned") return detail::verify_ned_cmd(s, o, out);
        if (o.command == "fit-constants") return detail::fit_cmd(s, o, out);
        if (o.command == "compute-q") return detail::compute_q_cmd(s, o, out);
        if (o.command == "norms") return detail::norms_cmd(s, o, out);
        if (o.command == "solve") return detail::solve_cmd(s, o, out);
        if (o.command == "perturb") return detail::perturb_cmd(s, o, out);
        if (o.command == "compare-ppx") return detail::compare_ppx_cmd(s, o, out);
        if (o.command == "demo-example") return detail::demo_cmd(s, o, out);
        throw ConfigurationError("unknown command `" + o.command + "`");
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return Failure;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return Failure;
    }
}

}  // namespace nedkit::cli
