#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "nedkit/adapted_norms.hpp"
#include "nedkit/admissibility.hpp"
#include "nedkit/dichotomy.hpp"
#include "nedkit/error.hpp"
#include "nedkit/evolution.hpp"
#include "nedkit/numerics.hpp"
#include "nedkit/parallel.hpp"
#include "nedkit/perturbation.hpp"

namespace nedkit {

/// Three-valued verdict for conditions evaluated on a truncated window.
enum class Tri { Yes, No, Unknown };

inline const char* to_string(Tri t) {
    switch (t) {
        case Tri::Yes: return "yes";
        case Tri::No: return "no";
        case Tri::Unknown: return "unknown";
    }
    return "?";
}

/// b(t) = ||B(t)|| e^{eps |t|}.
inline double bound_function(const Perturbation& b, double epsilon, double t) {
    return b.norm(t) * std::exp(epsilon * std::abs(t));
}

inline ScalarGridFn sample_weighted_norm(const Perturbation& b, double weight_rate, const Grid& g) {
    ScalarGridFn out(g, Vec(g.size()));
    for (std::size_t k = 0; k < g.size(); ++k) out.values[k] = bound_function(b, weight_rate, g.node(k));
    return out;
}

struct QOptions {
    /// Nodes whose tail bound exceeds this are left out of the supremum.
    double tail_tol = 1e-10;
    unsigned workers = 1;
};

struct QResult {
    double q = 0.0;
    double argmax_t = 0.0;
    double tail_at_argmax = 0.0;  ///< tail bound of the convolution at argmax_t
    std::size_t nodes_used = 0;
    bool tail_trusted = true;     ///< b is non-increasing outward at both window edges
};

namespace detail {

/// factor * sup_t int e^{-rate|t-s|} b(s) ds over the nodes of b's grid whose
/// tail bound is at most tail_tol.
inline QResult sup_convolution(const ScalarGridFn& b, double rate, double factor, double tail_tol, const char* who) {
    const auto conv = exp_conv_nodes(b, rate);
    QResult r;
    r.tail_trusted = tail_bound_trusted(b);
    double best = -1.0, excluded_best = 0.0;
    for (std::size_t k = 0; k < conv.size(); ++k) {
        if (conv[k].tail_bound <= tail_tol) {
            ++r.nodes_used;
            best = std::max(best, conv[k].value);
        } else {
            excluded_best = std::max(excluded_best, conv[k].value);
        }
    }
    // report the near-maximal node closest to the window centre (flat profiles tie)
    const double centre = 0.5 * (b.grid.t_min() + b.grid.t_max());
    bool have = false;
    for (std::size_t k = 0; k < conv.size(); ++k) {
        if (conv[k].tail_bound > tail_tol || conv[k].value < best * (1.0 - 1e-12)) continue;
        if (!have || std::abs(b.grid.node(k) - centre) < std::abs(r.argmax_t - centre)) {
            r.argmax_t = b.grid.node(k);
            r.tail_at_argmax = conv[k].tail_bound;
            have = true;
        }
    }
    if (r.nodes_used == 0)
        throw TailToleranceError(std::string(who) + ": no node meets the tail tolerance; widen the window");
    // A truncated value is a lower bound; if one outside the trusted region already
    // beats the trusted sup, the sup is not resolved by this window.
    if (excluded_best > best)
        throw TailToleranceError(std::string(who) + ": supremum approaches the window edge; widen the window");
    r.q = factor * best;
    r.tail_at_argmax *= factor;
    return r;
}

}  // namespace detail

/// q = 2K sup_t int e^{-alpha|t-s|} b(s) ds over the nodes of `window`.
inline QResult compute_q(const Perturbation& b, const DichotomyConstants& c, const Grid& window, const QOptions& opts = {}) {
    c.validate();
    if (b.is_zero()) return QResult{0.0, 0.0, 0.0, window.size(), true};
    return detail::sup_convolution(sample_weighted_norm(b, c.epsilon, window), c.alpha, 2.0 * c.K, opts.tail_tol,
                                   "compute_q");
}

/// K instead of 2K; only legitimate when P = Id or P = 0.
inline QResult compute_q_relaxed(const Perturbation& b, const DichotomyConstants& c, const Grid& window,
                                 const ProjectionFamily& p, const QOptions& opts = {}) {
    const std::size_t rank = p.validate(window);
    if (rank != 0 && rank != p.dim())
        throw PreconditionError("compute_q_relaxed: projection is neither Id nor 0");
    QResult r = compute_q(b, c, window, opts);
    r.q *= 0.5;
    r.tail_at_argmax *= 0.5;
    return r;
}

struct YoungParams {
    double p = 2.0;
    double q = 2.0;
    double b_lq = 0.0;  ///< ||b||_{L^q}

    void validate() const {
        if (!(p > 1.0) || !(q > 1.0) || !std::isfinite(p) || !std::isfinite(q))
            throw InvalidInput("YoungParams: exponents must exceed 1");
        if (std::abs(1.0 / p + 1.0 / q - 1.0) > 1e-12) throw InvalidInput("YoungParams: exponents are not conjugate");
        if (!(b_lq >= 0.0) || !std::isfinite(b_lq)) throw InvalidInput("YoungParams: norm must be finite and >= 0");
    }
};

/// (2/p) (2K)^p ||b||_q^p, to be compared against alpha.
inline double young_lhs(const YoungParams& yp, const DichotomyConstants& c) {
    yp.validate();
    return (2.0 / yp.p) * std::pow(2.0 * c.K, yp.p) * std::pow(yp.b_lq, yp.p);
}

inline bool young_sufficient(const YoungParams& yp, const DichotomyConstants& c) {
    return young_lhs(yp, c) < c.alpha;
}

/// young_sufficient for a b sampled on a window: "unknown" unless b has
/// decayed at both edges, since otherwise ||b||_q depends on the window.
inline Tri young_verdict(const YoungParams& yp, const DichotomyConstants& c, const ScalarGridFn& b) {
    const double peak = *std::max_element(b.values.begin(), b.values.end());
    if (peak > 0.0 && (!tail_bound_trusted(b) || std::max(b.values.front(), b.values.back()) > 1e-8 * peak))
        return Tri::Unknown;
    return young_sufficient(yp, c) ? Tri::Yes : Tri::No;
}

/// Largest ||b||_q that young_sufficient could accept (exclusive).
inline double young_threshold(double p, const DichotomyConstants& c) {
    return std::pow(c.alpha * p / 2.0, 1.0 / p) / (2.0 * c.K);
}

struct PpxSplit {
    double alpha1 = 0.0;
    double alpha2 = 0.0;

    void validate(const DichotomyConstants& c) const {
        if (!(alpha1 > 0.0) || !(alpha2 > 0.0)) throw InvalidInput("PpxSplit: alpha1, alpha2 must be positive");
        if (std::abs(alpha1 + alpha2 - c.alpha) > 1e-12 * std::max(1.0, c.alpha))
            throw InvalidInput("PpxSplit: alpha1 + alpha2 must equal alpha");
    }
};

struct PpxResult {
    bool a = false;           ///< eps < 2 alpha2
    Tri b = Tri::Unknown;     ///< K sup int e^{-alpha1|t-s|} bbar(s) ds <= 1/(K+1)
    double b_value = 0.0;     ///< K sup of the truncated integral
    double b_bound = 0.0;     ///< 1/(K+1)
    double b_tail = 0.0;      ///< K times the largest tail bound over the window
};

/// The prior conditions: (a) eps < 2 alpha2, and the integral condition on
/// bbar(t) = ||B(t)|| e^{2 eps |t|} with rate alpha1 and threshold 1/(K+1).
/// The truncated integral is a lower bound, so exceeding the threshold is a
/// definite "no"; "yes" needs the tail to fit as well and the edge profile to
/// back the tail bound.
inline PpxResult ppx_conditions(const DichotomyConstants& c, const PpxSplit& split, const Perturbation& b,
                                const Grid& window) {
    c.validate();
    split.validate(c);
    PpxResult r;
    r.a = c.epsilon < 2.0 * split.alpha2;
    r.b_bound = 1.0 / (c.K + 1.0);
    if (b.is_zero()) {
        r.b = Tri::Yes;
        return r;
    }
    const ScalarGridFn bbar = sample_weighted_norm(b, 2.0 * c.epsilon, window);
    const auto conv = exp_conv_nodes(bbar, split.alpha1);
    std::size_t arg = 0;
    for (std::size_t k = 0; k < conv.size(); ++k)
        if (conv[k].value > conv[arg].value) arg = k;
    // the tail bound is largest at the edges; use its maximum as a uniform margin
    double tail = 0.0;
    for (const auto& v : conv) tail = std::max(tail, v.tail_bound);
    r.b_value = c.K * conv[arg].value;
    r.b_tail = c.K * tail;
    if (r.b_value > r.b_bound)
        r.b = Tri::No;
    else if (tail_bound_trusted(bbar) && r.b_value + r.b_tail <= r.b_bound)
        r.b = Tri::Yes;
    else
        r.b = Tri::Unknown;
    return r;
}

/// Young form of the integral condition: (2/p) K^p (K+1)^p ||bbar||_q^p < alpha1.
inline bool ppx_young(const YoungParams& yp_bbar, const DichotomyConstants& c, const PpxSplit& split) {
    yp_bbar.validate();
    split.validate(c);
    return (2.0 / yp_bbar.p) * std::pow(c.K, yp_bbar.p) * std::pow(c.K + 1.0, yp_bbar.p) * std::pow(yp_bbar.b_lq, yp_bbar.p) <
           split.alpha1;
}

/// The new condition with an honest tail: "yes" when q plus its tail bound
/// stays below 1, "no" when the truncated q already reaches 1.
struct RobVerdict {
    Tri verdict = Tri::Unknown;
    double q = 0.0;
    double tail = 0.0;
};

inline RobVerdict rob_condition(const DichotomyConstants& c, const Perturbation& b, const Grid& window) {
    RobVerdict r;
    if (b.is_zero()) {
        r.verdict = Tri::Yes;
        return r;
    }
    const ScalarGridFn bf = sample_weighted_norm(b, c.epsilon, window);
    const auto conv = exp_conv_nodes(bf, c.alpha);
    double best = 0.0, tail = 0.0;
    for (const auto& v : conv) {
        best = std::max(best, v.value);
        tail = std::max(tail, v.tail_bound);
    }
    r.q = 2.0 * c.K * best;
    r.tail = 2.0 * c.K * tail;
    if (r.q >= 1.0)
        r.verdict = Tri::No;
    else if (tail_bound_trusted(bf) && r.q + r.tail < 1.0)
        r.verdict = Tri::Yes;
    return r;
}

/// One instance of the comparison: constants, split and ||B(t)|| = delta e^{-lambda|t - center|}.
struct ComparisonInstance {
    DichotomyConstants c;
    PpxSplit split;
    double delta = 0.0;
    double lambda = 0.0;
    double center = 0.0;
    bool constructed = false;  ///< built as a strictness witness

    Perturbation perturbation(std::size_t dim = 1) const {
        const double d = delta, l = lambda, t0 = center;
        const Mat id = Mat::identity(dim);
        if (d == 0.0) return Perturbation::zero(dim);
        return Perturbation(
            dim, [=](double t) { return (d * std::exp(-l * std::abs(t - t0))) * id; },
            [=](double t) { return d * std::exp(-l * std::abs(t - t0)); });
    }
};

struct ComparisonRow {
    ComparisonInstance instance;
    RobVerdict rob;
    PpxResult ppx;
};

struct ImplicationReport {
    std::vector<ComparisonRow> rows;
    std::size_t rob2_pass = 0;
    std::size_t rob_pass = 0;
    std::size_t both_pass = 0;
    std::size_t counterexamples = 0;  ///< rob2 yes, rob not yes
    std::size_t witnesses = 0;        ///< rob yes, rob2 no
    std::size_t undetermined = 0;
};

struct StudyOptions {
    std::size_t instances = 100;
    std::uint64_t seed = 0;
    bool add_witness = true;
    double window_half_width = 30.0;
    double h = 0.02;
    unsigned workers = 1;
};

/// Seeded random instances: K in (1, 10], alpha in [0.5, 5], eps in [0, alpha],
/// alpha1 in (0, alpha), lambda >= 2 eps + 0.5 so that bbar decays, delta
/// log-uniform around the (rob2) threshold.
inline std::vector<ComparisonInstance> random_instances(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<ComparisonInstance> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        ComparisonInstance in;
        in.c.K = 1.0 + 9.0 * (1.0 - u(rng));  // (1, 10]
        in.c.alpha = 0.5 + 4.5 * u(rng);
        in.c.epsilon = in.c.alpha * u(rng);
        const double frac = 0.05 + 0.9 * u(rng);
        in.split = {frac * in.c.alpha, in.c.alpha - frac * in.c.alpha};
        in.lambda = 2.0 * in.c.epsilon + 0.5 + 2.0 * u(rng);
        in.center = -5.0 + 10.0 * u(rng);
        // the rob2 integral per unit delta is at most ~ 2K/alpha1 * e^{2 eps |center|}
        const double scale = in.split.alpha1 / (2.0 * in.c.K * (in.c.K + 1.0) * std::exp(2.0 * in.c.epsilon * std::abs(in.center)));
        in.delta = scale * std::exp(std::log(100.0) * (u(rng) - 0.5) * 2.0);
        out.push_back(in);
    }
    return out;
}

inline ComparisonRow evaluate_instance(const ComparisonInstance& in, const Grid& window) {
    const Perturbation b = in.perturbation();
    return {in, rob_condition(in.c, b, window), ppx_conditions(in.c, in.split, b, window)};
}

/// An instance with (rob) passing and (rob2) failing: with v1, v2 the two
/// conditions' values per unit delta, any delta in (1/v2, 1/v1) separates them.
inline ComparisonInstance strictness_witness(ComparisonInstance base, const Grid& window) {
    base.delta = 1.0;
    const ComparisonRow unit = evaluate_instance(base, window);
    const double v1 = unit.rob.q;                    // rob: delta v1 < 1
    const double v2 = unit.ppx.b_value * (base.c.K + 1.0);  // rob2: delta v2 <= 1
    if (!(v2 > v1) || !(v1 > 0.0)) throw DiagnosticError("strictness_witness: conditions do not separate");
    base.delta = 1.0 / std::sqrt(v1 * v2);
    base.constructed = true;
    return base;
}

inline ImplicationReport implication_study(const std::vector<ComparisonInstance>& instances, const StudyOptions& opts = {}) {
    const Grid window(-opts.window_half_width, opts.window_half_width, opts.h);
    std::vector<ComparisonInstance> all = instances;
    if (opts.add_witness) {
        ComparisonInstance w;
        w.c = {std::exp(2.0), 2.0, 0.5};
        w.split = {1.0, 1.0};
        w.lambda = 2.0 * w.c.epsilon + 1.0;
        w.center = 0.0;
        all.push_back(strictness_witness(w, window));
    }
    ImplicationReport rep;
    rep.rows.resize(all.size(), ComparisonRow{});
    parallel_for(all.size(), opts.workers, [&](std::size_t i) { rep.rows[i] = evaluate_instance(all[i], window); });
    for (const auto& row : rep.rows) {
        const bool rob2 = row.ppx.b == Tri::Yes;
        const bool rob = row.rob.verdict == Tri::Yes;
        if (row.ppx.b == Tri::Unknown || row.rob.verdict == Tri::Unknown) ++rep.undetermined;
        rep.rob2_pass += rob2;
        rep.rob_pass += rob;
        rep.both_pass += rob && rob2;
        if (rob2 && !rob) ++rep.counterexamples;
        if (rob && row.ppx.b == Tri::No) ++rep.witnesses;
    }
    return rep;
}

inline ImplicationReport implication_study(const StudyOptions& opts) {
    return implication_study(random_instances(opts.instances, opts.seed), opts);
}

/// CSV: index,K,alpha,epsilon,alpha1,alpha2,delta,lambda,center,q,rob,ppx_a,ppx_b_value,ppx_b_bound,rob2,constructed
inline void write_implication_csv(std::ostream& os, const ImplicationReport& rep) {
    os << "index,K,alpha,epsilon,alpha1,alpha2,delta,lambda,center,q,rob,ppx_a,ppx_b_value,ppx_b_bound,rob2,constructed\n";
    char buf[512];
    for (std::size_t i = 0; i < rep.rows.size(); ++i) {
        const auto& r = rep.rows[i];
        const auto& in = r.instance;
        std::snprintf(buf, sizeof buf, "%zu,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%s,%d,%.12g,%.12g,%s,%d\n", i,
                      in.c.K, in.c.alpha, in.c.epsilon, in.split.alpha1, in.split.alpha2, in.delta, in.lambda, in.center,
                      r.rob.q, to_string(r.rob.verdict), r.ppx.a ? 1 : 0, r.ppx.b_value, r.ppx.b_bound,
                      to_string(r.ppx.b), in.constructed ? 1 : 0);
        os << buf;
    }
}

// ---------------------------------------------------------------------------
// End-to-end pipeline

enum class Verdict { Pass, Fail, Declined };

inline const char* to_string(Verdict v) {
    switch (v) {
        case Verdict::Pass: return "pass";
        case Verdict::Fail: return "fail";
        case Verdict::Declined: return "declined";
    }
    return "?";
}

struct PipelineOptions {
    std::optional<Grid> q_window;        ///< default: twice the grid window, step h/10
    double tail_tol = 1e-10;
    std::size_t volterra_substeps = 100;
    std::size_t green_refinement = 10;   ///< solver grid step = grid step / green_refinement
    double green_tol = 1e-12;
    double projection_tol = 1e-3;        ///< idempotency, invariance, drift, decay-subspace angle
    double ratio_tol = 1e-4;
    double ode_h = 1e-3;
    double ode_span = 10.0;
    std::size_t ode_pairs = 60;
    double decay_horizon = 10.0;
    double decay_time = 0.0;
    bool refinement_check = true;
    bool exploratory = false;            ///< run the pipeline uncertified when 1 <= q < 1.05
    std::optional<YoungParams> young;    ///< p and q used; b_lq is computed
    std::optional<PpxSplit> split;
    PairSampling sampling;
    double fit_alpha_factor = 2.0;       ///< sweep alpha in (0, factor * alpha]
    std::size_t fit_alpha_count = 200;
    unsigned workers = 1;
};

struct RobustnessReport {
    QResult q;
    std::optional<double> q_relaxed;
    Tri young_ok = Tri::Unknown;
    std::optional<double> young_lhs_value;
    Tri ppx_a_ok = Tri::Unknown;
    Tri ppx_b_ok = Tri::Unknown;
    std::optional<DichotomyConstants> perturbed_constants;
    std::optional<DichotomyReport> perturbed_report;
    std::optional<DichotomyReport> refined_report;
    double idempotency_max = 0.0;
    std::size_t projection_rank = 0;
    double kernel_jump = 0.0;
    std::size_t kernel_iterations = 0;
    std::optional<double> projection_drift;   ///< max ||P_U - P_U(refined)|| over grid nodes
    std::optional<double> ode_difference;     ///< max relative Volterra vs ODE difference
    std::optional<double> decay_angle;
    std::optional<double> growth_rate;
    bool exploratory = false;
    Verdict verdict = Verdict::Fail;
    std::vector<std::string> failures;
};

namespace detail {

inline std::vector<Mat> kernel_projections(const GreenKernel& k) {
    std::vector<Mat> out(k.grid().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = k.at(i, i);
    return out;
}

inline SplitEvolution kernel_split(std::shared_ptr<const GreenKernel> kernel, const EvolutionFamily& u,
                                   const ProjectionFamily& pu) {
    SplitEvolution sp;
    sp.dim = kernel->dim();
    const std::size_t d = sp.dim;
    sp.stable = [kernel](double t, double s) { return (*kernel)(t, s); };
    sp.unstable = [kernel, d](double t, double s) {
        const std::size_t i = kernel->grid().require_index(t), j = kernel->grid().require_index(s);
        if (i == j) return Mat::identity(d) - kernel->at(i, i);
        return -kernel->at(i, j);
    };
    sp.invariance = [u, pu](double t, double s) { return relative_invariance_residual(u, pu, t, s); };
    return sp;
}

struct PerturbedBuild {
    std::shared_ptr<const GreenKernel> kernel;
    EvolutionFamily u;
    ProjectionFamily pu;
    std::vector<Mat> projections;
};

inline PerturbedBuild build_perturbed(const EvolutionFamily& f, const ProjectionFamily& p, const DichotomyConstants& c,
                                      const Perturbation& b, const Grid& grid, std::size_t refinement,
                                      std::size_t substeps, const PipelineOptions& opts, double q) {
    const AdaptedNormCtx fine(f, p, c, grid.refined(refinement), 0);
    PerturbedGreenOptions go;
    go.tol = opts.green_tol;
    go.stride = refinement;
    go.q = q;
    go.workers = opts.workers;
    auto kernel = std::make_shared<const GreenKernel>(perturbed_green(fine, b, go));
    std::vector<Mat> proj = kernel_projections(*kernel);
    ProjectionFamily pu = ProjectionFamily::on_grid(GridFn<Mat>(grid, proj));
    VolterraOptions vo;
    vo.substeps = substeps;
    vo.workers = opts.workers;
    EvolutionFamily u = volterra_family(f, b, grid, vo);
    return {std::move(kernel), std::move(u), std::move(pu), std::move(proj)};
}

}  // namespace detail

/// compute q; if q < 1 build the perturbed kernel and projections, the
/// perturbed family U, fit constants for U and verify them, then repeat the
/// construction on a 2x finer discretization and check the verdict is stable.
inline RobustnessReport robustness_pipeline(const EvolutionFamily& f, const ProjectionFamily& p,
                                            const DichotomyConstants& c, const Perturbation& b, const Grid& grid,
                                            const PipelineOptions& opts = {}) {
    c.validate();
    if (f.dim() != p.dim() || b.dim() != f.dim()) throw InvalidInput("robustness_pipeline: dimension mismatch");
    RobustnessReport rep;
    const Grid window = opts.q_window ? *opts.q_window
                                      : Grid(2.0 * grid.t_min(), 2.0 * grid.t_max(), grid.h() / 10.0);
    rep.q = compute_q(b, c, window, QOptions{opts.tail_tol, opts.workers});
    {
        const std::size_t rank = p.validate(grid);
        if (rank == 0 || rank == p.dim()) rep.q_relaxed = 0.5 * rep.q.q;
    }
    if (opts.young) {
        YoungParams yp = *opts.young;
        const ScalarGridFn bf = sample_weighted_norm(b, c.epsilon, window);
        yp.b_lq = lq_norm(bf, yp.q);
        rep.young_lhs_value = young_lhs(yp, c);
        rep.young_ok = young_verdict(yp, c, bf);
    }
    if (opts.split) {
        const PpxResult ppx = ppx_conditions(c, *opts.split, b, window);
        rep.ppx_a_ok = ppx.a ? Tri::Yes : Tri::No;
        rep.ppx_b_ok = ppx.b;
    }

    if (rep.q.q >= 1.0) {
        if (!(opts.exploratory && rep.q.q < 1.05)) {
            rep.verdict = Verdict::Declined;
            return rep;
        }
        rep.exploratory = true;
    }
    const double q_run = std::min(rep.q.q, 0.999);

    auto built = detail::build_perturbed(f, p, c, b, grid, opts.green_refinement, opts.volterra_substeps, opts, q_run);
    rep.kernel_jump = built.kernel->jump_residual();
    rep.kernel_iterations = built.kernel->max_iterations;

    // projections: idempotent, same rank as P
    const std::size_t want_rank = p.rank_at(grid.node(0));
    for (std::size_t k = 0; k < grid.size(); ++k) {
        const auto diag = projection_diagnostics(built.projections[k]);
        rep.idempotency_max = std::max(rep.idempotency_max, diag.idempotency);
        if (diag.rank != p.rank_at(grid.node(k)))
            throw DiagnosticError("robustness_pipeline: perturbed projection at t = " + std::to_string(grid.node(k)) +
                                  " has rank " + std::to_string(diag.rank) + ", expected " +
                                  std::to_string(p.rank_at(grid.node(k))));
    }
    rep.projection_rank = want_rank;
    if (rep.idempotency_max > opts.projection_tol) rep.failures.push_back("projection idempotency");

    // Volterra against direct integration of x' = (A+B)x, when A is known
    if (f.ode()) {
        const EvolutionFamily ode = ode_perturbed_family(*f.ode(), b, opts.ode_h);
        std::mt19937_64 rng(opts.sampling.seed + 17);
        std::uniform_int_distribution<std::size_t> pick(0, grid.size() - 1);
        const std::size_t span = static_cast<std::size_t>(std::floor(opts.ode_span / grid.h() + 1e-9));
        std::vector<std::pair<std::size_t, std::size_t>> pairs;
        for (std::size_t i = 0; i < opts.ode_pairs; ++i) {
            const std::size_t s = pick(rng);
            const std::size_t t = std::min(grid.size() - 1, s + pick(rng) % (span + 1));
            pairs.emplace_back(t, s);
        }
        Vec diff(pairs.size());
        parallel_for(pairs.size(), opts.workers, [&](std::size_t i) {
            const double t = grid.node(pairs[i].first), s = grid.node(pairs[i].second);
            const Mat a = built.u(t, s), e = ode(t, s);
            diff[i] = operator_norm(a - e) / std::max(1.0, operator_norm(e));
        });
        rep.ode_difference = diff.empty() ? 0.0 : *std::max_element(diff.begin(), diff.end());
        if (*rep.ode_difference > 1e-4) rep.failures.push_back("volterra vs ode");
    }

    // fit and verify the perturbed bounds through the perturbed kernel
    const SplitEvolution sp = detail::kernel_split(built.kernel, built.u, built.pu);
    FitOptions fo;
    fo.alpha_max = opts.fit_alpha_factor * c.alpha;
    fo.alpha_count = opts.fit_alpha_count;
    fo.sampling = opts.sampling;
    fo.workers = opts.workers;
    const FitResult fit = fit_constants(sp, grid, fo);
    rep.perturbed_constants = fit.constants;
    VerifyOptions vo;
    vo.ratio_tol = opts.ratio_tol;
    vo.invariance_tol = opts.projection_tol;
    vo.sampling = opts.sampling;
    vo.workers = opts.workers;
    rep.perturbed_report = verify_ned(sp, fit.constants, grid, vo);
    if (!rep.perturbed_report->pass()) rep.failures.push_back("perturbed dichotomy bounds");

    // forward-growth look at P_U
    if (grid.contains(opts.decay_time) && grid.contains(opts.decay_time + opts.decay_horizon) &&
        grid.index_of(opts.decay_time)) {
        const DecayCheck dc = decay_subspace_check(built.u, built.pu(opts.decay_time), opts.decay_time, opts.decay_horizon);
        rep.decay_angle = dc.angle;
        rep.growth_rate = dc.growth_rate;
        if (dc.angle > opts.projection_tol) rep.failures.push_back("decay subspace");
    }

    if (opts.refinement_check) {
        auto fine = detail::build_perturbed(f, p, c, b, grid, 2 * opts.green_refinement, 2 * opts.volterra_substeps, opts,
                                            q_run);
        double drift = 0.0;
        for (std::size_t k = 0; k < grid.size(); ++k)
            drift = std::max(drift, operator_norm(fine.projections[k] - built.projections[k]));
        rep.projection_drift = drift;
        if (drift > opts.projection_tol) rep.failures.push_back("projection drift under refinement");
        const SplitEvolution sp2 = detail::kernel_split(fine.kernel, fine.u, fine.pu);
        rep.refined_report = verify_ned(sp2, fit.constants, grid, vo);
        if (!rep.refined_report->pass()) rep.failures.push_back("refined dichotomy bounds");
    }

    rep.verdict = rep.failures.empty() && !rep.exploratory ? Verdict::Pass : Verdict::Fail;
    return rep;
}

/// Flat key = value block.
inline void write_report(std::ostream& os, const RobustnessReport& r) {
    char buf[256];
    auto kv = [&](const char* k, double v) {
        std::snprintf(buf, sizeof buf, "%s = %.12g\n", k, v);
        os << buf;
    };
    os << "verdict = " << to_string(r.verdict) << "\n";
    if (r.exploratory) os << "exploratory = true (not certified)\n";
    kv("q", r.q.q);
    kv("q_argmax_t", r.q.argmax_t);
    kv("q_tail", r.q.tail_at_argmax);
    os << "q_tail_trusted = " << (r.q.tail_trusted ? "true" : "false") << "\n";
    if (r.q_relaxed) kv("q_relaxed", *r.q_relaxed);
    os << "young_ok = " << to_string(r.young_ok) << "\n";
    if (r.young_lhs_value) kv("young_lhs", *r.young_lhs_value);
    os << "ppx_a_ok = " << to_string(r.ppx_a_ok) << "\n";
    os << "ppx_b_ok = " << to_string(r.ppx_b_ok) << "\n";
    if (r.verdict == Verdict::Declined) return;
    kv("projection_rank", static_cast<double>(r.projection_rank));
    kv("projection_idempotency_max", r.idempotency_max);
    kv("kernel_jump_residual", r.kernel_jump);
    kv("kernel_iterations_max", static_cast<double>(r.kernel_iterations));
    if (r.ode_difference) kv("volterra_ode_max_rel_diff", *r.ode_difference);
    if (r.decay_angle) kv("decay_subspace_angle", *r.decay_angle);
    if (r.growth_rate) kv("decay_check_growth_rate", *r.growth_rate);
    if (r.perturbed_constants) {
        kv("perturbed_K", r.perturbed_constants->K);
        kv("perturbed_alpha", r.perturbed_constants->alpha);
        kv("perturbed_epsilon", r.perturbed_constants->epsilon);
    }
    if (r.perturbed_report) {
        kv("perturbed_max_ratio_d1", r.perturbed_report->max_ratio_d1);
        kv("perturbed_max_ratio_d2", r.perturbed_report->max_ratio_d2);
        kv("perturbed_invariance_max", r.perturbed_report->invariance_max);
        kv("perturbed_pairs", static_cast<double>(r.perturbed_report->pairs_checked));
    }
    if (r.projection_drift) kv("refinement_projection_drift", *r.projection_drift);
    if (r.refined_report) {
        kv("refined_max_ratio_d1", r.refined_report->max_ratio_d1);
        kv("refined_max_ratio_d2", r.refined_report->max_ratio_d2);
        kv("refined_invariance_max", r.refined_report->invariance_max);
    }
    for (const auto& f : r.failures) os << "failure = " << f << "\n";
}

/// CSV summary: header row and one data row.
inline void write_report_csv(std::ostream& os, const RobustnessReport& r) {
    os << "verdict,q,q_argmax_t,young_ok,ppx_a_ok,ppx_b_ok,perturbed_K,perturbed_alpha,perturbed_epsilon,"
          "max_ratio_d1,max_ratio_d2,invariance_max,projection_drift\n";
    auto num = [](std::optional<double> v) {
        if (!v) return std::string();
        char b[64];
        std::snprintf(b, sizeof b, "%.12g", *v);
        return std::string(b);
    };
    std::optional<double> k, a, e, d1, d2, inv;
    if (r.perturbed_constants) {
        k = r.perturbed_constants->K;
        a = r.perturbed_constants->alpha;
        e = r.perturbed_constants->epsilon;
    }
    if (r.perturbed_report) {
        d1 = r.perturbed_report->max_ratio_d1;
        d2 = r.perturbed_report->max_ratio_d2;
        inv = r.perturbed_report->invariance_max;
    }
    os << to_string(r.verdict) << "," << num(r.q.q) << "," << num(r.q.argmax_t) << "," << to_string(r.young_ok) << ","
       << to_string(r.ppx_a_ok) << "," << to_string(r.ppx_b_ok) << "," << num(k) << "," << num(a) << "," << num(e) << ","
       << num(d1) << "," << num(d2) << "," << num(inv) << "," << num(r.projection_drift) << "\n";
}

}  // namespace nedkit
