#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nedkit/evolution.hpp"
#include "nedkit/numerics.hpp"
#include "nedkit/parallel.hpp"

namespace nedkit {

/// t -> P(t), a family of projections. Q(t) = Id - P(t) is always derived.
class ProjectionFamily {
public:
    using Evaluator = std::function<Mat(double)>;

    ProjectionFamily(std::size_t dim, Evaluator eval) : dim_(dim), eval_(std::move(eval)) {
        if (dim == 0) throw InvalidInput("ProjectionFamily: dimension must be positive");
        if (!eval_) throw InvalidInput("ProjectionFamily: evaluator required");
    }

    static ProjectionFamily constant(Mat p) {
        if (!p.is_square() || !p.all_finite()) throw InvalidInput("ProjectionFamily: finite square matrix required");
        if (frobenius(p * p - p) > 1e-10 * std::max(1.0, frobenius(p)))
            throw InvalidInput("ProjectionFamily: matrix is not idempotent");
        const std::size_t d = p.rows();
        return ProjectionFamily(d, [p = std::move(p)](double) { return p; });
    }
    /// P = diag(mask), mask entries 0 or 1.
    static ProjectionFamily diagonal(const Vec& mask) {
        for (double m : mask)
            if (m != 0.0 && m != 1.0) throw InvalidInput("ProjectionFamily::diagonal: mask entries must be 0 or 1");
        return constant(Mat::diag(mask));
    }
    static ProjectionFamily identity(std::size_t dim) { return constant(Mat::identity(dim)); }
    static ProjectionFamily zero(std::size_t dim) { return constant(Mat(dim, dim)); }

    /// Projections known only at grid nodes.
    static ProjectionFamily on_grid(GridFn<Mat> samples) {
        if (samples.values.empty()) throw InvalidInput("ProjectionFamily::on_grid: no samples");
        const std::size_t d = samples.values.front().rows();
        auto data = std::make_shared<const GridFn<Mat>>(std::move(samples));
        return ProjectionFamily(d, [data](double t) {
            const auto k = data->grid.index_of(t);
            if (!k) throw InvalidInput("ProjectionFamily: time " + std::to_string(t) + " is not a grid node");
            return data->values[*k];
        });
    }

    std::size_t dim() const noexcept { return dim_; }
    Mat operator()(double t) const { return eval_(t); }
    Mat complement(double t) const { return Mat::identity(dim_) - eval_(t); }
    std::size_t rank_at(double t) const {
        return static_cast<std::size_t>(std::max(0.0, std::round(eval_(t).trace())));
    }

    /// Checks idempotency and constant rank on the grid nodes; returns the rank.
    std::size_t validate(const Grid& g, double tol = 1e-10) const {
        std::size_t rank = rank_at(g.node(0));
        for (std::size_t k = 0; k < g.size(); ++k) {
            const Mat p = eval_(g.node(k));
            if (p.rows() != dim_ || p.cols() != dim_ || !p.all_finite())
                throw InvalidInput("ProjectionFamily: bad sample at t = " + std::to_string(g.node(k)));
            if (operator_norm(p * p - p) > tol * std::max(1.0, operator_norm(p)))
                throw InvalidInput("ProjectionFamily: P(t)^2 != P(t) at t = " + std::to_string(g.node(k)));
            if (rank_at(g.node(k)) != rank)
                throw InvalidInput("ProjectionFamily: rank changes at t = " + std::to_string(g.node(k)));
        }
        return rank;
    }

private:
    std::size_t dim_;
    Evaluator eval_;
};

struct DichotomyConstants {
    double K = 1.0;
    double alpha = 1.0;
    double epsilon = 0.0;

    void validate() const {
        if (!(K > 0.0) || !std::isfinite(K)) throw InvalidInput("DichotomyConstants: K must be positive");
        if (!(alpha > 0.0) || !std::isfinite(alpha)) throw InvalidInput("DichotomyConstants: alpha must be positive");
        if (!(epsilon >= 0.0) || !std::isfinite(epsilon))
            throw InvalidInput("DichotomyConstants: epsilon must be nonnegative");
    }
    /// K e^{-alpha gap + epsilon |s|}
    double bound(double gap, double s) const { return K * std::exp(-alpha * gap + epsilon * std::abs(s)); }
};

/// T(t, s) Q(s) for t <= s: the inverse of T(s, t) restricted to Ker P(t),
/// applied to the unstable component at s.
///
/// Uses the exact inverse when the family has one; otherwise solves the
/// least-squares problem on an orthonormal basis of Ker P(t).
inline Mat unstable_backward(const EvolutionFamily& f, const ProjectionFamily& p, double t, double s) {
    if (t > s + 1e-12) throw InvalidInput("unstable_backward: requires t <= s");
    const Mat qs = p.complement(s);
    if (t == s) return qs;
    if (f.has_inverse()) return f.inverse(t, s) * qs;
    if (!f.kernel_invertible())
        throw CapabilityError("unstable_backward: family provides no backward evaluator on Ker P");
    const Mat w = orthonormal_basis(p.complement(t));
    if (w.cols() == 0) return Mat(f.dim(), f.dim());
    const Mat m = f(s, t) * w;
    const auto left = left_inverse(m);
    if (!left) throw CapabilityError("unstable_backward: T(s,t) is not injective on Ker P(t)");
    return w * (*left * qs);
}

/// ||T(t,s) P(s) - P(t) T(t,s)|| for t >= s.
inline double invariance_residual(const EvolutionFamily& f, const ProjectionFamily& p, double t, double s) {
    if (t < s) throw InvalidInput("invariance_residual: requires t >= s");
    const Mat ts = f(t, s);
    return operator_norm(ts * p(s) - p(t) * ts);
}

/// Invariance residual divided by max(1, ||T(t,s)||).
inline double relative_invariance_residual(const EvolutionFamily& f, const ProjectionFamily& p, double t, double s) {
    if (t < s) throw InvalidInput("relative_invariance_residual: requires t >= s");
    const Mat ts = f(t, s);
    return operator_norm(ts * p(s) - p(t) * ts) / std::max(1.0, operator_norm(ts));
}

/// The projected operators a dichotomy check needs:
///   stable(t, s)   = T(t,s) P(s), t >= s
///   unstable(t, s) = T(t,s) Q(s), t <= s
///   invariance(t, s), t >= s, a relative commutation residual.
struct SplitEvolution {
    std::size_t dim = 0;
    std::function<Mat(double, double)> stable;
    std::function<Mat(double, double)> unstable;
    std::function<double(double, double)> invariance;
    bool closed_form = false;
};

inline SplitEvolution split(const EvolutionFamily& f, const ProjectionFamily& p) {
    if (f.dim() != p.dim()) throw InvalidInput("split: dimension mismatch");
    if (!f.kernel_invertible()) throw CapabilityError("split: family provides no backward evaluator on Ker P");
    SplitEvolution out;
    out.dim = f.dim();
    out.stable = [f, p](double t, double s) { return f(t, s) * p(s); };
    out.unstable = [f, p](double t, double s) { return unstable_backward(f, p, t, s); };
    out.invariance = [f, p](double t, double s) { return relative_invariance_residual(f, p, t, s); };
    out.closed_form = f.is_closed_form();
    return out;
}

/// Which node pairs a sweep visits. Grids up to `dense_limit` nodes use all
/// pairs; larger grids use every pair with gap <= full_gap plus a seeded
/// random fraction of the longer ones.
struct PairSampling {
    std::size_t dense_limit = 1001;
    double full_gap = 10.0;
    double long_fraction = 0.01;
    std::uint64_t seed = 1;
};

/// Pairs (later, earlier) of node indices, later >= earlier.
inline std::vector<std::pair<std::size_t, std::size_t>> sample_pairs(const Grid& g, const PairSampling& ps = {}) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    const std::size_t n = g.size();
    const bool dense = n <= ps.dense_limit;
    std::mt19937_64 rng(ps.seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t k = 0; k < n; ++k)
        for (std::size_t j = k; j < n; ++j) {
            if (dense || g.node(j) - g.node(k) <= ps.full_gap + 1e-12 || u(rng) < ps.long_fraction)
                out.emplace_back(j, k);
        }
    return out;
}

enum class BoundKind { D1, D2 };

inline const char* to_string(BoundKind k) { return k == BoundKind::D1 ? "D1" : "D2"; }

/// One sampled estimate: ||T(t,s)P(s)|| (D1, t >= s) or ||T(t,s)Q(s)|| (D2, t <= s).
struct NormSample {
    BoundKind kind;
    double t;
    double s;
    double lhs;
    double gap() const noexcept { return std::abs(t - s); }
};

inline std::vector<NormSample> collect_norm_samples(const SplitEvolution& sp, const Grid& g,
                                                    const PairSampling& ps = {}, unsigned workers = 1) {
    const auto pairs = sample_pairs(g, ps);
    std::vector<NormSample> out(2 * pairs.size());
    parallel_for(pairs.size(), workers, [&](std::size_t i) {
        const double later = g.node(pairs[i].first);
        const double earlier = g.node(pairs[i].second);
        out[2 * i] = {BoundKind::D1, later, earlier, operator_norm(sp.stable(later, earlier))};
        out[2 * i + 1] = {BoundKind::D2, earlier, later, operator_norm(sp.unstable(earlier, later))};
    });
    return out;
}

struct ReportRow {
    BoundKind kind;
    double t, s, lhs, bound, ratio;
};

struct DichotomyReport {
    double max_ratio_d1 = 0.0;
    double witness_d1_t = 0.0, witness_d1_s = 0.0;
    double max_ratio_d2 = 0.0;
    double witness_d2_t = 0.0, witness_d2_s = 0.0;
    double invariance_max = 0.0;
    double witness_inv_t = 0.0, witness_inv_s = 0.0;
    double ratio_tol = 0.0;
    double invariance_tol = 0.0;
    std::size_t pairs_checked = 0;
    std::vector<ReportRow> rows;

    bool pass() const noexcept {
        return max_ratio_d1 <= 1.0 + ratio_tol && max_ratio_d2 <= 1.0 + ratio_tol && invariance_max <= invariance_tol;
    }
};

struct VerifyOptions {
    /// Pass threshold on the ratios; defaults to 1e-9 (closed form) or 1e-4 (grid-backed).
    std::optional<double> ratio_tol;
    /// Threshold on the relative invariance residual; defaults to 1e-9 or 1e-3.
    std::optional<double> invariance_tol;
    PairSampling sampling;
    bool record_rows = false;
    unsigned workers = 1;
};

/// Checks the two nonuniform bounds on every sampled node pair:
///   ||T(t,s)P(s)|| <= K e^{-alpha (t-s) + eps |s|}   (t >= s)
///   ||T(t,s)Q(s)|| <= K e^{-alpha (s-t) + eps |s|}   (t <= s)
/// together with the commutation T(t,s)P(s) = P(t)T(t,s).
inline DichotomyReport verify_ned(const SplitEvolution& sp, const DichotomyConstants& c, const Grid& g,
                                  const VerifyOptions& opts = {}) {
    c.validate();
    DichotomyReport rep;
    rep.ratio_tol = opts.ratio_tol.value_or(sp.closed_form ? 1e-9 : 1e-4);
    rep.invariance_tol = opts.invariance_tol.value_or(sp.closed_form ? 1e-9 : 1e-3);
    const auto samples = collect_norm_samples(sp, g, opts.sampling, opts.workers);
    rep.pairs_checked = samples.size() / 2;
    if (opts.record_rows) rep.rows.reserve(samples.size());
    for (const NormSample& smp : samples) {
        const double bound = c.bound(smp.gap(), smp.s);
        const double ratio = smp.lhs / bound;
        if (opts.record_rows) rep.rows.push_back({smp.kind, smp.t, smp.s, smp.lhs, bound, ratio});
        if (smp.kind == BoundKind::D1) {
            if (ratio > rep.max_ratio_d1) {
                rep.max_ratio_d1 = ratio;
                rep.witness_d1_t = smp.t;
                rep.witness_d1_s = smp.s;
            }
        } else if (ratio > rep.max_ratio_d2) {
            rep.max_ratio_d2 = ratio;
            rep.witness_d2_t = smp.t;
            rep.witness_d2_s = smp.s;
        }
    }
    if (sp.invariance) {
        const auto pairs = sample_pairs(g, opts.sampling);
        Vec inv(pairs.size());
        parallel_for(pairs.size(), opts.workers, [&](std::size_t i) {
            inv[i] = sp.invariance(g.node(pairs[i].first), g.node(pairs[i].second));
        });
        for (std::size_t i = 0; i < pairs.size(); ++i)
            if (inv[i] > rep.invariance_max) {
                rep.invariance_max = inv[i];
                rep.witness_inv_t = g.node(pairs[i].first);
                rep.witness_inv_s = g.node(pairs[i].second);
            }
    }
    return rep;
}

inline DichotomyReport verify_ned(const EvolutionFamily& f, const ProjectionFamily& p, const DichotomyConstants& c,
                                  const Grid& g, const VerifyOptions& opts = {}) {
    return verify_ned(split(f, p), c, g, opts);
}

/// A log-space constraint log(lhs) <= log K - alpha * gap + eps * abs_s.
struct BoundSample {
    double log_norm;
    double gap;
    double abs_s;
};

struct FitOptions {
    double alpha_max = 0.0;          ///< sweep alpha_k = alpha_max * k / alpha_count, k = 1..alpha_count
    std::size_t alpha_count = 200;
    PairSampling sampling;
    unsigned workers = 1;
};

struct FitSweepRow {
    double alpha, epsilon, K, objective;
};

struct FitResult {
    DichotomyConstants constants;
    double objective = 0.0;   ///< mean of log-bound over the samples
    bool K_below_one = false;
    std::size_t samples = 0;
    std::vector<FitSweepRow> sweep;
};

namespace detail {

struct Line {
    double sigma;  // line value c - sigma * eps
    double c;
};

/// Minimizes F(eps) = max_i (c_i - sigma_i eps) + mean_sigma * eps over eps >= 0.
/// `lines` must be sorted by sigma descending with one line per sigma.
inline double minimize_envelope(const std::vector<Line>& lines, double mean_sigma) {
    // Upper envelope, left to right in eps (slopes -sigma ascending).
    std::vector<Line> hull;
    std::vector<double> start;  // eps where hull[i] becomes active
    auto cross = [](const Line& a, const Line& b) { return (a.c - b.c) / (a.sigma - b.sigma); };
    for (const Line& l : lines) {
        while (!hull.empty()) {
            const double x = cross(hull.back(), l);
            if (x <= start.back()) {
                hull.pop_back();
                start.pop_back();
            } else {
                break;
            }
        }
        start.push_back(hull.empty() ? -std::numeric_limits<double>::infinity() : cross(hull.back(), l));
        hull.push_back(l);
    }
    for (std::size_t i = 0; i < hull.size(); ++i) {
        const double end = i + 1 < hull.size() ? start[i + 1] : std::numeric_limits<double>::infinity();
        if (end <= 0.0) continue;
        if (mean_sigma - hull[i].sigma >= 0.0) return std::max(0.0, start[i]);
    }
    return std::max(0.0, start.back());
}

}  // namespace detail

/// Fits (K, alpha, eps) so that every sample satisfies its bound, by minimizing
/// the mean log-bound  log K - alpha * mean(gap) + eps * mean(|s|).
///
/// At fixed alpha this is a two-variable LP whose optimum is a vertex of the
/// upper envelope of the lines c_i - eps |s_i| (c_i = log lhs_i + alpha gap_i);
/// alpha is swept over a uniform grid.
inline FitResult fit_constants_from_samples(std::span<const BoundSample> samples, const FitOptions& opts) {
    if (!(opts.alpha_max > 0.0)) throw FittingError("fit_constants: alpha_max must be positive");
    if (opts.alpha_count == 0) throw FittingError("fit_constants: empty alpha sweep");
    std::vector<BoundSample> live;
    for (const BoundSample& s : samples) {
        if (!std::isfinite(s.gap) || !std::isfinite(s.abs_s) || std::isnan(s.log_norm))
            throw FittingError("fit_constants: non-finite sample");
        if (std::isfinite(s.log_norm)) live.push_back(s);
    }
    if (live.size() < 3) throw FittingError("fit_constants: fewer than three samples with positive norm");

    double mean_gap = 0.0, mean_abs_s = 0.0;
    for (const auto& s : live) {
        mean_gap += s.gap;
        mean_abs_s += s.abs_s;
    }
    mean_gap /= static_cast<double>(live.size());
    mean_abs_s /= static_cast<double>(live.size());

    // Group samples by |s| (descending) so each alpha needs one max per group.
    std::vector<double> sigmas;
    for (const auto& s : live) sigmas.push_back(s.abs_s);
    std::sort(sigmas.begin(), sigmas.end(), std::greater<>());
    sigmas.erase(std::unique(sigmas.begin(), sigmas.end()), sigmas.end());
    std::vector<std::size_t> group(live.size());
    for (std::size_t i = 0; i < live.size(); ++i)
        group[i] = static_cast<std::size_t>(
            std::lower_bound(sigmas.begin(), sigmas.end(), live[i].abs_s, std::greater<>()) - sigmas.begin());

    FitResult best;
    best.objective = std::numeric_limits<double>::infinity();
    best.samples = live.size();
    std::vector<FitSweepRow> sweep(opts.alpha_count);
    parallel_for(opts.alpha_count, opts.workers, [&](std::size_t idx) {
        const double alpha = opts.alpha_max * static_cast<double>(idx + 1) / static_cast<double>(opts.alpha_count);
        std::vector<detail::Line> lines(sigmas.size(), {0.0, -std::numeric_limits<double>::infinity()});
        for (std::size_t g = 0; g < sigmas.size(); ++g) lines[g].sigma = sigmas[g];
        for (std::size_t i = 0; i < live.size(); ++i)
            lines[group[i]].c = std::max(lines[group[i]].c, live[i].log_norm + alpha * live[i].gap);
        const double eps = detail::minimize_envelope(lines, mean_abs_s);
        double log_k = -std::numeric_limits<double>::infinity();
        for (const auto& s : live) log_k = std::max(log_k, s.log_norm + alpha * s.gap - eps * s.abs_s);
        sweep[idx] = {alpha, eps, std::exp(log_k), log_k - alpha * mean_gap + eps * mean_abs_s};
    });
    for (const auto& row : sweep) {
        if (row.objective < best.objective) {
            best.objective = row.objective;
            best.constants = {row.K, row.alpha, row.epsilon};
        }
    }
    if (!std::isfinite(best.objective) || !(best.constants.K > 0.0) || !std::isfinite(best.constants.K))
        throw FittingError("fit_constants: no finite certificate found");
    best.K_below_one = best.constants.K < 1.0;
    best.sweep = std::move(sweep);
    return best;
}

inline std::vector<BoundSample> to_bound_samples(const std::vector<NormSample>& samples) {
    std::vector<BoundSample> out;
    out.reserve(samples.size());
    for (const auto& s : samples)
        out.push_back({s.lhs > 0.0 ? std::log(s.lhs) : -std::numeric_limits<double>::infinity(), s.gap(),
                       std::abs(s.s)});
    return out;
}

/// Constants certifying both bounds on the sampled node pairs of `g`; the same
/// pair set as verify_ned with equal sampling options.
inline FitResult fit_constants(const SplitEvolution& sp, const Grid& g, const FitOptions& opts) {
    const auto samples = to_bound_samples(collect_norm_samples(sp, g, opts.sampling, opts.workers));
    return fit_constants_from_samples(samples, opts);
}

inline FitResult fit_constants(const EvolutionFamily& f, const ProjectionFamily& p, const Grid& g,
                               const FitOptions& opts) {
    return fit_constants(split(f, p), g, opts);
}

}  // namespace nedkit
