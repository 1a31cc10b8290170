#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "nedkit/adapted_norms.hpp"
#include "nedkit/dichotomy.hpp"
#include "nedkit/error.hpp"
#include "nedkit/evolution.hpp"
#include "nedkit/numerics.hpp"
#include "nedkit/parallel.hpp"
#include "nedkit/perturbation.hpp"

namespace nedkit {

/// A path t -> x(t) sampled on the nodes of a grid. `tail_bound`, when filled,
/// bounds the part of the solution contributed from outside the window.
struct PathOnGrid {
    Grid grid;
    std::vector<Vec> values;
    std::vector<double> tail_bound;

    std::size_t dim() const { return values.empty() ? 0 : values.front().size(); }
};

/// A forcing t -> y(t) sampled on grid nodes.
struct ForcingOnGrid {
    Grid grid;
    std::vector<Vec> values;

    template <class F>
    static ForcingOnGrid sample(const Grid& g, F&& f) {
        ForcingOnGrid y{g, {}};
        y.values.reserve(g.size());
        for (std::size_t k = 0; k < g.size(); ++k) y.values.push_back(f(g.node(k)));
        return y;
    }
    static ForcingOnGrid zero(const Grid& g, std::size_t dim) {
        return ForcingOnGrid{g, std::vector<Vec>(g.size(), Vec(dim, 0.0))};
    }
    std::size_t dim() const { return values.empty() ? 0 : values.front().size(); }
};

namespace detail {

inline void check_on_ctx_grid(const AdaptedNormCtx& ctx, const Grid& g, const std::vector<Vec>& v, const char* who) {
    if (!(g == ctx.grid())) throw InvalidInput(std::string(who) + ": samples must live on the context grid");
    if (v.size() != g.size()) throw InvalidInput(std::string(who) + ": one value per node required");
    for (const Vec& x : v) {
        if (x.size() != ctx.dim()) throw InvalidInput(std::string(who) + ": dimension mismatch");
        for (double e : x)
            if (!std::isfinite(e)) throw InvalidInput(std::string(who) + ": non-finite sample");
    }
}

}  // namespace detail

/// Discrete C-norm: max over nodes of ||x(t)||_t.
inline double norm_sup(const AdaptedNormCtx& ctx, const std::vector<Vec>& values, unsigned workers = 1) {
    std::vector<double> per(values.size(), 0.0);
    parallel_for(values.size(), workers, [&](std::size_t k) { per[k] = lyap_norm_parts_at(ctx, values[k], k).total(); });
    return per.empty() ? 0.0 : *std::max_element(per.begin(), per.end());
}

inline double norm_sup(const AdaptedNormCtx& ctx, const PathOnGrid& x, unsigned workers = 1) {
    detail::check_on_ctx_grid(ctx, x.grid, x.values, "norm_sup");
    return norm_sup(ctx, x.values, workers);
}

/// Discrete M-norm: max over nodes t with [t, t+1] inside the grid of the
/// trapezoid value of int_t^{t+1} ||y(s)||_s ds.
inline double norm_M(const AdaptedNormCtx& ctx, const ForcingOnGrid& y, unsigned workers = 1) {
    detail::check_on_ctx_grid(ctx, y.grid, y.values, "norm_M");
    const Grid& g = y.grid;
    const double h = g.h();
    if (g.t_max() - g.t_min() < 1.0 - 1e-12) throw InvalidInput("norm_M: grid shorter than one unit window");
    std::vector<double> a(g.size());
    parallel_for(g.size(), workers, [&](std::size_t k) { a[k] = lyap_norm_parts_at(ctx, y.values[k], k).total(); });
    const double full = std::floor(1.0 / h + 1e-9);
    const std::size_t m = static_cast<std::size_t>(full);
    const double rest = 1.0 - full * h;  // partial last interval
    double best = 0.0;
    for (std::size_t k = 0; k + m < g.size(); ++k) {
        if (rest > 1e-12 * h && k + m + 1 >= g.size()) break;
        double s = 0.0;
        for (std::size_t j = k; j < k + m; ++j) s += 0.5 * h * (a[j] + a[j + 1]);
        if (rest > 1e-12 * h) {
            const double th = rest / h;
            const double end = (1.0 - th) * a[k + m] + th * a[k + m + 1];
            s += 0.5 * rest * (a[k + m] + end);
        }
        best = std::max(best, s);
    }
    return best;
}

/// 2 / (1 - e^{-alpha}): the series bound sup_t ||x(t)||_t <= factor * ||y||_M.
inline double admissibility_bound_factor(double alpha) {
    if (!(alpha > 0.0)) throw InvalidInput("admissibility_bound_factor: alpha must be positive");
    return 2.0 / (1.0 - std::exp(-alpha));
}

/// G(t,s) = T(t,s)P(s) for t >= s and -T(t,s)Q(s) for t < s; P(t) on the diagonal.
inline Mat green_eval(const AdaptedNormCtx& ctx, double t, double s) {
    const std::size_t ti = ctx.index(t), si = ctx.index(s);
    if (ti >= si) return ctx.stable_op(si, ti);
    return -ctx.unstable_op(si, ti);
}

/// Node-to-node transfers of the Green kernel. Applying it to a forcing f is the
/// composite trapezoid of int G(t,s) f(s) ds over the grid, computed by one
/// forward sweep on Im P and one backward sweep on Ker P:
///   xs_{k+1} = Phi_k (xs_k + h/2 f+_k) + h/2 P_{k+1} f-_{k+1},   Phi_k = T(t_{k+1},t_k) P(t_k)
///   xu_k     = Psi_k (xu_{k+1} - h/2 f-_{k+1}) - h/2 Q_k f+_k,    Psi_k = T(t_k,t_{k+1}) Q(t_{k+1})
/// f+ / f- are the values seen just right / left of a node; they differ only for
/// point masses (kernel columns).
class GreenStepper {
public:
    GreenStepper(const EvolutionFamily& f, const ProjectionFamily& p, const Grid& g, unsigned workers = 1) : grid_(g) {
        const std::size_t n = g.size();
        p_.resize(n);
        q_.resize(n);
        phi_.resize(n - 1);
        psi_.resize(n - 1);
        parallel_for(n, workers, [&](std::size_t k) {
            p_[k] = p(g.node(k));
            q_[k] = Mat::identity(f.dim()) - p_[k];
            if (k + 1 < n) {
                phi_[k] = f(g.node(k + 1), g.node(k)) * p_[k];
                psi_[k] = unstable_backward(f, p, g.node(k), g.node(k + 1));
            }
        });
    }
    explicit GreenStepper(const AdaptedNormCtx& ctx, unsigned workers = 1)
        : GreenStepper(ctx.family(), ctx.projection(), ctx.grid(), workers) {}

    const Grid& grid() const noexcept { return grid_; }
    const Mat& P(std::size_t k) const { return p_[k]; }
    const Mat& Q(std::size_t k) const { return q_[k]; }

    template <class V>
    std::vector<V> apply(const std::vector<V>& fplus, const std::vector<V>& fminus) const {
        const std::size_t n = grid_.size();
        if (fplus.size() != n || fminus.size() != n) throw InvalidInput("GreenStepper: one value per node required");
        const double hh = 0.5 * grid_.h();
        std::vector<V> xs(n, zero_like(fplus[0]));
        for (std::size_t k = 0; k + 1 < n; ++k) {
            V a = xs[k];
            axpy(a, hh, fplus[k]);
            xs[k + 1] = phi_[k] * a;
            axpy(xs[k + 1], hh, p_[k + 1] * fminus[k + 1]);
        }
        V xu = zero_like(fplus[0]);
        for (std::size_t k = n - 1;; --k) {
            if (k + 1 < n) {
                V a = xu;
                axpy(a, -hh, fminus[k + 1]);
                xu = psi_[k] * a;
                axpy(xu, -hh, q_[k] * fplus[k]);
            }
            xs[k] += xu;
            if (k == 0) break;
        }
        return xs;
    }
    template <class V>
    std::vector<V> apply(const std::vector<V>& f) const {
        return apply(f, f);
    }

private:
    Grid grid_;
    std::vector<Mat> p_, q_, phi_, psi_;
};

/// x(t_k) = sum_j w_j G(t_k, t_j) f(t_j) with the kernel evaluated directly:
/// O(N^2), used as an independent check of GreenStepper.
inline std::vector<Vec> green_apply_direct(const AdaptedNormCtx& ctx, const std::vector<Vec>& f) {
    const Grid& g = ctx.grid();
    const std::size_t n = g.size();
    if (f.size() != n) throw InvalidInput("green_apply_direct: one value per node required");
    const double h = g.h();
    std::vector<Vec> out(n, Vec(ctx.dim(), 0.0));
    for (std::size_t k = 0; k < n; ++k) {
        Vec& x = out[k];
        // stable part over [t_0, t_k]
        for (std::size_t j = 0; j <= k && k > 0; ++j) {
            const double w = (j == 0 || j == k) ? 0.5 * h : h;
            axpy(x, w, ctx.stable_op(j, k) * f[j]);
        }
        // unstable part over [t_k, t_{n-1}]
        for (std::size_t j = k; j < n && k + 1 < n; ++j) {
            const double w = (j == k || j == n - 1) ? 0.5 * h : h;
            axpy(x, -w, ctx.unstable_op(j, k) * f[j]);
        }
    }
    return out;
}

struct SolveOptions {
    /// When set, a tail bound above this value at any node of the central half
    /// of the window is an error.
    std::optional<double> tail_tol;
    unsigned workers = 1;
};

/// Bound on the contribution of forcing outside the window to ||x(t_k)||_t at
/// each node, assuming ||y(s)||_s beyond the edges stays below its supremum over
/// the outer 10% bands (estimated from ||y(s)||_s <= 2K e^{eps|s|} ||y(s)||).
inline std::vector<double> solve_tail_bound(const AdaptedNormCtx& ctx, const ForcingOnGrid& y) {
    const Grid& g = y.grid;
    const auto& c = ctx.constants();
    ScalarGridFn b(g, Vec(g.size()));
    for (std::size_t k = 0; k < g.size(); ++k)
        b.values[k] = 2.0 * c.K * std::exp(c.epsilon * std::abs(g.node(k))) * norm2(y.values[k]);
    const auto bands = detail::tail_bands(b);
    std::vector<double> out(g.size());
    for (std::size_t k = 0; k < g.size(); ++k) out[k] = detail::tail_at(bands, g, c.alpha, g.node(k));
    return out;
}

/// Bounded solution x = int G(., s) y(s) ds, by quadrature over the context grid.
inline PathOnGrid solve_inhomogeneous(const AdaptedNormCtx& ctx, const ForcingOnGrid& y, const SolveOptions& opts = {}) {
    detail::check_on_ctx_grid(ctx, y.grid, y.values, "solve_inhomogeneous");
    const GreenStepper stepper(ctx, opts.workers);
    PathOnGrid x{y.grid, stepper.apply(y.values), solve_tail_bound(ctx, y)};
    if (opts.tail_tol) {
        const std::size_t n = x.grid.size();
        for (std::size_t k = n / 4; k <= 3 * n / 4 && k < n; ++k)
            if (x.tail_bound[k] > *opts.tail_tol)
                throw ConfigurationError("solve_inhomogeneous: tail bound " + std::to_string(x.tail_bound[k]) +
                                         " exceeds tolerance at t = " + std::to_string(x.grid.node(k)) +
                                         "; widen the window");
    }
    return x;
}

/// ||x(t) - T(t,s)x(s) - int_s^t T(t,tau) y(tau) dtau|| (trapezoid over nodes).
inline double admissibility_residual(const AdaptedNormCtx& ctx, const PathOnGrid& x, const ForcingOnGrid& y, double t,
                                     double s) {
    if (t < s) throw InvalidInput("admissibility_residual: requires t >= s");
    detail::check_on_ctx_grid(ctx, x.grid, x.values, "admissibility_residual");
    detail::check_on_ctx_grid(ctx, y.grid, y.values, "admissibility_residual");
    const Grid& g = ctx.grid();
    const std::size_t ti = g.require_index(t), si = g.require_index(s);
    const EvolutionFamily& f = ctx.family();
    Vec r = x.values[ti] - f(t, s) * x.values[si];
    const double h = g.h();
    for (std::size_t j = si; j < ti; ++j) {
        axpy(r, -0.5 * h, f(t, g.node(j)) * y.values[j]);
        axpy(r, -0.5 * h, f(t, g.node(j + 1)) * y.values[j + 1]);
    }
    return norm2(r);
}

/// Size of the terms entering admissibility_residual; the natural scale when
/// T(t,s) is exponentially large.
inline double admissibility_residual_scale(const AdaptedNormCtx& ctx, const PathOnGrid& x, const ForcingOnGrid& y,
                                           double t, double s) {
    const Grid& g = ctx.grid();
    const std::size_t ti = g.require_index(t), si = g.require_index(s);
    const EvolutionFamily& f = ctx.family();
    double scale = norm2(x.values[ti]) + operator_norm(f(t, s)) * norm2(x.values[si]);
    for (std::size_t j = si; j <= ti; ++j) scale += g.h() * operator_norm(f(t, g.node(j))) * norm2(y.values[j]);
    return scale;
}

/// 2K sup_t int e^{-alpha|t-s|} ||B(s)|| e^{eps|s|} ds over the nodes of g
/// (truncated to the window).
inline double contraction_constant(const DichotomyConstants& c, const Perturbation& b, const Grid& g) {
    if (b.is_zero()) return 0.0;
    ScalarGridFn bf(g, Vec(g.size()));
    for (std::size_t k = 0; k < g.size(); ++k) bf.values[k] = b.norm(g.node(k)) * std::exp(c.epsilon * std::abs(g.node(k)));
    double best = 0.0;
    for (const ConvValue& v : exp_conv_nodes(bf, c.alpha)) best = std::max(best, v.value);
    return 2.0 * c.K * best;
}

enum class IncrementNorm { Adapted, Euclidean };

struct FixedPointOptions {
    double tol = 1e-8;
    std::size_t max_iter = 200;
    std::optional<double> q;          ///< contraction constant; computed on the grid when absent
    bool allow_noncontractive = false;  ///< proceed even when q >= 1
    std::optional<std::vector<Vec>> x0;
    IncrementNorm norm = IncrementNorm::Adapted;
    unsigned workers = 1;
};

struct FixedPointResult {
    PathOnGrid x;
    std::vector<double> increments;  ///< ||x_{n+1} - x_n||_inf
    std::vector<double> ratios;      ///< increments[n+1] / increments[n]
    std::size_t iterations = 0;
    double q = 0.0;
};

namespace detail {

inline std::vector<Vec> sampled_perturbation_apply(const std::vector<Mat>& bv, const std::vector<Vec>& x) {
    std::vector<Vec> out(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) out[k] = bv[k] * x[k];
    return out;
}

}  // namespace detail

/// x_{n+1} = int G(., s)(y(s) + B(s) x_n(s)) ds until ||x_{n+1} - x_n||_inf <= tol.
inline FixedPointResult fixed_point_iterate(const AdaptedNormCtx& ctx, const Perturbation& b, const ForcingOnGrid& y,
                                            const FixedPointOptions& opts = {}) {
    detail::check_on_ctx_grid(ctx, y.grid, y.values, "fixed_point_iterate");
    if (b.dim() != ctx.dim()) throw InvalidInput("fixed_point_iterate: perturbation dimension mismatch");
    if (!(opts.tol > 0.0)) throw InvalidInput("fixed_point_iterate: tol must be positive");
    const Grid& g = ctx.grid();
    FixedPointResult res{PathOnGrid{g, {}, {}}, {}, {}, 0, 0.0};
    res.q = opts.q ? *opts.q : contraction_constant(ctx.constants(), b, g);
    if (res.q >= 1.0 && !opts.allow_noncontractive)
        throw PreconditionError("fixed_point_iterate: q = " + std::to_string(res.q) + " >= 1, no contraction");

    std::vector<Mat> bv(g.size());
    for (std::size_t k = 0; k < g.size(); ++k) bv[k] = b(g.node(k));
    const GreenStepper stepper(ctx, opts.workers);
    auto dist = [&](const std::vector<Vec>& a, const std::vector<Vec>& c) {
        std::vector<Vec> d(a.size());
        for (std::size_t k = 0; k < a.size(); ++k) d[k] = a[k] - c[k];
        if (opts.norm == IncrementNorm::Adapted) return norm_sup(ctx, d, opts.workers);
        double m = 0.0;
        for (const Vec& v : d) m = std::max(m, norm2(v));
        return m;
    };

    std::vector<Vec> x = opts.x0 ? *opts.x0 : std::vector<Vec>(g.size(), Vec(ctx.dim(), 0.0));
    detail::check_on_ctx_grid(ctx, g, x, "fixed_point_iterate (x0)");
    for (std::size_t it = 1; it <= opts.max_iter; ++it) {
        std::vector<Vec> f = detail::sampled_perturbation_apply(bv, x);
        for (std::size_t k = 0; k < f.size(); ++k) f[k] += y.values[k];
        std::vector<Vec> next = stepper.apply(f);
        const double inc = dist(next, x);
        if (!res.increments.empty() && res.increments.back() > 0.0) res.ratios.push_back(inc / res.increments.back());
        res.increments.push_back(inc);
        x = std::move(next);
        res.iterations = it;
        if (!std::isfinite(inc)) break;
        if (inc <= opts.tol) {
            res.x = PathOnGrid{g, std::move(x), solve_tail_bound(ctx, y)};
            return res;
        }
    }
    throw NonConvergenceError("fixed_point_iterate: no convergence after " + std::to_string(res.iterations) +
                                  " iterations",
                              res.ratios);
}

struct RsCheckOptions {
    std::size_t r_count = 8;  ///< number of sampled base points r
    double max_span = 0.5;    ///< t ranges over nodes in (r, r + max_span]
    std::uint64_t seed = 7;
};

struct RsCheckResult {
    double defect = 0.0;      ///< max || dU(t) - dT(t) - int_r^t T(t,tau) B(tau) dU(tau) dtau ||
    double residual_U = 0.0;  ///< max ||dU(t)||: residual of x against U with forcing y
    double residual_T = 0.0;  ///< max ||dT(t)||: residual of x against T with forcing y + Bx
    std::size_t pairs = 0;
};

/// Checks that the residual of x against (U, y) and the residual of x against
/// (T, y + Bx) are tied by the variation-of-constants relation
///   dU(t) - dT(t) = int_r^t T(t,tau) B(tau) dU(tau) dtau,
/// which holds for every x, y whenever U solves the Volterra equation. So x
/// satisfies the U-identity exactly when it satisfies the T-identity with
/// forcing y + Bx. U must be defined on the context grid nodes.
inline RsCheckResult rs_identity_check(const AdaptedNormCtx& ctx, const EvolutionFamily& u, const Perturbation& b,
                                       const PathOnGrid& x, const ForcingOnGrid& y, const RsCheckOptions& opts = {}) {
    detail::check_on_ctx_grid(ctx, x.grid, x.values, "rs_identity_check");
    detail::check_on_ctx_grid(ctx, y.grid, y.values, "rs_identity_check");
    const Grid& g = ctx.grid();
    const EvolutionFamily& t_fam = ctx.family();
    const std::size_t n = g.size();
    const double h = g.h();
    const std::size_t span = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(opts.max_span / h + 1e-9)));
    if (n < 2) throw InvalidInput("rs_identity_check: grid too small");

    std::vector<Mat> bv(n);
    for (std::size_t k = 0; k < n; ++k) bv[k] = b(g.node(k));

    std::mt19937_64 rng(opts.seed);
    std::uniform_int_distribution<std::size_t> pick(0, n - 2);
    RsCheckResult out;
    for (std::size_t rep = 0; rep < opts.r_count; ++rep) {
        const std::size_t r = pick(rng);
        const std::size_t end = std::min(n - 1, r + span);
        // dU(tau) for tau = t_r .. t_end
        std::vector<Vec> du(end - r + 1);
        for (std::size_t j = r; j <= end; ++j) {
            const double tj = g.node(j);
            Vec d = x.values[j] - u(tj, g.node(r)) * x.values[r];
            for (std::size_t i = r; i < j; ++i) {
                axpy(d, -0.5 * h, u(tj, g.node(i)) * y.values[i]);
                axpy(d, -0.5 * h, u(tj, g.node(i + 1)) * y.values[i + 1]);
            }
            du[j - r] = std::move(d);
        }
        for (std::size_t j = r + 1; j <= end; ++j) {
            const double tj = g.node(j);
            Vec dt = x.values[j] - t_fam(tj, g.node(r)) * x.values[r];
            Vec integral(ctx.dim(), 0.0);
            for (std::size_t i = r; i < j; ++i) {
                for (std::size_t e : {i, i + 1}) {
                    const Mat tt = t_fam(tj, g.node(e));
                    axpy(dt, -0.5 * h, tt * (y.values[e] + bv[e] * x.values[e]));
                    axpy(integral, 0.5 * h, tt * (bv[e] * du[e - r]));
                }
            }
            Vec defect = du[j - r] - dt;
            defect -= integral;
            out.defect = std::max(out.defect, norm2(defect));
            out.residual_U = std::max(out.residual_U, norm2(du[j - r]));
            out.residual_T = std::max(out.residual_T, norm2(dt));
            ++out.pairs;
        }
    }
    return out;
}

/// Sampled two-time kernel on a grid, with both one-sided values kept on the
/// diagonal: G(t, t-) (stable side, the value returned at t = s) and G(t, t+).
class GreenKernel {
public:
    GreenKernel(Grid grid, std::size_t dim) : grid_(std::move(grid)), dim_(dim) {
        const std::size_t n = grid_.size();
        data_.assign(n * n * dim * dim, 0.0);
        diag_unstable_.assign(n * dim * dim, 0.0);
    }

    const Grid& grid() const noexcept { return grid_; }
    std::size_t dim() const noexcept { return dim_; }

    Mat operator()(double t, double s) const { return at(grid_.require_index(t), grid_.require_index(s)); }
    /// Stable-side convention on the diagonal.
    Mat at(std::size_t i, std::size_t j) const { return load(data_, (j * grid_.size() + i)); }
    /// G(t, t+), the unstable-side diagonal value.
    Mat unstable_diagonal(std::size_t i) const { return load(diag_unstable_, i); }
    /// P_U(t) = G(t, t-).
    Mat projection(double t) const {
        const std::size_t i = grid_.require_index(t);
        return at(i, i);
    }
    /// max_t || G(t,t-) - G(t,t+) - Id ||.
    double jump_residual() const {
        double m = 0.0;
        for (std::size_t i = 0; i < grid_.size(); ++i)
            m = std::max(m, operator_norm(at(i, i) - unstable_diagonal(i) - Mat::identity(dim_)));
        return m;
    }

    void store(std::size_t i, std::size_t j, const Mat& m) { put(data_, j * grid_.size() + i, m); }
    void store_unstable_diagonal(std::size_t i, const Mat& m) { put(diag_unstable_, i, m); }

    std::size_t max_iterations = 0;  ///< worst column iteration count
    double solver_h = 0.0;           ///< step of the grid the columns were solved on

private:
    Mat load(const std::vector<double>& src, std::size_t slot) const {
        Mat m(dim_, dim_);
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(slot * dim_ * dim_), dim_ * dim_, m.data().begin());
        return m;
    }
    void put(std::vector<double>& dst, std::size_t slot, const Mat& m) {
        std::copy(m.data().begin(), m.data().end(), dst.begin() + static_cast<std::ptrdiff_t>(slot * dim_ * dim_));
    }

    Grid grid_;
    std::size_t dim_;
    std::vector<double> data_;
    std::vector<double> diag_unstable_;
};

struct PerturbedGreenOptions {
    double tol = 1e-12;           ///< per-node relative change that stops a column iteration
    std::size_t max_iter = 500;
    std::size_t stride = 1;       ///< keep every stride-th solver node as a kernel row / column
    std::optional<double> q;
    unsigned workers = 1;
};

namespace detail {

struct KernelColumn {
    std::vector<Mat> values;  // g(t_k, s) at solver nodes; averaged one-sided value at t_k = s
    Mat stable_diag;
    Mat unstable_diag;
    std::size_t iterations = 0;
};

/// Column s = t_m of the perturbed kernel on the solver grid:
///   g = c + W(B g),  c = W(delta_m) / w_m,
/// with W the discrete Green operator. The diagonal of c carries the jump
/// P(s) - (-Q(s)) = Id split over the two one-sided trapezoid halves. g jumps
/// at t_m as well, so the half intervals on either side of the source node are
/// fed the one-sided values g(t_m+, s) and g(t_m-, s) rather than their mean.
inline KernelColumn perturbed_column(const GreenStepper& stepper, const std::vector<Mat>& bv, std::size_t m,
                                     std::size_t dim, const PerturbedGreenOptions& opts) {
    const Grid& g = stepper.grid();
    const std::size_t n = g.size();
    const double h = g.h();
    const double w = g.trapezoid_weight(m);
    const double right_half = m + 1 < n ? 0.5 * h : 0.0;  // weight of the interval to the right of t_m
    const double left_half = m > 0 ? 0.5 * h : 0.0;
    const Mat id = Mat::identity(dim);
    std::vector<Mat> delta(n, Mat(dim, dim));
    delta[m] = (1.0 / w) * Mat::identity(dim);
    std::vector<Mat> c = stepper.apply(delta);

    KernelColumn col;
    std::vector<Mat> cur = c;
    bool nonzero = false;
    for (const Mat& bm : bv) nonzero = nonzero || bm.max_abs() > 0.0;
    if (nonzero) {
        for (std::size_t it = 1;; ++it) {
            if (it > opts.max_iter)
                throw NonConvergenceError("perturbed_green: column at t = " + std::to_string(g.node(m)) +
                                              " did not converge",
                                          {});
            std::vector<Mat> fplus(n);
            for (std::size_t k = 0; k < n; ++k) fplus[k] = bv[k] * cur[k];
            std::vector<Mat> fminus = fplus;
            Mat after = cur[m], before = cur[m];
            after.axpy(right_half / w, id);
            before.axpy(-left_half / w, id);
            fplus[m] = bv[m] * after;
            fminus[m] = bv[m] * before;
            std::vector<Mat> next = stepper.apply(fplus, fminus);
            double worst = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
                next[k] += c[k];
                const double scale = std::max(1.0, operator_norm(next[k]));
                worst = std::max(worst, operator_norm(next[k] - cur[k]) / scale);
            }
            cur = std::move(next);
            col.iterations = it;
            if (!std::isfinite(worst))
                throw NonConvergenceError("perturbed_green: column iteration diverged", {});
            if (worst <= opts.tol) break;
        }
    }
    col.stable_diag = cur[m];
    col.stable_diag.axpy(right_half / w, id);
    col.unstable_diag = cur[m];
    col.unstable_diag.axpy(-left_half / w, id);
    col.values = std::move(cur);
    return col;
}

}  // namespace detail

/// The perturbed kernel G_U(t,s) = G(t,s) + int G(t,tau) B(tau) G_U(tau,s) dtau,
/// solved column by column on the context grid. Rows and columns are kept at
/// every `stride`-th node.
inline GreenKernel perturbed_green(const AdaptedNormCtx& ctx, const Perturbation& b, const PerturbedGreenOptions& opts = {}) {
    if (b.dim() != ctx.dim()) throw InvalidInput("perturbed_green: dimension mismatch");
    if (opts.stride == 0) throw InvalidInput("perturbed_green: stride must be positive");
    const Grid& g = ctx.grid();
    if ((g.size() - 1) % opts.stride != 0) throw InvalidInput("perturbed_green: stride must divide the grid");
    const double q = opts.q ? *opts.q : contraction_constant(ctx.constants(), b, g);
    if (q >= 1.0) throw PreconditionError("perturbed_green: q = " + std::to_string(q) + " >= 1");

    const std::size_t d = ctx.dim();
    const GreenStepper stepper(ctx, opts.workers);
    std::vector<Mat> bv(g.size());
    for (std::size_t k = 0; k < g.size(); ++k) bv[k] = b(g.node(k));

    const Grid coarse(g.t_min(), g.t_max(), g.h() * static_cast<double>(opts.stride));
    const std::size_t nc = coarse.size();
    GreenKernel kernel(coarse, d);
    kernel.solver_h = g.h();
    std::vector<std::size_t> iters(nc, 0);
    parallel_for(nc, opts.workers, [&](std::size_t j) {
        const std::size_t m = j * opts.stride;
        detail::KernelColumn col = detail::perturbed_column(stepper, bv, m, d, opts);
        for (std::size_t i = 0; i < nc; ++i)
            if (i != j) kernel.store(i, j, col.values[i * opts.stride]);
        kernel.store(j, j, col.stable_diag);
        kernel.store_unstable_diagonal(j, col.unstable_diag);
        iters[j] = col.iterations;
    });
    kernel.max_iterations = iters.empty() ? 0 : *std::max_element(iters.begin(), iters.end());
    return kernel;
}

/// x(t_k) = sum_j w_j G_U(t_k, t_j) y(t_j); the kernel must have been kept at
/// every solver node (stride 1). On the diagonal the averaged one-sided value
/// is used, matching the discrete operator the columns were solved for.
inline PathOnGrid apply_kernel(const GreenKernel& kernel, const ForcingOnGrid& y) {
    const Grid& g = kernel.grid();
    if (!(y.grid == g)) throw InvalidInput("apply_kernel: forcing must live on the kernel grid");
    if (std::abs(kernel.solver_h - g.h()) > 1e-12 * g.h())
        throw CapabilityError("apply_kernel: kernel was thinned; rebuild with stride 1");
    const std::size_t n = g.size();
    PathOnGrid x{g, std::vector<Vec>(n, Vec(kernel.dim(), 0.0)), {}};
    for (std::size_t j = 0; j < n; ++j) {
        const double w = g.trapezoid_weight(j);
        const double right_half = j + 1 < n ? 0.5 * g.h() : 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            Mat m = kernel.at(k, j);
            if (k == j) m.axpy(-right_half / w, Mat::identity(kernel.dim()));
            axpy(x.values[k], w, m * y.values[j]);
        }
    }
    return x;
}

struct ProjectionDiagnostics {
    double idempotency = 0.0;  ///< ||P_U^2 - P_U|| / max(1, ||P_U||)
    std::size_t rank = 0;      ///< round(trace P_U)
};

inline ProjectionDiagnostics projection_diagnostics(const Mat& pu) {
    return {operator_norm(pu * pu - pu) / std::max(1.0, operator_norm(pu)),
            static_cast<std::size_t>(std::max(0.0, std::round(pu.trace())))};
}

/// P_U(t) = G_U(t, t-), from the single kernel column s = t. Raises a
/// diagnostic error when the rank differs from that of P(t).
inline Mat perturbed_projection(const AdaptedNormCtx& ctx, const Perturbation& b, double t,
                                const PerturbedGreenOptions& opts = {}) {
    if (b.dim() != ctx.dim()) throw InvalidInput("perturbed_projection: dimension mismatch");
    const Grid& g = ctx.grid();
    const std::size_t m = g.require_index(t);
    const double q = opts.q ? *opts.q : contraction_constant(ctx.constants(), b, g);
    if (q >= 1.0) throw PreconditionError("perturbed_projection: q = " + std::to_string(q) + " >= 1");
    const GreenStepper stepper(ctx, opts.workers);
    std::vector<Mat> bv(g.size());
    for (std::size_t k = 0; k < g.size(); ++k) bv[k] = b(g.node(k));
    Mat pu = detail::perturbed_column(stepper, bv, m, ctx.dim(), opts).stable_diag;
    const std::size_t want = ctx.projection().rank_at(t);
    const std::size_t got = projection_diagnostics(pu).rank;
    if (got != want)
        throw DiagnosticError("perturbed_projection: rank " + std::to_string(got) + " differs from rank " +
                              std::to_string(want) + " of P at t = " + std::to_string(t) +
                              " (perturbation too large or grid too coarse)");
    return pu;
}

/// Independent look at P_U(t) through forward growth: the right-singular
/// vectors of U(t+L, t) with the smallest singular values span the decaying
/// initial data. `angle` is the sine of the largest principal angle between
/// that span and the range of P_U(t) (dominant left-singular vectors of P_U).
/// Forming U(t+L,t) P_U(t) directly is avoided: the unstable growth amplifies
/// the error of P_U beyond use.
struct DecayCheck {
    double angle = 0.0;
    double growth_rate = 0.0;  ///< log of the largest singular value of U(t+L,t), over L
};

inline DecayCheck decay_subspace_check(const EvolutionFamily& u, const Mat& pu, double t, double horizon) {
    const Mat m = u(t + horizon, t);
    const std::size_t d = m.cols();
    const auto eig = symmetric_eigen(m.transpose() * m);  // descending
    const std::size_t rank = projection_diagnostics(pu).rank;
    DecayCheck out;
    out.growth_rate = 0.5 * std::log(std::max(eig.values.front(), 1e-300)) / horizon;
    if (rank == 0 || rank >= d) return out;
    Mat s(d, rank);  // eigenvectors of the `rank` smallest eigenvalues
    for (std::size_t c = 0; c < rank; ++c)
        for (std::size_t r = 0; r < d; ++r) s(r, c) = eig.vectors(r, d - rank + c);
    const auto left = symmetric_eigen(pu * pu.transpose());
    Mat range(d, rank);
    for (std::size_t c = 0; c < rank; ++c)
        for (std::size_t r = 0; r < d; ++r) range(r, c) = left.vectors(r, c);
    out.angle = operator_norm(range - s * (s.transpose() * range));
    return out;
}

/// CSV: t,x_1..x_d
inline void write_path_csv(std::ostream& os, const PathOnGrid& x) {
    os << "t";
    for (std::size_t i = 0; i < x.dim(); ++i) os << ",x_" << i + 1;
    os << "\n";
    char buf[64];
    for (std::size_t k = 0; k < x.values.size(); ++k) {
        std::snprintf(buf, sizeof buf, "%.10g", x.grid.node(k));
        os << buf;
        for (double v : x.values[k]) {
            std::snprintf(buf, sizeof buf, ",%.17g", v);
            os << buf;
        }
        os << "\n";
    }
}

/// CSV: t,s,entry_11,entry_12,...
inline void write_kernel_csv(std::ostream& os, const GreenKernel& g) {
    const std::size_t d = g.dim();
    os << "t,s";
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) os << ",entry_" << i + 1 << j + 1;
    os << "\n";
    char buf[64];
    for (std::size_t i = 0; i < g.grid().size(); ++i)
        for (std::size_t j = 0; j < g.grid().size(); ++j) {
            std::snprintf(buf, sizeof buf, "%.10g,%.10g", g.grid().node(i), g.grid().node(j));
            os << buf;
            for (double v : g.at(i, j).data()) {
                std::snprintf(buf, sizeof buf, ",%.17g", v);
                os << buf;
            }
            os << "\n";
        }
}

}  // namespace nedkit
