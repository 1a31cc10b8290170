#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "nedkit/numerics.hpp"
#include "nedkit/parallel.hpp"
#include "nedkit/perturbation.hpp"

namespace nedkit {

enum class Flavor { ClosedForm, OdeDefined, VolterraPerturbed, OdePerturbed };

inline const char* to_string(Flavor f) {
    switch (f) {
        case Flavor::ClosedForm: return "closed-form-example";
        case Flavor::OdeDefined: return "ode-defined";
        case Flavor::VolterraPerturbed: return "volterra-perturbed";
        case Flavor::OdePerturbed: return "ode-perturbed";
    }
    return "unknown";
}

/// Linear nonautonomous system x' = A(t) x.
struct OdeSystem {
    std::size_t dim = 0;
    std::function<Mat(double)> coefficient;

    Mat operator()(double t) const { return coefficient(t); }
};

/// Parameters of the planar example A(t) = diag(-w - a t sin t, w + a t sin t).
struct ExampleParams {
    double omega = 3.0;
    double a = 1.0;

    void validate() const {
        if (!std::isfinite(omega) || !std::isfinite(a)) throw InvalidInput("ExampleParams: non-finite parameter");
        if (!(a >= 0.0)) throw InvalidInput("ExampleParams: a must be nonnegative");
        if (!(omega > a)) throw InvalidInput("ExampleParams: omega must exceed a");
    }
};

/// Two-parameter family T(t, s), t >= s.
///
/// `inverse(t, s)` for t <= s, when present, returns T(s, t)^{-1} (the family
/// is invertible). Families flagged `kernel_invertible` may instead be
/// inverted on Ker P by least squares (see dichotomy.hpp).
class EvolutionFamily {
public:
    using Evaluator = std::function<Mat(double, double)>;

    EvolutionFamily(std::size_t dim, Flavor flavor, Evaluator forward, Evaluator inverse = {},
                    bool kernel_invertible = true)
        : dim_(dim), flavor_(flavor), forward_(std::move(forward)), inverse_(std::move(inverse)),
          kernel_invertible_(kernel_invertible) {
        if (dim == 0 || dim > 64) throw InvalidInput("EvolutionFamily: dimension must be in [1, 64]");
        if (!forward_) throw InvalidInput("EvolutionFamily: forward evaluator required");
    }

    std::size_t dim() const noexcept { return dim_; }
    Flavor flavor() const noexcept { return flavor_; }
    bool is_closed_form() const noexcept { return flavor_ == Flavor::ClosedForm; }
    bool has_inverse() const noexcept { return static_cast<bool>(inverse_); }
    bool kernel_invertible() const noexcept { return kernel_invertible_ || has_inverse(); }

    /// T(t, s) for t >= s.
    Mat operator()(double t, double s) const {
        if (t < s - 1e-12) throw InvalidInput("EvolutionFamily: forward evaluation requires t >= s");
        return forward_(t, s);
    }
    /// T(s, t)^{-1} for t <= s.
    Mat inverse(double t, double s) const {
        if (!inverse_) throw CapabilityError("EvolutionFamily: no inverse evaluator");
        if (t > s + 1e-12) throw InvalidInput("EvolutionFamily: inverse evaluation requires t <= s");
        return inverse_(t, s);
    }

    void set_ode(OdeSystem sys) { ode_ = std::move(sys); }
    const std::optional<OdeSystem>& ode() const noexcept { return ode_; }
    void set_grid(Grid g) { grid_ = std::move(g); }
    const std::optional<Grid>& grid() const noexcept { return grid_; }

private:
    std::size_t dim_;
    Flavor flavor_;
    Evaluator forward_;
    Evaluator inverse_;
    bool kernel_invertible_;
    std::optional<OdeSystem> ode_;
    std::optional<Grid> grid_;
};

/// Scalar exponent rho(t, s) = int_s^t (-w - a tau sin tau) dtau of the example.
inline double example_exponent(const ExampleParams& p, double t, double s) {
    return -p.omega * (t - s) - p.a * std::sin(t) + p.a * t * std::cos(t) + p.a * std::sin(s) -
           p.a * s * std::cos(s);
}

inline OdeSystem example_ode(const ExampleParams& p) {
    p.validate();
    return OdeSystem{2, [p](double t) {
                         const double c = p.omega + p.a * t * std::sin(t);
                         return Mat::diag({-c, c});
                     }};
}

/// Closed-form evolution family of the planar example:
/// T(t, s) = diag(e^{rho(t,s)}, e^{-rho(t,s)}).
inline EvolutionFamily example_family(const ExampleParams& p) {
    p.validate();
    auto eval = [p](double t, double s) {
        const double r = example_exponent(p, t, s);
        return Mat::diag({std::exp(r), std::exp(-r)});
    };
    // T(s,t)^{-1} = diag(e^{-rho(s,t)}, e^{rho(s,t)}), which is eval(t, s) again.
    EvolutionFamily f(2, Flavor::ClosedForm, eval, eval, true);
    f.set_ode(example_ode(p));
    return f;
}

/// Autonomous diagonal family T(t, s) = diag(e^{rate_i (t - s)}).
inline EvolutionFamily exponential_family(Vec rates) {
    if (rates.empty()) throw InvalidInput("exponential_family: at least one rate required");
    auto eval = [rates](double t, double s) {
        Vec d(rates.size());
        for (std::size_t i = 0; i < rates.size(); ++i) d[i] = std::exp(rates[i] * (t - s));
        return Mat::diag(d);
    };
    EvolutionFamily f(rates.size(), Flavor::ClosedForm, eval, eval, true);
    f.set_ode(OdeSystem{rates.size(), [rates](double) { return Mat::diag(rates); }});
    return f;
}

namespace detail {

inline Mat checked_coefficient(const OdeSystem& sys, double t) {
    Mat a = sys(t);
    if (a.rows() != sys.dim || a.cols() != sys.dim)
        throw IntegrationError("ode: coefficient has wrong shape at t = " + std::to_string(t), t);
    if (!a.all_finite()) throw IntegrationError("ode: non-finite coefficient at t = " + std::to_string(t), t);
    return a;
}

/// One classical RK4 step of M' = A(t) M.
inline Mat rk4_step(const OdeSystem& sys, double t, double h, const Mat& m) {
    const Mat a0 = checked_coefficient(sys, t);
    const Mat a1 = checked_coefficient(sys, t + 0.5 * h);
    const Mat a2 = checked_coefficient(sys, t + h);
    const Mat k1 = a0 * m;
    Mat tmp = m;
    tmp.axpy(0.5 * h, k1);
    const Mat k2 = a1 * tmp;
    tmp = m;
    tmp.axpy(0.5 * h, k2);
    const Mat k3 = a1 * tmp;
    tmp = m;
    tmp.axpy(h, k3);
    const Mat k4 = a2 * tmp;
    Mat out = m;
    out.axpy(h / 6.0, k1);
    out.axpy(h / 3.0, k2);
    out.axpy(h / 3.0, k3);
    out.axpy(h / 6.0, k4);
    return out;
}

}  // namespace detail

/// Solution operator of M' = A(tau) M, M(s) = Id, at time t, by classical RK4
/// with ceil((t - s) / h) equal steps.
inline Mat ode_propagate(const OdeSystem& sys, double t, double s, double h) {
    if (t < s) throw InvalidInput("ode_propagate: requires t >= s");
    if (!(h > 0.0)) throw InvalidInput("ode_propagate: step must be positive");
    Mat m = Mat::identity(sys.dim);
    if (t == s) return m;
    const auto n = static_cast<std::size_t>(std::ceil((t - s) / h - 1e-9));
    const double step = (t - s) / static_cast<double>(n);
    for (std::size_t k = 0; k < n; ++k) m = detail::rk4_step(sys, s + static_cast<double>(k) * step, step, m);
    return m;
}

/// RK4 propagation from node s_index of `nodes`, recording the solution operator
/// at every later node up to `max_span`. The step is grid.h() / substeps.
inline std::vector<Mat> ode_propagate_nodes(const OdeSystem& sys, const Grid& nodes, std::size_t s_index,
                                            std::size_t substeps,
                                            double max_span = std::numeric_limits<double>::infinity()) {
    if (substeps == 0) throw InvalidInput("ode_propagate_nodes: substeps must be positive");
    const double step = nodes.h() / static_cast<double>(substeps);
    std::vector<Mat> out{Mat::identity(sys.dim)};
    Mat m = out.front();
    const double s = nodes.node(s_index);
    for (std::size_t k = s_index + 1; k < nodes.size() && nodes.node(k) - s <= max_span + 1e-9; ++k) {
        const double t0 = nodes.node(k - 1);
        for (std::size_t j = 0; j < substeps; ++j) m = detail::rk4_step(sys, t0 + static_cast<double>(j) * step, step, m);
        out.push_back(m);
    }
    return out;
}

/// Evolution family of x' = A(t) x, evaluated by RK4 with step h.
inline EvolutionFamily ode_family(OdeSystem sys, double h, Flavor flavor = Flavor::OdeDefined) {
    if (!(h > 0.0)) throw InvalidInput("ode_family: step must be positive");
    auto eval = [sys, h](double t, double s) { return ode_propagate(sys, t, s, h); };
    EvolutionFamily f(sys.dim, flavor, eval, {}, true);
    f.set_ode(std::move(sys));
    return f;
}

/// Evolution family of x' = (A(t) + B(t)) x.
inline EvolutionFamily ode_perturbed_family(const OdeSystem& sys, const Perturbation& b, double h) {
    if (b.dim() != sys.dim) throw InvalidInput("ode_perturbed_family: dimension mismatch");
    OdeSystem sum{sys.dim, [sys, b](double t) { return sys(t) + b(t); }};
    return ode_family(std::move(sum), h, Flavor::OdePerturbed);
}

/// ||T(t,s) T(s,r) - T(t,r)|| for t >= s >= r.
inline double cocycle_residual(const EvolutionFamily& f, double t, double s, double r) {
    if (!(t >= s && s >= r)) throw InvalidInput("cocycle_residual: requires t >= s >= r");
    return operator_norm(f(t, s) * f(s, r) - f(t, r));
}

/// Cocycle residual scaled by ||T(t,s)|| ||T(s,r)||; the meaningful measure
/// when the family grows exponentially.
inline double relative_cocycle_residual(const EvolutionFamily& f, double t, double s, double r) {
    if (!(t >= s && s >= r)) throw InvalidInput("relative_cocycle_residual: requires t >= s >= r");
    const Mat ts = f(t, s), sr = f(s, r);
    const double scale = operator_norm(ts) * operator_norm(sr);
    const double res = operator_norm(ts * sr - f(t, r));
    return scale > 0.0 ? res / scale : res;
}

struct VolterraOptions {
    std::size_t substeps = 1;  ///< inner steps per grid interval
    double max_span = std::numeric_limits<double>::infinity();  ///< store only pairs with t - s <= max_span
    unsigned workers = 1;
};

namespace detail {

/// Banded storage of U(t_j, t_k), j >= k, j - k <= band.
struct NodePairStore {
    Grid grid;
    std::size_t band;
    std::vector<std::size_t> offset;  // start of column k
    std::vector<Mat> values;

    NodePairStore(Grid g, std::size_t band_) : grid(std::move(g)), band(band_) {
        const std::size_t n = grid.size();
        offset.resize(n + 1, 0);
        for (std::size_t k = 0; k < n; ++k) offset[k + 1] = offset[k] + std::min(band, n - 1 - k) + 1;
        values.resize(offset[n]);
    }
    std::size_t column_length(std::size_t k) const { return offset[k + 1] - offset[k]; }
    Mat& at(std::size_t j, std::size_t k) { return values[offset[k] + (j - k)]; }
    const Mat& at(std::size_t j, std::size_t k) const { return values[offset[k] + (j - k)]; }

    const Mat& lookup(double t, double s) const {
        const auto j = grid.index_of(t);
        const auto k = grid.index_of(s);
        if (!j || !k)
            throw InvalidInput("grid-backed family: evaluation between grid nodes is not supported (t = " +
                               std::to_string(t) + ", s = " + std::to_string(s) + ")");
        if (*j < *k) throw InvalidInput("grid-backed family: requires t >= s");
        if (*j - *k > band) throw InvalidInput("grid-backed family: pair beyond the stored span");
        return at(*j, *k);
    }
};

}  // namespace detail

/// Perturbed family U(t,s) = T(t,s) + int_s^t T(t,tau) B(tau) U(tau,s) dtau on
/// grid node pairs.
///
/// Marches the correction W = U - T forward in t with one implicit-trapezoid
/// step per inner interval, solved by a single corrector pass:
///   W_{n+1} = Phi W_n + h/2 (Phi B_n U_n + B_{n+1} U*_{n+1}),
/// Phi = T(tau_{n+1}, tau_n) and U* the explicit predictor. Columns (fixed s)
/// are independent. With B = 0 the stored values are the base samples.
inline EvolutionFamily volterra_family(const EvolutionFamily& base, const Perturbation& b, const Grid& grid,
                                       const VolterraOptions& opts = {}) {
    if (b.dim() != base.dim()) throw InvalidInput("volterra_family: dimension mismatch");
    if (opts.substeps == 0) throw InvalidInput("volterra_family: substeps must be positive");
    const std::size_t d = base.dim();
    const std::size_t m = opts.substeps;
    const double hf = grid.h() / static_cast<double>(m);
    const std::size_t n = grid.size();
    const std::size_t nf = (n - 1) * m + 1;
    const std::size_t band =
        std::isfinite(opts.max_span)
            ? std::min<std::size_t>(n - 1, static_cast<std::size_t>(std::floor(opts.max_span / grid.h() + 1e-9)))
            : n - 1;

    auto fine_node = [&](std::size_t i) { return grid.t_min() + static_cast<double>(i) * hf; };

    std::vector<Mat> bvals;
    std::vector<Mat> phi;
    if (!b.is_zero()) {
        bvals.resize(nf);
        phi.resize(nf - 1);
        for (std::size_t i = 0; i < nf; ++i) {
            bvals[i] = b(fine_node(i));
            if (!bvals[i].all_finite()) throw InvalidInput("volterra_family: non-finite perturbation sample");
            if (operator_norm(bvals[i]) * hf >= 0.5)
                throw ConfigurationError("volterra_family: step too large, ||B|| h >= 1/2 at t = " +
                                         std::to_string(fine_node(i)));
        }
        for (std::size_t i = 0; i + 1 < nf; ++i) phi[i] = base(fine_node(i + 1), fine_node(i));
    }

    auto store = std::make_shared<detail::NodePairStore>(grid, band);
    parallel_for(n, opts.workers, [&](std::size_t k) {
        const double s = grid.node(k);
        const std::size_t len = store->column_length(k);
        store->at(k, k) = base(s, s);
        if (b.is_zero()) {
            for (std::size_t j = k + 1; j < k + len; ++j) store->at(j, k) = base(grid.node(j), s);
            return;
        }
        Mat tprop = Mat::identity(d);  // T(tau_i, s) by cocycle
        Mat w(d, d);                    // U(tau_i, s) - T(tau_i, s)
        std::size_t i = k * m;
        for (std::size_t j = k + 1; j < k + len; ++j) {
            for (std::size_t sub = 0; sub < m; ++sub, ++i) {
                const Mat& ph = phi[i];
                Mat u = tprop + w;
                Mat bu = bvals[i] * u;
                Mat tnext = ph * tprop;
                // predictor: U* = T(tau_{i+1}, s) + Phi W + h Phi B_i U_i
                Mat carried = ph * w;
                Mat phbu = ph * bu;
                Mat upred = tnext + carried;
                upred.axpy(hf, phbu);
                Mat wnext = std::move(carried);
                wnext.axpy(0.5 * hf, phbu);
                wnext.axpy(0.5 * hf, bvals[i + 1] * upred);
                w = std::move(wnext);
                tprop = std::move(tnext);
            }
            Mat u = base(grid.node(j), s);
            u += w;
            store->at(j, k) = std::move(u);
        }
    });

    auto eval = [store](double t, double s) { return store->lookup(t, s); };
    EvolutionFamily f(base.dim(), Flavor::VolterraPerturbed, eval, {}, true);
    f.set_grid(grid);
    return f;
}

}  // namespace nedkit
