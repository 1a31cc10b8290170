#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <utility>

#include "nedkit/numerics.hpp"

namespace nedkit {

/// A continuous perturbation t -> B(t) with an optional closed-form norm
/// profile t -> ||B(t)|| and a support window outside of which it is not
/// evaluated.
class Perturbation {
public:
    using Evaluator = std::function<Mat(double)>;
    using Profile = std::function<double(double)>;

    Perturbation(std::size_t dim, Evaluator eval, Profile norm_profile = {},
                 double t_min = -std::numeric_limits<double>::infinity(),
                 double t_max = std::numeric_limits<double>::infinity(), bool zero = false)
        : dim_(dim), eval_(std::move(eval)), profile_(std::move(norm_profile)),
          t_min_(t_min), t_max_(t_max), zero_(zero) {
        if (dim == 0) throw InvalidInput("Perturbation: dimension must be positive");
        if (!eval_) throw InvalidInput("Perturbation: evaluator required");
    }

    static Perturbation zero(std::size_t dim) {
        return Perturbation(
            dim, [dim](double) { return Mat(dim, dim); }, [](double) { return 0.0; },
            -std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(), true);
    }

    /// B(t) = delta * e^{-decay |t|} * shape.
    static Perturbation scaled_exp(double delta, double decay, Mat shape) {
        if (!shape.is_square() || !shape.all_finite())
            throw InvalidInput("Perturbation::scaled_exp: shape must be a finite square matrix");
        if (!std::isfinite(delta) || !std::isfinite(decay))
            throw InvalidInput("Perturbation::scaled_exp: non-finite parameter");
        const std::size_t dim = shape.rows();
        const double shape_norm = operator_norm(shape);
        if (delta == 0.0 || shape_norm == 0.0) return zero(dim);
        auto eval = [=](double t) { return (delta * std::exp(-decay * std::abs(t))) * shape; };
        auto profile = [=](double t) { return std::abs(delta) * std::exp(-decay * std::abs(t)) * shape_norm; };
        return Perturbation(dim, eval, profile);
    }

    /// Piecewise-linear interpolation of tabulated matrices; support is the table window.
    static Perturbation table(GridFn<Mat> samples) {
        if (samples.values.empty() || !samples.values.front().is_square())
            throw InvalidInput("Perturbation::table: square matrices required");
        const std::size_t dim = samples.values.front().rows();
        for (const Mat& m : samples.values)
            if (m.rows() != dim || m.cols() != dim || !m.all_finite())
                throw InvalidInput("Perturbation::table: inconsistent or non-finite sample");
        auto data = std::make_shared<const GridFn<Mat>>(std::move(samples));
        const double lo = data->grid.t_min(), hi = data->grid.t_max();
        auto eval = [data](double t) {
            const Grid& g = data->grid;
            const double x = std::clamp((t - g.t_min()) / g.h(), 0.0, static_cast<double>(g.size() - 1));
            const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(x), g.size() - 2);
            const double th = x - static_cast<double>(k);
            Mat m = (1.0 - th) * data->values[k];
            m.axpy(th, data->values[k + 1]);
            return m;
        };
        return Perturbation(dim, eval, {}, lo, hi);
    }

    std::size_t dim() const noexcept { return dim_; }
    bool is_zero() const noexcept { return zero_; }
    bool has_profile() const noexcept { return static_cast<bool>(profile_); }
    double support_min() const noexcept { return t_min_; }
    double support_max() const noexcept { return t_max_; }
    bool in_support(double t) const noexcept { return t >= t_min_ - 1e-12 && t <= t_max_ + 1e-12; }

    Mat operator()(double t) const {
        if (!in_support(t)) throw InvalidInput("Perturbation: t = " + std::to_string(t) + " outside support window");
        return eval_(t);
    }

    /// ||B(t)||: the analytic profile when present, otherwise the spectral norm.
    double norm(double t) const {
        if (!in_support(t)) throw InvalidInput("Perturbation: t = " + std::to_string(t) + " outside support window");
        return profile_ ? profile_(t) : operator_norm(eval_(t));
    }

    /// lambda * B, lambda >= 0.
    Perturbation scaled(double lambda) const {
        if (!(lambda >= 0.0)) throw InvalidInput("Perturbation::scaled: factor must be nonnegative");
        if (zero_ || lambda == 0.0) return zero(dim_);
        auto ev = eval_;
        Profile pr;
        if (profile_) {
            auto p = profile_;
            pr = [p, lambda](double t) { return lambda * p(t); };
        }
        return Perturbation(dim_, [ev, lambda](double t) { return lambda * ev(t); }, pr, t_min_, t_max_);
    }

    /// Largest ||B(t_{k+1}) - B(t_k)|| / h over the grid nodes inside the support.
    double max_difference_quotient(const Grid& g) const {
        double q = 0.0;
        for (std::size_t k = 0; k + 1 < g.size(); ++k) {
            if (!in_support(g.node(k)) || !in_support(g.node(k + 1))) continue;
            q = std::max(q, operator_norm((*this)(g.node(k + 1)) - (*this)(g.node(k))) / g.h());
        }
        return q;
    }

private:
    std::size_t dim_;
    Evaluator eval_;
    Profile profile_;
    double t_min_;
    double t_max_;
    bool zero_ = false;
};

}  // namespace nedkit
