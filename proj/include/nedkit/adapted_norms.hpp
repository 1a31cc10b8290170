#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "nedkit/dichotomy.hpp"
#include "nedkit/evolution.hpp"
#include "nedkit/numerics.hpp"

namespace nedkit {

/// Everything needed to evaluate the adapted norm ||v||_t on the nodes of a
/// global grid. All suprema range over this one grid.
///
/// For grids up to `cache_limit` nodes the projected operators
/// T(t_j, t_k) P(t_k) (j >= k) and T(t_j, t_k) Q(t_k) (j <= k) are tabulated once.
class AdaptedNormCtx {
public:
    AdaptedNormCtx(EvolutionFamily family, ProjectionFamily proj, DichotomyConstants consts, Grid grid,
                   std::size_t cache_limit = 600)
        : family_(std::move(family)), proj_(std::move(proj)), consts_(consts), grid_(std::move(grid)) {
        consts_.validate();
        if (family_.dim() != proj_.dim()) throw InvalidInput("AdaptedNormCtx: dimension mismatch");
        rank_ = proj_.validate(grid_);
        const std::size_t n = grid_.size();
        p_.reserve(n);
        for (std::size_t k = 0; k < n; ++k) p_.push_back(proj_(grid_.node(k)));
        if (n <= cache_limit) build_cache();
    }

    const EvolutionFamily& family() const noexcept { return family_; }
    const ProjectionFamily& projection() const noexcept { return proj_; }
    const DichotomyConstants& constants() const noexcept { return consts_; }
    const Grid& grid() const noexcept { return grid_; }
    std::size_t dim() const noexcept { return family_.dim(); }
    std::size_t rank() const noexcept { return rank_; }
    /// P = Id or P = 0 on the grid; then the sandwich constant 2K improves to K.
    bool rank_degenerate() const noexcept { return rank_ == 0 || rank_ == dim(); }

    std::size_t index(double t) const { return grid_.require_index(t); }
    const Mat& P(std::size_t k) const { return p_[k]; }
    Mat Q(std::size_t k) const { return Mat::identity(dim()) - p_[k]; }

    /// T(t_j, t_k) P(t_k), j >= k.
    Mat stable_op(std::size_t k, std::size_t j) const {
        if (j < k) throw InvalidInput("stable_op: requires j >= k");
        if (cached_) return load(k, j);
        return family_(grid_.node(j), grid_.node(k)) * p_[k];
    }
    /// T(t_j, t_k) Q(t_k), j <= k.
    Mat unstable_op(std::size_t k, std::size_t j) const {
        if (j > k) throw InvalidInput("unstable_op: requires j <= k");
        if (cached_) return load_unstable(k, j);
        return unstable_backward(family_, proj_, grid_.node(j), grid_.node(k));
    }

private:
    void build_cache() {
        const std::size_t n = grid_.size(), d = dim();
        table_.assign(n * n * d * d, 0.0);
        diag_q_.assign(n * d * d, 0.0);
        for (std::size_t k = 0; k < n; ++k) {
            for (std::size_t j = 0; j < n; ++j) {
                const Mat m = j >= k ? family_(grid_.node(j), grid_.node(k)) * p_[k]
                                     : unstable_backward(family_, proj_, grid_.node(j), grid_.node(k));
                std::copy(m.data().begin(), m.data().end(), table_.begin() + static_cast<std::ptrdiff_t>((k * n + j) * d * d));
            }
            const Mat q = Q(k);
            std::copy(q.data().begin(), q.data().end(), diag_q_.begin() + static_cast<std::ptrdiff_t>(k * d * d));
        }
        cached_ = true;
    }
    Mat load(std::size_t k, std::size_t j) const {
        const std::size_t d = dim(), n = grid_.size();
        Mat m(d, d);
        std::copy_n(table_.begin() + static_cast<std::ptrdiff_t>((k * n + j) * d * d), d * d, m.data().begin());
        return m;
    }
    Mat load_unstable(std::size_t k, std::size_t j) const {
        if (j != k) return load(k, j);
        const std::size_t d = dim();
        Mat m(d, d);
        std::copy_n(diag_q_.begin() + static_cast<std::ptrdiff_t>(k * d * d), d * d, m.data().begin());
        return m;
    }

    EvolutionFamily family_;
    ProjectionFamily proj_;
    DichotomyConstants consts_;
    Grid grid_;
    std::size_t rank_ = 0;
    std::vector<Mat> p_;
    bool cached_ = false;
    std::vector<double> table_;
    std::vector<double> diag_q_;
};

struct NormParts {
    double stable = 0.0;
    double unstable = 0.0;
    double total() const noexcept { return stable + unstable; }
};

/// The two suprema of the adapted norm at node k:
///   sup_{t_j >= t_k} ||T(t_j,t_k) P(t_k) v|| e^{alpha (t_j - t_k)}
///   sup_{t_j <= t_k} ||T(t_j,t_k) Q(t_k) v|| e^{alpha (t_k - t_j)}
inline NormParts lyap_norm_parts_at(const AdaptedNormCtx& ctx, const Vec& v, std::size_t k) {
    if (v.size() != ctx.dim()) throw InvalidInput("lyap_norm: vector dimension mismatch");
    const Grid& g = ctx.grid();
    const double alpha = ctx.constants().alpha;
    const Vec pv = ctx.P(k) * v;
    const Vec qv = v - pv;
    NormParts out;
    if (norm2(pv) > 0.0)
        for (std::size_t j = k; j < g.size(); ++j)
            out.stable = std::max(out.stable, norm2(ctx.stable_op(k, j) * pv) * std::exp(alpha * (g.node(j) - g.node(k))));
    if (norm2(qv) > 0.0)
        for (std::size_t j = 0; j <= k; ++j)
            out.unstable = std::max(out.unstable, norm2(ctx.unstable_op(k, j) * qv) * std::exp(alpha * (g.node(k) - g.node(j))));
    return out;
}

inline NormParts lyap_norm_parts(const AdaptedNormCtx& ctx, const Vec& v, double t) {
    return lyap_norm_parts_at(ctx, v, ctx.index(t));
}

/// ||v||_t on the grid; t must be a node.
inline double lyap_norm(const AdaptedNormCtx& ctx, const Vec& v, double t) {
    return lyap_norm_parts(ctx, v, t).total();
}

struct NormSampleQuery {
    Vec v;
    double t;
};

struct SandwichReport {
    double factor = 2.0;               ///< c in ||v||_t <= c K e^{eps|t|} ||v||
    double worst_lower_margin = 0.0;   ///< min over samples of (||v||_t - ||v||) / ||v||
    double worst_upper_margin = 0.0;   ///< max over samples of (||v||_t - c K e^{eps|t|} ||v||) / (c K e^{eps|t|} ||v||)
    std::size_t violations = 0;
    std::size_t checked = 0;
    bool pass() const noexcept { return violations == 0; }
};

/// ||v|| <= ||v||_t <= c K e^{eps|t|} ||v||, c = 1 when P = Id or P = 0 on the grid, else 2.
/// Relative slack 1e-12 on both sides absorbs rounding.
inline SandwichReport check_norm_sandwich(const AdaptedNormCtx& ctx, const std::vector<NormSampleQuery>& samples) {
    SandwichReport rep;
    rep.factor = ctx.rank_degenerate() ? 1.0 : 2.0;
    rep.worst_lower_margin = std::numeric_limits<double>::infinity();
    rep.worst_upper_margin = -std::numeric_limits<double>::infinity();
    const auto& c = ctx.constants();
    for (const auto& smp : samples) {
        const double base = norm2(smp.v);
        const double adapted = lyap_norm(ctx, smp.v, smp.t);
        const double upper = rep.factor * c.K * std::exp(c.epsilon * std::abs(smp.t)) * base;
        ++rep.checked;
        if (base == 0.0) {
            if (adapted != 0.0) ++rep.violations;
            rep.worst_lower_margin = std::min(rep.worst_lower_margin, 0.0);
            rep.worst_upper_margin = std::max(rep.worst_upper_margin, 0.0);
            continue;
        }
        const double lower_margin = (adapted - base) / base;
        const double upper_margin = (adapted - upper) / upper;
        rep.worst_lower_margin = std::min(rep.worst_lower_margin, lower_margin);
        rep.worst_upper_margin = std::max(rep.worst_upper_margin, upper_margin);
        if (lower_margin < -1e-12 || upper_margin > 1e-12) ++rep.violations;
    }
    if (rep.checked == 0) rep.worst_lower_margin = rep.worst_upper_margin = 0.0;
    return rep;
}

/// Margins of the projected contraction properties of the adapted norms.
///   stable   (t >= s): ||T(t,s)P(s)v||_t - e^{-alpha(t-s)} ||v||_s
///   unstable (t <= s): ||T(t,s)Q(s)v||_t - e^{-alpha(s-t)} ||v||_s
/// `scale` is e^{-alpha|t-s|} ||v||_s, the natural yardstick for rounding.
struct ContractionMargins {
    std::optional<double> stable;
    std::optional<double> unstable;
    double scale = 0.0;
};

inline ContractionMargins check_projected_contraction(const AdaptedNormCtx& ctx, double t, double s, const Vec& v) {
    const std::size_t ti = ctx.index(t), si = ctx.index(s);
    const double alpha = ctx.constants().alpha;
    const double vs = lyap_norm_parts_at(ctx, v, si).total();
    ContractionMargins out;
    out.scale = std::exp(-alpha * std::abs(t - s)) * vs;
    if (ti >= si) {
        const Vec w = ctx.stable_op(si, ti) * v;
        out.stable = lyap_norm_parts_at(ctx, w, ti).total() - out.scale;
    }
    if (ti <= si) {
        const Vec w = ctx.unstable_op(si, ti) * v;
        out.unstable = lyap_norm_parts_at(ctx, w, ti).total() - out.scale;
    }
    return out;
}

}  // namespace nedkit
