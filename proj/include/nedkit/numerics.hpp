#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <boost/container/small_vector.hpp>

#include "nedkit/error.hpp"

namespace nedkit {

using Vec = std::vector<double>;

/// Dense row-major matrix. Storage is inline up to 4x4, which covers the
/// hot loops of the planar examples without heap traffic.
class Mat {
public:
    Mat() = default;
    Mat(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), a_(rows * cols, fill) {}

    static Mat zeros(std::size_t rows, std::size_t cols) { return Mat(rows, cols); }
    static Mat identity(std::size_t n) {
        Mat m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }
    static Mat diag(std::span<const double> d) {
        Mat m(d.size(), d.size());
        for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
        return m;
    }
    static Mat diag(std::initializer_list<double> d) {
        return diag(std::span<const double>(d.begin(), d.size()));
    }
    static Mat from_rows(std::initializer_list<std::initializer_list<double>> rows) {
        const std::size_t r = rows.size();
        const std::size_t c = r ? rows.begin()->size() : 0;
        Mat m(r, c);
        std::size_t i = 0;
        for (const auto& row : rows) {
            if (row.size() != c) throw InvalidInput("Mat::from_rows: ragged rows");
            std::size_t j = 0;
            for (double v : row) m(i, j++) = v;
            ++i;
        }
        return m;
    }
    static Mat column(const Vec& v) {
        Mat m(v.size(), 1);
        for (std::size_t i = 0; i < v.size(); ++i) m(i, 0) = v[i];
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    bool is_square() const noexcept { return rows_ == cols_; }
    bool empty() const noexcept { return a_.empty(); }

    double& operator()(std::size_t i, std::size_t j) { return a_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return a_[i * cols_ + j]; }

    std::span<double> data() noexcept { return {a_.data(), a_.size()}; }
    std::span<const double> data() const noexcept { return {a_.data(), a_.size()}; }

    bool all_finite() const noexcept {
        return std::all_of(a_.begin(), a_.end(), [](double v) { return std::isfinite(v); });
    }
    double max_abs() const noexcept {
        double m = 0.0;
        for (double v : a_) m = std::max(m, std::abs(v));
        return m;
    }
    double trace() const noexcept {
        double s = 0.0;
        for (std::size_t i = 0; i < std::min(rows_, cols_); ++i) s += (*this)(i, i);
        return s;
    }

    Mat transpose() const {
        Mat t(cols_, rows_);
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
        return t;
    }
    Vec col(std::size_t j) const {
        Vec v(rows_);
        for (std::size_t i = 0; i < rows_; ++i) v[i] = (*this)(i, j);
        return v;
    }

    Mat& operator+=(const Mat& o) {
        check_same(o);
        for (std::size_t k = 0; k < a_.size(); ++k) a_[k] += o.a_[k];
        return *this;
    }
    Mat& operator-=(const Mat& o) {
        check_same(o);
        for (std::size_t k = 0; k < a_.size(); ++k) a_[k] -= o.a_[k];
        return *this;
    }
    Mat& operator*=(double s) noexcept {
        for (double& v : a_) v *= s;
        return *this;
    }
    /// this += s * o
    Mat& axpy(double s, const Mat& o) {
        check_same(o);
        for (std::size_t k = 0; k < a_.size(); ++k) a_[k] += s * o.a_[k];
        return *this;
    }

    friend bool operator==(const Mat& x, const Mat& y) {
        return x.rows_ == y.rows_ && x.cols_ == y.cols_ &&
               std::equal(x.a_.begin(), x.a_.end(), y.a_.begin());
    }

private:
    void check_same(const Mat& o) const {
        if (o.rows_ != rows_ || o.cols_ != cols_) throw InvalidInput("Mat: shape mismatch");
    }

    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    boost::container::small_vector<double, 16> a_;
};

inline Mat operator+(Mat a, const Mat& b) { return a += b; }
inline Mat operator-(Mat a, const Mat& b) { return a -= b; }
inline Mat operator-(Mat a) { return a *= -1.0; }
inline Mat operator*(double s, Mat a) { return a *= s; }
inline Mat operator*(Mat a, double s) { return a *= s; }

inline Mat operator*(const Mat& x, const Mat& y) {
    if (x.cols() != y.rows()) throw InvalidInput("Mat product: inner dimension mismatch");
    Mat r(x.rows(), y.cols());
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t k = 0; k < x.cols(); ++k) {
            const double xik = x(i, k);
            if (xik == 0.0) continue;
            for (std::size_t j = 0; j < y.cols(); ++j) r(i, j) += xik * y(k, j);
        }
    return r;
}

inline Vec operator*(const Mat& m, const Vec& v) {
    if (m.cols() != v.size()) throw InvalidInput("Mat-vector product: dimension mismatch");
    Vec r(m.rows(), 0.0);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < m.cols(); ++j) s += m(i, j) * v[j];
        r[i] = s;
    }
    return r;
}

// Vector helpers. Vec stays a plain std::vector; these cover what the
// integral operators need.

inline Vec& operator+=(Vec& a, const Vec& b) {
    if (a.size() != b.size()) throw InvalidInput("vector dimension mismatch");
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    return a;
}
inline Vec& operator-=(Vec& a, const Vec& b) {
    if (a.size() != b.size()) throw InvalidInput("vector dimension mismatch");
    for (std::size_t i = 0; i < a.size(); ++i) a[i] -= b[i];
    return a;
}
inline Vec operator+(Vec a, const Vec& b) {
    if (a.size() != b.size()) throw InvalidInput("Vec: size mismatch");
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    return a;
}
inline Vec operator-(Vec a, const Vec& b) {
    if (a.size() != b.size()) throw InvalidInput("Vec: size mismatch");
    for (std::size_t i = 0; i < a.size(); ++i) a[i] -= b[i];
    return a;
}
inline Vec operator*(double s, Vec a) {
    for (double& x : a) x *= s;
    return a;
}
inline Vec& axpy(Vec& y, double s, const Vec& x) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += s * x[i];
    return y;
}
inline Mat& axpy(Mat& y, double s, const Mat& x) { return y.axpy(s, x); }

inline double dot(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

/// Euclidean norm with scaling, safe for entries near the overflow range.
inline double norm2(std::span<const double> v) {
    double scale = 0.0;
    for (double x : v) scale = std::max(scale, std::abs(x));
    if (scale == 0.0 || !std::isfinite(scale)) return scale;
    double s = 0.0;
    for (double x : v) {
        const double r = x / scale;
        s += r * r;
    }
    return scale * std::sqrt(s);
}
inline double norm2(const Vec& v) { return norm2(std::span<const double>(v)); }

inline double frobenius(const Mat& m) { return norm2(m.data()); }

inline Vec zero_like(const Vec& v) { return Vec(v.size(), 0.0); }
inline Mat zero_like(const Mat& m) { return Mat(m.rows(), m.cols()); }

/// Spectral norm (largest singular value).
///
/// Uses the closed form for 2x2, and power iteration on M^T M otherwise
/// (relative tolerance 1e-12, at most 10'000 iterations). The matrix is
/// rescaled by its largest entry first, so results are valid for entries
/// across the whole double range.
inline double operator_norm(const Mat& m) {
    if (!m.all_finite()) throw InvalidInput("operator_norm: non-finite entry");
    const double scale = m.max_abs();
    if (scale == 0.0) return 0.0;
    if (m.rows() == 1 || m.cols() == 1) return norm2(m.data());
    if (m.rows() == 2 && m.cols() == 2) {
        const double a = m(0, 0) / scale, b = m(0, 1) / scale;
        const double c = m(1, 0) / scale, d = m(1, 1) / scale;
        const double s = a * a + b * b + c * c + d * d;
        const double det = a * d - b * c;
        const double disc = std::max(0.0, s * s - 4.0 * det * det);
        return scale * std::sqrt(0.5 * (s + std::sqrt(disc)));
    }
    Mat ms = m;
    ms *= 1.0 / scale;
    const Mat gram = ms.transpose() * ms;
    const std::size_t n = gram.rows();
    Vec v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = 1.0 + 0.3183098861837907 * static_cast<double>(i % 7);
    double lambda = 0.0;
    for (int it = 0; it < 10'000; ++it) {
        Vec w = gram * v;
        const double nw = norm2(w);
        if (nw == 0.0) {
            // Start vector in the null space; restart along a coordinate axis.
            std::fill(v.begin(), v.end(), 0.0);
            v[static_cast<std::size_t>(it) % n] = 1.0;
            continue;
        }
        const double next = dot(v, w) / dot(v, v);
        for (std::size_t i = 0; i < n; ++i) v[i] = w[i] / nw;
        if (it > 0 && std::abs(next - lambda) <= 1e-12 * std::abs(next)) {
            lambda = next;
            break;
        }
        lambda = next;
    }
    return scale * std::sqrt(std::max(lambda, 0.0));
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Eigenvalues are returned in descending order with matching columns.
struct SymmetricEigen {
    Vec values;
    Mat vectors;
};

inline SymmetricEigen symmetric_eigen(const Mat& s) {
    if (!s.is_square()) throw InvalidInput("symmetric_eigen: matrix not square");
    const std::size_t n = s.rows();
    const double scale = std::max(s.max_abs(), std::numeric_limits<double>::min());
    Mat a = s;
    a *= 1.0 / scale;
    Mat v = Mat::identity(n);
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
        if (off < 1e-30) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                if (a(p, q) == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                const double t = std::copysign(1.0, theta) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double sn = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - sn * akq;
                    a(k, q) = sn * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - sn * aqk;
                    a(q, k) = sn * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - sn * vkq;
                    v(k, q) = sn * vkp + c * vkq;
                }
            }
        }
    }
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });
    SymmetricEigen out{Vec(n), Mat(n, n)};
    for (std::size_t k = 0; k < n; ++k) {
        out.values[k] = a(order[k], order[k]) * scale;
        for (std::size_t i = 0; i < n; ++i) out.vectors(i, k) = v(i, order[k]);
    }
    return out;
}

/// Orthonormal basis of the column space (modified Gram-Schmidt with
/// re-orthogonalization). Columns whose residual falls below
/// rel_tol * (largest column norm) are dropped.
inline Mat orthonormal_basis(const Mat& a, double rel_tol = 1e-9) {
    double cmax = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) cmax = std::max(cmax, norm2(a.col(j)));
    std::vector<Vec> basis;
    if (cmax > 0.0) {
        for (std::size_t j = 0; j < a.cols(); ++j) {
            Vec v = a.col(j);
            for (int pass = 0; pass < 2; ++pass)
                for (const Vec& b : basis) axpy(v, -dot(b, v), b);
            const double nv = norm2(v);
            if (nv > rel_tol * cmax) basis.push_back((1.0 / nv) * v);
        }
    }
    Mat out(a.rows(), basis.size());
    for (std::size_t j = 0; j < basis.size(); ++j)
        for (std::size_t i = 0; i < a.rows(); ++i) out(i, j) = basis[j][i];
    return out;
}

/// Left inverse (R^{-1} Q^T from a thin QR) of a full-column-rank matrix.
/// Returns nullopt when the columns are numerically dependent.
inline std::optional<Mat> left_inverse(const Mat& m, double rel_tol = 1e-13) {
    const std::size_t rows = m.rows(), k = m.cols();
    Mat q(rows, k), r(k, k);
    double cmax = 0.0;
    for (std::size_t j = 0; j < k; ++j) cmax = std::max(cmax, norm2(m.col(j)));
    if (cmax == 0.0) return k == 0 ? std::optional<Mat>(Mat(0, rows)) : std::nullopt;
    for (std::size_t j = 0; j < k; ++j) {
        Vec v = m.col(j);
        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t i = 0; i < j; ++i) {
                double c = 0.0;
                for (std::size_t l = 0; l < rows; ++l) c += q(l, i) * v[l];
                r(i, j) += c;
                for (std::size_t l = 0; l < rows; ++l) v[l] -= c * q(l, i);
            }
        }
        const double nv = norm2(v);
        if (nv <= rel_tol * cmax) return std::nullopt;
        r(j, j) = nv;
        for (std::size_t l = 0; l < rows; ++l) q(l, j) = v[l] / nv;
    }
    // Solve R X = Q^T by back substitution.
    Mat qt = q.transpose();
    Mat x(k, rows);
    for (std::size_t c = 0; c < rows; ++c) {
        for (std::size_t ii = k; ii-- > 0;) {
            double s = qt(ii, c);
            for (std::size_t jj = ii + 1; jj < k; ++jj) s -= r(ii, jj) * x(jj, c);
            x(ii, c) = s / r(ii, ii);
        }
    }
    return x;
}

/// Uniform grid t_min + k*h, k = 0..n-1, with t_max a node.
class Grid {
public:
    Grid(double t_min, double t_max, double h) : t_min_(t_min), h_(h) {
        if (!std::isfinite(t_min) || !std::isfinite(t_max) || !std::isfinite(h))
            throw InvalidInput("Grid: non-finite bounds or step");
        if (!(h > 0.0)) throw InvalidInput("Grid: step must be positive");
        if (!(t_min < t_max)) throw InvalidInput("Grid: t_min must be less than t_max");
        const double steps = (t_max - t_min) / h;
        const double rounded = std::round(steps);
        if (std::abs(steps - rounded) > 1e-6 * std::max(1.0, steps))
            throw InvalidInput("Grid: (t_max - t_min) is not a multiple of h");
        n_ = static_cast<std::size_t>(rounded) + 1;
        if (n_ < 2) throw InvalidInput("Grid: fewer than two nodes");
    }

    std::size_t size() const noexcept { return n_; }
    double h() const noexcept { return h_; }
    double t_min() const noexcept { return t_min_; }
    double t_max() const noexcept { return node(n_ - 1); }
    double node(std::size_t k) const noexcept { return t_min_ + static_cast<double>(k) * h_; }
    Vec nodes() const {
        Vec t(n_);
        for (std::size_t k = 0; k < n_; ++k) t[k] = node(k);
        return t;
    }

    std::optional<std::size_t> index_of(double t) const noexcept {
        const double x = (t - t_min_) / h_;
        const double k = std::round(x);
        if (k < 0.0 || k > static_cast<double>(n_ - 1)) return std::nullopt;
        if (std::abs(x - k) > 1e-7) return std::nullopt;
        return static_cast<std::size_t>(k);
    }
    std::size_t require_index(double t) const {
        auto k = index_of(t);
        if (!k) throw InvalidInput("time " + std::to_string(t) + " is not a grid node");
        return *k;
    }
    bool contains(double t) const noexcept { return t >= t_min_ - 1e-12 && t <= t_max() + 1e-12; }

    /// Same window with step h / factor; node k of this grid is node k*factor there.
    Grid refined(std::size_t factor) const {
        if (factor == 0) throw InvalidInput("Grid::refined: factor must be positive");
        return Grid(t_min_, t_max(), h_ / static_cast<double>(factor));
    }

    /// Composite trapezoid weight of node k.
    double trapezoid_weight(std::size_t k) const noexcept {
        return (k == 0 || k + 1 == n_) ? 0.5 * h_ : h_;
    }

    friend bool operator==(const Grid& a, const Grid& b) {
        return a.n_ == b.n_ && a.t_min_ == b.t_min_ && a.h_ == b.h_;
    }

private:
    double t_min_;
    double h_;
    std::size_t n_ = 0;
};

/// Values sampled on the nodes of a grid.
template <class T>
struct GridFn {
    Grid grid;
    std::vector<T> values;

    GridFn(Grid g, std::vector<T> v) : grid(std::move(g)), values(std::move(v)) {
        if (values.size() != grid.size()) throw InvalidInput("GridFn: one value per node required");
    }
    template <class F>
    static GridFn sample(const Grid& g, F&& f) {
        std::vector<T> v;
        v.reserve(g.size());
        for (std::size_t k = 0; k < g.size(); ++k) v.push_back(f(g.node(k)));
        return GridFn(g, std::move(v));
    }
    std::size_t size() const noexcept { return values.size(); }
    const T& operator[](std::size_t k) const { return values[k]; }
};

using ScalarGridFn = GridFn<double>;

/// Composite trapezoid integral of a scalar grid function over the whole grid.
inline double trapezoid(const ScalarGridFn& f) {
    double s = 0.0;
    for (std::size_t k = 0; k < f.size(); ++k) s += f.grid.trapezoid_weight(k) * f[k];
    return s;
}

/// L^q norm by composite trapezoid on |f|^q.
inline double lq_norm(const ScalarGridFn& f, double q) {
    if (!(q >= 1.0)) throw InvalidInput("lq_norm: q must be >= 1");
    double s = 0.0;
    for (std::size_t k = 0; k < f.size(); ++k) s += f.grid.trapezoid_weight(k) * std::pow(std::abs(f[k]), q);
    return std::pow(s, 1.0 / q);
}

/// Value of the truncated convolution with e^{-alpha|t-s|} plus a bound on the
/// part of the integral lying outside the grid.
struct ConvValue {
    double value = 0.0;
    double tail_bound = 0.0;
};

namespace detail {

struct TailBands {
    double left_sup = 0.0;
    double right_sup = 0.0;
    bool left_monotone = true;   // b non-increasing towards the left edge across the band
    bool right_monotone = true;  // b non-increasing towards the right edge across the band
};

inline TailBands tail_bands(const ScalarGridFn& b) {
    const std::size_t n = b.size();
    const std::size_t band = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(0.1 * static_cast<double>(n - 1))));
    TailBands tb;
    for (std::size_t k = 0; k <= band && k < n; ++k) tb.left_sup = std::max(tb.left_sup, b[k]);
    for (std::size_t k = n - 1 - std::min(band, n - 1); k < n; ++k) tb.right_sup = std::max(tb.right_sup, b[k]);
    for (std::size_t k = 0; k < band && k + 1 < n; ++k)
        if (b[k] > b[k + 1] * (1.0 + 1e-12) + 1e-300) tb.left_monotone = false;
    for (std::size_t k = n - 1 - std::min(band, n - 1); k + 1 < n; ++k)
        if (b[k + 1] > b[k] * (1.0 + 1e-12) + 1e-300) tb.right_monotone = false;
    return tb;
}

inline double tail_at(const TailBands& tb, const Grid& g, double alpha, double t) {
    return (tb.left_sup * std::exp(-alpha * (t - g.t_min())) +
            tb.right_sup * std::exp(-alpha * (g.t_max() - t))) / alpha;
}

inline void check_conv_input(const ScalarGridFn& b, double alpha) {
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw InvalidInput("exp_conv: alpha must be positive");
    for (double v : b.values)
        if (!std::isfinite(v) || v < 0.0) throw InvalidInput("exp_conv: b must be finite and nonnegative");
}

}  // namespace detail

/// int e^{-alpha|t-s|} b(s) ds by composite trapezoid over the grid, with the
/// kink at s = t inserted as an extra node (b linearly interpolated there).
///
/// The tail bound assumes b beyond the grid does not exceed its supremum over
/// the outer 10% of the window on each side.
inline ConvValue exp_conv(const ScalarGridFn& b, double alpha, double t,
                          double tail_tol = std::numeric_limits<double>::infinity()) {
    detail::check_conv_input(b, alpha);
    const Grid& g = b.grid;
    if (!g.contains(t)) throw TailToleranceError("exp_conv: t outside the grid window");
    const std::size_t n = g.size();
    const double h = g.h();
    auto kernel = [&](double s) { return std::exp(-alpha * std::abs(t - s)); };

    // Locate the interval [t_k, t_{k+1}] holding t.
    const double x = std::clamp((t - g.t_min()) / h, 0.0, static_cast<double>(n - 1));
    std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(std::floor(x)), n - 2);
    const double theta = x - static_cast<double>(k);
    const double bt = (1.0 - theta) * b[k] + theta * b[k + 1];

    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j)
        sum += 0.5 * h * (kernel(g.node(j)) * b[j] + kernel(g.node(j + 1)) * b[j + 1]);
    const double left_len = t - g.node(k);
    const double right_len = g.node(k + 1) - t;
    sum += 0.5 * left_len * (kernel(g.node(k)) * b[k] + bt);
    sum += 0.5 * right_len * (bt + kernel(g.node(k + 1)) * b[k + 1]);
    for (std::size_t j = k + 1; j + 1 < n; ++j)
        sum += 0.5 * h * (kernel(g.node(j)) * b[j] + kernel(g.node(j + 1)) * b[j + 1]);

    const auto bands = detail::tail_bands(b);
    ConvValue out{sum, detail::tail_at(bands, g, alpha, t)};
    if (out.tail_bound > tail_tol)
        throw TailToleranceError("exp_conv: tail bound " + std::to_string(out.tail_bound) +
                                 " exceeds tolerance at t = " + std::to_string(t));
    return out;
}

/// exp_conv at every node in O(n) by two exponentially damped sweeps.
/// Node for node this is the same composite trapezoid as exp_conv.
inline std::vector<ConvValue> exp_conv_nodes(const ScalarGridFn& b, double alpha) {
    detail::check_conv_input(b, alpha);
    const Grid& g = b.grid;
    const std::size_t n = g.size();
    const double h = g.h();
    const double decay = std::exp(-alpha * h);
    Vec left(n, 0.0), right(n, 0.0);
    for (std::size_t k = 1; k < n; ++k) left[k] = decay * left[k - 1] + 0.5 * h * (decay * b[k - 1] + b[k]);
    for (std::size_t k = n - 1; k-- > 0;) right[k] = decay * right[k + 1] + 0.5 * h * (decay * b[k + 1] + b[k]);
    const auto bands = detail::tail_bands(b);
    std::vector<ConvValue> out(n);
    for (std::size_t k = 0; k < n; ++k)
        out[k] = {left[k] + right[k], detail::tail_at(bands, g, alpha, g.node(k))};
    return out;
}

/// True when the grid edges of b are non-increasing outward, i.e. the tail
/// bound of exp_conv is backed by the observed profile.
inline bool tail_bound_trusted(const ScalarGridFn& b) {
    const auto tb = detail::tail_bands(b);
    return tb.left_monotone && tb.right_monotone;
}

}  // namespace nedkit
