#include <gtest/gtest.h>

#include <nedkit/dichotomy.hpp>

#include <random>

#include "oracles.hpp"

using namespace nedkit;

namespace {

const ExampleParams kExample{3.0, 1.0};
const DichotomyConstants kExampleConstants{std::exp(2.0), 2.0, 2.0};

}  // namespace

TEST(ProjectionFamily, ConstructionChecks) {
    EXPECT_THROW(ProjectionFamily::constant(Mat::from_rows({{1, 1}, {0, 0.5}})), InvalidInput);
    EXPECT_THROW(ProjectionFamily::diagonal({1, 0.5}), InvalidInput);
    const auto p = ProjectionFamily::diagonal({1, 0});
    EXPECT_EQ(p.rank_at(0.0), 1u);
    EXPECT_EQ(p.complement(3.0), Mat::diag({0, 1}));
    EXPECT_EQ(p.validate(Grid(-1, 1, 0.5)), 1u);
    // oblique projection is fine
    EXPECT_NO_THROW(ProjectionFamily::constant(Mat::from_rows({{1, 1}, {0, 0}})));
}

TEST(ProjectionFamily, RankChangeDetected) {
    ProjectionFamily p(1, [](double t) { return Mat::diag({t < 0 ? 1.0 : 0.0}); });
    EXPECT_THROW(p.validate(Grid(-1, 1, 0.5)), InvalidInput);
}

TEST(UnstableBackward, ExampleClosedForm) {
    const auto f = example_family(kExample);
    const auto p = ProjectionFamily::diagonal({1, 0});
    for (auto [t, s] : {std::pair{-2.0, 1.0}, {0.0, 4.0}, {3.0, 3.0}}) {
        const Mat m = unstable_backward(f, p, t, s);
        const double want = std::exp(-oracle::example_exponent(3, 1, t, s));
        EXPECT_EQ(m(0, 0), 0.0);
        EXPECT_NEAR(m(1, 1), want, 1e-9 * want);
    }
}

TEST(UnstableBackward, LeastSquaresPathWithoutInverse) {
    // forward-only family: the kernel-restricted solve must reproduce the inverse
    const auto closed = example_family(kExample);
    EvolutionFamily fwd(2, Flavor::OdeDefined, [closed](double t, double s) { return closed(t, s); });
    const auto p = ProjectionFamily::diagonal({1, 0});
    const Mat a = unstable_backward(fwd, p, -1.0, 2.0);
    const Mat b = unstable_backward(closed, p, -1.0, 2.0);
    EXPECT_LT(operator_norm(a - b), 1e-12 * operator_norm(b));
}

TEST(UnstableBackward, NoBackwardEvaluator) {
    EvolutionFamily fwd(1, Flavor::OdeDefined, [](double t, double s) { return Mat::diag({std::exp(s - t)}); }, {},
                        false);
    EXPECT_THROW(split(fwd, ProjectionFamily::zero(1)), CapabilityError);
}

TEST(VerifyNed, ExampleCertified) {
    const Grid g(-10, 10, 0.2);
    const auto rep = verify_ned(example_family(kExample), ProjectionFamily::diagonal({1, 0}), kExampleConstants, g);
    EXPECT_TRUE(rep.pass());
    EXPECT_LE(rep.max_ratio_d1, 1.0 + 1e-9);
    EXPECT_LE(rep.max_ratio_d2, 1.0 + 1e-9);
    EXPECT_EQ(rep.invariance_max, 0.0);
    EXPECT_EQ(rep.pairs_checked, g.size() * (g.size() + 1) / 2);
}

TEST(VerifyNed, ExampleBoundIsAttained) {
    // the constants are not wildly loose on the window
    const Grid g(-20, 20, 0.1);
    const auto rep = verify_ned(example_family(kExample), ProjectionFamily::diagonal({1, 0}), kExampleConstants, g);
    EXPECT_GT(std::max(rep.max_ratio_d1, rep.max_ratio_d2), 0.1);
    EXPECT_TRUE(rep.pass());
}

TEST(VerifyNed, WrongRateFailsWithWitness) {
    const Grid g(-10, 10, 0.2);
    const auto rep = verify_ned(example_family(kExample), ProjectionFamily::diagonal({1, 0}),
                                {std::exp(2.0), 4.0, 2.0}, g);
    EXPECT_FALSE(rep.pass());
    const double worst = std::max(rep.max_ratio_d1, rep.max_ratio_d2);
    EXPECT_GT(worst, 1.0);
    // witness reproduces the ratio
    const bool d1 = rep.max_ratio_d1 >= rep.max_ratio_d2;
    const double t = d1 ? rep.witness_d1_t : rep.witness_d2_t, s = d1 ? rep.witness_d1_s : rep.witness_d2_s;
    const double rho = oracle::example_exponent(3, 1, std::max(t, s), std::min(t, s));
    const double lhs = std::exp(rho);  // both branches have norm e^{rho(later, earlier)}
    EXPECT_NEAR(lhs / (std::exp(2.0) * std::exp(-4.0 * std::abs(t - s) + 2.0 * std::abs(s))), worst, 1e-6 * worst);
}

TEST(VerifyNed, UniformScalarRatioIsOne) {
    const auto rep = verify_ned(exponential_family({-1.0}), ProjectionFamily::identity(1), {1.0, 1.0, 0.0},
                                Grid(0, 5, 0.5));
    EXPECT_NEAR(rep.max_ratio_d1, 1.0, 1e-14);
    EXPECT_EQ(rep.max_ratio_d2, 0.0);
}

TEST(VerifyNed, NonInvariantProjectionFails) {
    // P = [[1,1],[0,0]] does not commute with diag(e^{-t}, e^{t})
    const auto f = exponential_family({-1.0, 1.0});
    const auto p = ProjectionFamily::constant(Mat::from_rows({{1, 1}, {0, 0}}));
    const auto rep = verify_ned(f, p, {10.0, 1.0, 0.0}, Grid(0, 2, 0.5));
    EXPECT_GT(rep.invariance_max, 1e-3);
    EXPECT_FALSE(rep.pass());
}

TEST(SamplePairs, DenseAndSparse) {
    const Grid small(0, 1, 0.1);
    EXPECT_EQ(sample_pairs(small).size(), 11u * 12u / 2u);
    const Grid big(-60, 60, 0.1);  // 1201 nodes: above the dense limit
    PairSampling ps;
    ps.full_gap = 2.0;
    const auto a = sample_pairs(big, ps), b = sample_pairs(big, ps);
    EXPECT_EQ(a, b);
    std::size_t short_pairs = 0;
    for (auto [j, k] : a) {
        ASSERT_GE(j, k);
        short_pairs += big.node(j) - big.node(k) <= 2.0 + 1e-12;
    }
    // every short pair is present: 21 gaps per start, truncated near the right edge
    std::size_t expect = 0;
    for (std::size_t k = 0; k < big.size(); ++k) expect += std::min<std::size_t>(21, big.size() - k);
    EXPECT_EQ(short_pairs, expect);
    EXPECT_LT(a.size(), big.size() * (big.size() + 1) / 2);
}

TEST(FitConstants, RecoversSyntheticEnvelope) {
    // samples lying exactly on log K0 - alpha0 gap + eps0 |s| over a 2-d spread of (gap, |s|)
    const double K0 = 3.0, a0 = 1.5, e0 = 0.25;
    std::vector<BoundSample> samples;
    for (int i = 0; i <= 10; ++i)
        for (int j = 0; j <= 10; ++j) samples.push_back({std::log(K0) - a0 * i * 0.4 + e0 * j * 0.7, i * 0.4, j * 0.7});
    FitOptions opts;
    opts.alpha_max = 5.0;  // alpha0 = 1.5 is sweep node 60 of 200
    const auto fit = fit_constants_from_samples(samples, opts);
    EXPECT_NEAR(fit.constants.alpha, a0, 1e-12);
    EXPECT_NEAR(fit.constants.epsilon, e0, 1e-9);
    EXPECT_NEAR(fit.constants.K, K0, 1e-9);
    EXPECT_FALSE(fit.K_below_one);
}

TEST(FitConstants, FeasibleAndNoWorseThanBruteForce) {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<BoundSample> samples;
    for (int i = 0; i < 300; ++i) {
        const double gap = 5 * u(rng), s = 5 * u(rng);
        samples.push_back({0.3 - 1.2 * gap + 0.4 * s - 2.0 * u(rng), gap, s});
    }
    FitOptions opts;
    opts.alpha_max = 4.0;
    opts.alpha_count = 40;
    const auto fit = fit_constants_from_samples(samples, opts);
    const auto& c = fit.constants;
    for (const auto& s : samples) EXPECT_LE(s.log_norm, std::log(c.K) - c.alpha * s.gap + c.epsilon * s.abs_s + 1e-12);
    // brute force over the same alpha nodes and a fine eps grid
    double mg = 0, ms = 0;
    for (const auto& s : samples) mg += s.gap, ms += s.abs_s;
    mg /= samples.size();
    ms /= samples.size();
    double best = std::numeric_limits<double>::infinity();
    for (int ia = 1; ia <= 40; ++ia) {
        const double a = 4.0 * ia / 40;
        for (int ie = 0; ie <= 2000; ++ie) {
            const double e = ie * 0.001;
            double lk = -1e300;
            for (const auto& s : samples) lk = std::max(lk, s.log_norm + a * s.gap - e * s.abs_s);
            best = std::min(best, lk - a * mg + e * ms);
        }
    }
    EXPECT_LE(fit.objective, best + 1e-12);
    EXPECT_GT(fit.objective, best - 1e-3);
}

TEST(FitConstants, CertifiesTheExample) {
    const Grid g(-8, 8, 0.2);
    const auto f = example_family(kExample);
    const auto p = ProjectionFamily::diagonal({1, 0});
    FitOptions opts;
    opts.alpha_max = 4.0;
    const auto fit = fit_constants(f, p, g, opts);
    const auto rep = verify_ned(f, p, fit.constants, g);
    EXPECT_LE(std::max(rep.max_ratio_d1, rep.max_ratio_d2), 1.0 + 1e-9);
}

TEST(FitConstants, FlagsKBelowOneAndRejectsDegenerateInput) {
    std::vector<BoundSample> small{{-3, 0, 0}, {-3.5, 1, 0}, {-3, 0, 1}, {-4, 1, 1}};
    FitOptions opts;
    opts.alpha_max = 1.0;
    EXPECT_TRUE(fit_constants_from_samples(small, opts).K_below_one);
    EXPECT_THROW(fit_constants_from_samples(std::vector<BoundSample>{{0, 0, 0}}, opts), FittingError);
    opts.alpha_max = 0.0;
    EXPECT_THROW(fit_constants_from_samples(small, opts), FittingError);
}

TEST(MinimizeEnvelope, PiecewiseLinear) {
    // F(e) = max(2 - 2e, 1 - 0.5 e, 0) + 1 e: minimum at the kink of the first two, e = 2/3
    const std::vector<detail::Line> lines{{2.0, 2.0}, {0.5, 1.0}, {0.0, 0.0}};
    EXPECT_NEAR(detail::minimize_envelope(lines, 1.0), 2.0 / 3.0, 1e-15);
    EXPECT_EQ(detail::minimize_envelope(lines, 3.0), 0.0);
}
