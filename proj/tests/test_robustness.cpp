#include <gtest/gtest.h>

#include <nedkit/robustness.hpp>

#include <random>
#include <sstream>

#include "oracles.hpp"

using namespace nedkit;

namespace {

const DichotomyConstants kExampleConstants{std::exp(2.0), 2.0, 2.0};
const Mat kSwap = Mat::from_rows({{0, 1}, {1, 0}});

/// ||B(t)|| = delta e^{-lambda|t - c|}, scalar.
Perturbation bump(double delta, double lambda, double c) {
    return Perturbation(
        1, [=](double t) { return Mat::diag({delta * std::exp(-lambda * std::abs(t - c))}); },
        [=](double t) { return delta * std::exp(-lambda * std::abs(t - c)); });
}

}  // namespace

TEST(BoundFunction, WeightsTheNorm) {
    const auto b = Perturbation::scaled_exp(0.01, 2.0, kSwap);
    for (double t : {-3.0, 0.0, 1.7}) EXPECT_NEAR(bound_function(b, 2.0, t), 0.01, 1e-15);
    EXPECT_NEAR(bound_function(b, 0.0, 1.0), 0.01 * std::exp(-2.0), 1e-15);
}

TEST(ComputeQ, AnalyticConstantProfile) {
    // b = delta: q = 2K delta int e^{-alpha|s|} ds = 4 K delta / alpha
    const Grid window(-40, 40, 0.01);
    for (double delta : {0.001, 0.01, 0.1}) {
        const auto r = compute_q(Perturbation::scaled_exp(delta, 2.0, kSwap), kExampleConstants, window);
        EXPECT_NEAR(r.q, 2 * std::exp(2.0) * delta, 1e-4) << delta;
        EXPECT_EQ(r.argmax_t, 0.0);
        EXPECT_TRUE(r.tail_trusted);
    }
}

TEST(ComputeQ, AnalyticOffCentreAndZero) {
    const DichotomyConstants c{1.0, 1.0, 0.0};
    const auto r = compute_q(bump(0.1, 3.0, 2.0), c, Grid(-30, 30, 0.005));
    // int e^{-|t-s|} e^{-3|s-2|} ds is maximal at t = 2: 2/(1+3) * 0.1 * 2K
    EXPECT_NEAR(r.q, 2 * 0.1 * (2.0 / 4.0), 1e-5);
    EXPECT_NEAR(r.argmax_t, 2.0, 1e-9);
    EXPECT_EQ(compute_q(Perturbation::zero(2), kExampleConstants, Grid(-1, 1, 0.1)).q, 0.0);
}

TEST(ComputeQ, LinearInTheScale) {
    const Grid window(-30, 30, 0.02);
    const auto b = bump(0.05, 3.0, -1.0);  // decays faster than e^{2|t|} grows
    const double q = compute_q(b, kExampleConstants, window).q;
    for (double lambda : {0.1, 2.0, 7.5})
        EXPECT_NEAR(compute_q(b.scaled(lambda), kExampleConstants, window).q, lambda * q, 1e-13 * lambda * q);
}

TEST(ComputeQ, TailErrors) {
    // b grows with |t|: every node's tail is large
    const auto b = Perturbation::scaled_exp(0.01, 0.0, kSwap);  // ||B|| e^{2|t|} grows
    EXPECT_THROW(compute_q(b, kExampleConstants, Grid(-10, 10, 0.1)), TailToleranceError);
    // flat b on a window too small for the tolerance
    EXPECT_THROW(compute_q(Perturbation::scaled_exp(0.01, 2.0, kSwap), kExampleConstants, Grid(-5, 5, 0.1)),
                 TailToleranceError);
}

TEST(ComputeQ, RelaxedIsHalfForTrivialSplittings) {
    std::mt19937_64 rng(61);
    std::uniform_real_distribution<double> u(0, 1);
    const Grid window(-30, 30, 0.02);
    for (int i = 0; i < 50; ++i) {
        const DichotomyConstants c{1 + 4 * u(rng), 0.5 + 2 * u(rng), 0.3 * u(rng)};
        const auto b = bump(0.1 * u(rng), c.epsilon + 0.5 + u(rng), -3 + 6 * u(rng));
        const auto p = u(rng) < 0.5 ? ProjectionFamily::identity(1) : ProjectionFamily::zero(1);
        const double q = compute_q(b, c, window).q;
        EXPECT_NEAR(compute_q_relaxed(b, c, window, p).q, 0.5 * q, 1e-15 * q);
    }
    EXPECT_THROW(compute_q_relaxed(Perturbation::scaled_exp(0.01, 2.0, kSwap), kExampleConstants, Grid(-40, 40, 0.1),
                                   ProjectionFamily::diagonal({1, 0})),
                 PreconditionError);
}

TEST(Young, WorkedArithmetic) {
    // (2/2) (2 e^2)^2 0.05^2 = 0.01 e^4
    const YoungParams yp{2.0, 2.0, 0.05};
    EXPECT_DOUBLE_EQ(young_lhs(yp, kExampleConstants), 0.01 * std::exp(4.0));
    EXPECT_NEAR(young_lhs(yp, kExampleConstants), 0.546, 5e-4);
    EXPECT_TRUE(young_sufficient(yp, kExampleConstants));
    const YoungParams big{2.0, 2.0, 10.0};
    EXPECT_DOUBLE_EQ(young_lhs(big, kExampleConstants), 400 * std::exp(4.0));
    EXPECT_NEAR(young_lhs(big, kExampleConstants), 2.18e4, 50.0);  // quoted to three figures
    EXPECT_FALSE(young_sufficient(big, kExampleConstants));
    EXPECT_EQ(young_lhs({2.0, 2.0, 0.0}, kExampleConstants), 0.0);
    EXPECT_THROW(young_lhs({3.0, 2.0, 0.1}, kExampleConstants), InvalidInput);
    EXPECT_THROW(young_lhs({1.0, 2.0, 0.1}, kExampleConstants), InvalidInput);
}

TEST(Young, ThresholdSeparates) {
    const DichotomyConstants c{3.0, 1.5, 0.2};
    for (double p : {1.5, 2.0, 4.0}) {
        const double th = young_threshold(p, c);
        const double q = p / (p - 1);
        EXPECT_TRUE(young_sufficient({p, q, th * (1 - 1e-9)}, c));
        EXPECT_FALSE(young_sufficient({p, q, th * (1 + 1e-9)}, c));
    }
}

TEST(Young, ImpliesQBelowOne) {
    std::mt19937_64 rng(67);
    std::uniform_real_distribution<double> u(0, 1);
    const Grid window(-40, 40, 0.02);
    for (int i = 0; i < 20; ++i) {
        const DichotomyConstants c{1 + 9 * u(rng), 0.5 + 4.5 * u(rng), 0.0};
        const auto unit = bump(1.0, 1.0 + 3 * u(rng), -5 + 10 * u(rng));
        const double norm = lq_norm(sample_weighted_norm(unit, c.epsilon, window), 2.0);
        const double delta = young_threshold(2.0, c) / norm * (0.05 + 0.94 * u(rng));
        const auto b = unit.scaled(delta);
        const YoungParams yp{2.0, 2.0, lq_norm(sample_weighted_norm(b, c.epsilon, window), 2.0)};
        ASSERT_EQ(young_verdict(yp, c, sample_weighted_norm(b, c.epsilon, window)), Tri::Yes);
        EXPECT_LT(compute_q(b, c, window).q, 1.0);
    }
}

TEST(Young, UnknownWhenProfileDoesNotDecay) {
    const Grid window(-40, 40, 0.1);
    const auto b = Perturbation::scaled_exp(0.01, 2.0, kSwap);
    const auto bf = sample_weighted_norm(b, 2.0, window);
    EXPECT_EQ(young_verdict({2.0, 2.0, lq_norm(bf, 2.0)}, kExampleConstants, bf), Tri::Unknown);
}

TEST(Ppx, SplitAndConditionA) {
    EXPECT_THROW(ppx_conditions(kExampleConstants, {1.0, 0.5}, Perturbation::zero(2), Grid(-1, 1, 0.1)), InvalidInput);
    const auto r = ppx_conditions(kExampleConstants, {0.5, 1.5}, Perturbation::zero(2), Grid(-1, 1, 0.1));
    EXPECT_TRUE(r.a);  // 2 < 3
    EXPECT_EQ(r.b, Tri::Yes);
    EXPECT_FALSE(ppx_conditions(kExampleConstants, {1.5, 0.5}, Perturbation::zero(2), Grid(-1, 1, 0.1)).a);  // 2 < 1 fails
    EXPECT_NEAR(r.b_bound, 1 / (std::exp(2.0) + 1), 1e-15);
}

TEST(Ppx, ExampleFailsBecauseBbarGrows) {
    // bbar = 0.01 e^{-2|t|} e^{4|t|} is unbounded: the truncated integral already exceeds 1/(K+1)
    const auto r = ppx_conditions(kExampleConstants, {0.5, 1.5}, Perturbation::scaled_exp(0.01, 2.0, kSwap),
                                  Grid(-40, 40, 0.1));
    EXPECT_EQ(r.b, Tri::No);
    EXPECT_GT(r.b_value, r.b_bound);
}

TEST(Ppx, DecayingProfileIntegralValue) {
    // eps = 0: bbar = b = delta e^{-3|t|}; sup_t K int e^{-|t-s|} delta e^{-3|s|} ds = K delta 2/(1+3)
    const DichotomyConstants c{2.0, 2.0, 0.0};
    const Grid window(-30, 30, 0.005);
    const auto small = ppx_conditions(c, {1.0, 1.0}, bump(0.1, 3.0, 0.0), window);
    EXPECT_NEAR(small.b_value, 2.0 * 0.1 * 0.5, 1e-5);
    EXPECT_EQ(small.b, Tri::Yes);  // 0.1 <= 1/3
    EXPECT_EQ(ppx_conditions(c, {1.0, 1.0}, bump(1.0, 3.0, 0.0), window).b, Tri::No);  // 1 > 1/3
}

TEST(Ppx, YoungForm) {
    // (2/2) K^2 (K+1)^2 ||bbar||^2 < alpha1 with K = 1: 4 x^2 < alpha1
    const DichotomyConstants c{1.0, 2.0, 0.0};
    EXPECT_TRUE(ppx_young({2.0, 2.0, 0.3}, c, {0.5, 1.5}));   // 0.36 < 0.5
    EXPECT_FALSE(ppx_young({2.0, 2.0, 0.4}, c, {0.5, 1.5}));  // 0.64 > 0.5
}

TEST(Implication, Rob2ImpliesRobOnRandomInstances) {
    StudyOptions o;
    o.instances = 30;
    o.seed = 5;
    o.h = 0.05;
    const auto rep = implication_study(o);
    EXPECT_EQ(rep.rows.size(), 31u);
    EXPECT_EQ(rep.counterexamples, 0u);
    EXPECT_GE(rep.witnesses, 1u);
    EXPECT_GT(rep.rob2_pass, 0u);  // the sampling straddles the threshold
    for (const auto& row : rep.rows)
        if (row.ppx.b == Tri::Yes) {
            // the chain of inequalities behind the implication: q <= 2 K int e^{-alpha1} bbar <= 2/(K+1)
            EXPECT_LE(row.rob.q, 2.0 * row.ppx.b_value * (1 + 1e-12));
            EXPECT_LT(row.rob.q, 2.0 / (row.instance.c.K + 1.0) + 1e-12);
        }
}

TEST(Implication, WitnessSeparatesConditions) {
    ComparisonInstance w;
    w.c = {std::exp(2.0), 2.0, 0.5};
    w.split = {1.0, 1.0};
    w.lambda = 2.0;
    const Grid window(-30, 30, 0.02);
    const auto built = strictness_witness(w, window);
    EXPECT_TRUE(built.constructed);
    const auto row = evaluate_instance(built, window);
    EXPECT_EQ(row.rob.verdict, Tri::Yes);
    EXPECT_EQ(row.ppx.b, Tri::No);
}

TEST(Implication, DeterministicCsv) {
    StudyOptions o;
    o.instances = 5;
    o.seed = 9;
    o.h = 0.05;
    std::ostringstream a, b;
    write_implication_csv(a, implication_study(o));
    write_implication_csv(b, implication_study(o));
    EXPECT_EQ(a.str(), b.str());
    EXPECT_EQ(a.str().substr(0, 6), "index,");
}

TEST(Pipeline, DeclinesAboveOne) {
    const auto rep = robustness_pipeline(example_family({3.0, 1.0}), ProjectionFamily::diagonal({1, 0}),
                                         kExampleConstants, Perturbation::scaled_exp(0.1, 2.0, kSwap), Grid(-20, 20, 0.1));
    EXPECT_EQ(rep.verdict, Verdict::Declined);
    EXPECT_NEAR(rep.q.q, 2 * std::exp(2.0) * 0.1, 1e-3);
    std::ostringstream os;
    write_report(os, rep);
    EXPECT_NE(os.str().find("verdict = declined"), std::string::npos);
}

TEST(Pipeline, SmallWindowPasses) {
    PipelineOptions o;
    o.decay_horizon = 4.0;
    o.ode_span = 4.0;
    o.ode_pairs = 20;
    o.split = PpxSplit{0.5, 1.5};
    o.young = YoungParams{2.0, 2.0, 0.0};
    const auto rep = robustness_pipeline(example_family({3.0, 1.0}), ProjectionFamily::diagonal({1, 0}),
                                         kExampleConstants, Perturbation::scaled_exp(0.01, 2.0, kSwap), Grid(-6, 6, 0.1), o);
    EXPECT_EQ(rep.verdict, Verdict::Pass) << (rep.failures.empty() ? "" : rep.failures.front());
    EXPECT_EQ(rep.projection_rank, 1u);
    EXPECT_LT(rep.idempotency_max, 1e-3);
    ASSERT_TRUE(rep.projection_drift);
    EXPECT_LT(*rep.projection_drift, 1e-3);
    EXPECT_EQ(rep.ppx_a_ok, Tri::Yes);
    EXPECT_EQ(rep.ppx_b_ok, Tri::No);
    EXPECT_EQ(rep.young_ok, Tri::Unknown);
    std::ostringstream csv;
    write_report_csv(csv, rep);
    EXPECT_EQ(csv.str().substr(0, csv.str().find('\n')),
              "verdict,q,q_argmax_t,young_ok,ppx_a_ok,ppx_b_ok,perturbed_K,perturbed_alpha,perturbed_epsilon,"
              "max_ratio_d1,max_ratio_d2,invariance_max,projection_drift");
}

TEST(Pipeline, UnperturbedRecoversOriginalBehaviour) {
    PipelineOptions o;
    o.decay_horizon = 4.0;
    o.ode_span = 4.0;
    o.ode_pairs = 10;
    o.refinement_check = false;
    const auto rep = robustness_pipeline(example_family({3.0, 1.0}), ProjectionFamily::diagonal({1, 0}),
                                         kExampleConstants, Perturbation::zero(2), Grid(-6, 6, 0.1), o);
    EXPECT_EQ(rep.verdict, Verdict::Pass);
    EXPECT_EQ(rep.q.q, 0.0);
    EXPECT_LT(rep.idempotency_max, 1e-12);
    EXPECT_LT(*rep.decay_angle, 1e-9);
}
