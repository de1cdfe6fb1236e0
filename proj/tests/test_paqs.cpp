#include "qfc/dataset.hpp"
#include "qfc/eval.hpp"
#include "qfc/paqs.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace qfc;

namespace {

double max_abs(const CMatrix& m) { return m.cwiseAbs().maxCoeff(); }

PureState ket(Complex a, Complex b) {
  CVector v(2);
  v << a, b;
  return PureState::normalized(v);
}

PureState target_plus_i() { return ket(1.0, Complex(0.0, 1.0)); }

}  // namespace

TEST(PaqsCoefficients, SaturatedAtDarkFixedPoint) {
  const PureState zero = ket(1.0, 0.0);
  const auto co = paqs_coefficients(DensityMatrix(zero), zero, 0.5 * sigma_x(), CMatrix::Zero(2, 2), sigma_minus(), 1.0);
  EXPECT_TRUE(co.saturated);
  EXPECT_EQ(co.a1, 0.0);
  EXPECT_EQ(co.a2, 0.0);
}

TEST(PaqsCoefficients, GoldenValuesFromGroundState) {
  const auto co = paqs_coefficients(DensityMatrix(ket(1.0, 0.0)), target_plus_i(), 0.5 * sigma_x(),
                                    CMatrix::Zero(2, 2), sigma_minus(), 1.0);
  EXPECT_FALSE(co.saturated);
  EXPECT_NEAR(co.denominator, 0.5, 1e-15);
  EXPECT_NEAR(co.a1, 0.0, 1e-15);
  EXPECT_NEAR(co.a2, 0.0, 1e-15);
}

TEST(PaqsCoefficients, A1ScalesWithSqrtKappa) {
  RngStream rng(4);
  const auto states = sample_initial_states(5, rng, InitialKind::kPureHaar);
  for (const auto& rho : states) {
    const auto c1 = paqs_coefficients(rho, target_plus_i(), 0.5 * sigma_x(), CMatrix::Zero(2, 2), sigma_minus(), 1.0);
    const auto c4 =
        paqs_coefficients(rho, target_plus_i(), 0.5 * sigma_x(), CMatrix::Zero(2, 2), 2.0 * sigma_minus(), 4.0);
    ASSERT_FALSE(c1.saturated);
    EXPECT_NEAR(c4.a1 / c1.a1, 2.0, 1e-9);
  }
}

TEST(PaqsCoefficients, ClosedFormFreezesFidelityToFirstOrder) {
  // theta = a1 dW + a2 dt cancels the dW coefficient of F_{t+dt} - F_t.
  const PureState target = target_plus_i();
  const CMatrix hf = 0.5 * sigma_x();
  const CMatrix h0 = 0.1 * sigma_z();
  const CMatrix c = sigma_minus();
  const DensityMatrix rho(ket(0.8, Complex(0.36, 0.48)));
  const auto co = paqs_coefficients(rho, target, hf, h0, c, 1.0);
  ASSERT_FALSE(co.saturated);
  const double dt = 1e-6;
  double slope_plus = 0.0, slope_minus = 0.0;
  for (double sign : {1.0, -1.0}) {
    const double dW = sign * std::sqrt(dt);
    const auto post = sme_step(SmeStepInput{rho, h0, c, 1.0, dt, dW}).rho;
    const auto step = feedback_step(co, dW, dt, hf);
    const double dF = fidelity(apply_feedback(post, step), target) - fidelity(rho, target);
    (sign > 0 ? slope_plus : slope_minus) = dF / std::sqrt(dt);
  }
  EXPECT_NEAR(slope_plus - slope_minus, 0.0, 1e-2);
}

TEST(FeedbackStep, Examples) {
  const CMatrix hf = 0.5 * sigma_x();
  const auto id = feedback_step(PaqsCoefficients{}, 0.3, 0.01, hf);
  EXPECT_LE(max_abs(id.unitary - identity(2)), 1e-15);
  EXPECT_EQ(id.lambda_equiv, 0.0);

  const auto s = feedback_step(PaqsCoefficients{1.0, 0.0, 1.0, false}, 0.1, 0.01, hf);
  EXPECT_NEAR(s.theta, 0.1, 1e-15);
  EXPECT_NEAR(s.lambda_equiv, 10.0, 1e-12);
  const CMatrix expect = std::cos(0.05) * identity(2) - Complex(0.0, std::sin(0.05)) * sigma_x();
  EXPECT_LE(max_abs(s.unitary - expect), 1e-12);

  const auto plus = feedback_from_theta(0.7, 0.01, hf);
  const auto minus = feedback_from_theta(-0.7, 0.01, hf);
  EXPECT_LE(max_abs(plus.unitary * minus.unitary - identity(2)), 1e-12);
  EXPECT_LE(max_abs(plus.unitary.adjoint() * plus.unitary - identity(2)), 1e-9);
}

TEST(FeedbackStep, ClampsToPi) {
  const auto s = feedback_step(PaqsCoefficients{100.0, 0.0, 1.0, false}, 1.0, 0.01, 0.5 * sigma_x());
  EXPECT_TRUE(s.clamped);
  EXPECT_DOUBLE_EQ(s.theta, std::numbers::pi);
  EXPECT_DOUBLE_EQ(s.lambda_equiv, std::numbers::pi / 0.01);
}

TEST(ApplyFeedback, Examples) {
  const CMatrix hf = 0.5 * sigma_x();
  CMatrix q(2, 2);
  q << 0.7, Complex(0.1, 0.2), Complex(0.1, -0.2), 0.3;
  const DensityMatrix rho(q);
  EXPECT_LE(max_abs(apply_feedback(rho, feedback_from_theta(0.0, 0.01, hf)).mat() - q), 1e-15);
  const auto flipped = apply_feedback(DensityMatrix(ket(1.0, 0.0)), feedback_from_theta(std::numbers::pi, 0.01, hf));
  EXPECT_LE(max_abs(flipped.mat() - DensityMatrix(ket(0.0, 1.0)).mat()), 1e-12);
  const auto rotated = apply_feedback(rho, feedback_from_theta(1.3, 0.01, hf));
  EXPECT_NEAR(rotated.purity(), rho.purity(), 1e-12);
  EXPECT_NEAR(trace(rotated.mat()).real(), 1.0, 1e-12);
  EXPECT_NEAR(eigh_smallest(rotated), eigh_smallest(rho), 1e-10);
}

TEST(BruteForceTheta, Examples) {
  const CMatrix hf = 0.5 * sigma_x();
  const auto grid = theta_grid(-std::numbers::pi, std::numbers::pi, 1e-3);
  const PureState t = target_plus_i();
  EXPECT_LE(std::abs(brute_force_theta(DensityMatrix(t), t, hf, grid)), 1e-3);

  const double flip = brute_force_theta(DensityMatrix(ket(1.0, 0.0)), ket(0.0, 1.0), hf, grid);
  EXPECT_NEAR(std::abs(flip), std::numbers::pi, 1e-3);

  const DensityMatrix rho(ket(0.8, Complex(0.36, 0.48)));
  double spacing = 1e-2;
  double prev = brute_force_theta(rho, t, hf, theta_grid(-std::numbers::pi, std::numbers::pi, spacing));
  for (int i = 0; i < 4; ++i) {
    const double cur = brute_force_theta(rho, t, hf, theta_grid(-std::numbers::pi, std::numbers::pi, spacing / 2));
    EXPECT_LE(std::abs(cur - prev), spacing);
    prev = cur;
    spacing /= 2;
  }
  EXPECT_THROW(brute_force_theta(rho, t, hf, std::vector<double>{}), std::invalid_argument);
}

TEST(OptimalRotation, MatchesFineScan) {
  const CMatrix hf = 0.5 * sigma_x();
  const auto grid = theta_grid(-std::numbers::pi, std::numbers::pi, 1e-4);
  RngStream rng(31);
  const auto states = sample_initial_states(20, rng, InitialKind::kMixedRandom);
  for (const auto& rho : states) {
    const auto opt = optimal_rotation(rho, target_plus_i(), hf);
    if (opt.saturated || opt.gain <= 1e-6) continue;
    const double brute = brute_force_theta(rho, target_plus_i(), hf, grid);
    double d = std::abs(opt.theta - brute);
    d = std::min(d, 2 * std::numbers::pi - d);
    EXPECT_LE(d, 1e-3);
    const double h = 1e-5;
    const double slope = (rotated_fidelity(rho, target_plus_i(), hf, opt.theta + h) -
                          rotated_fidelity(rho, target_plus_i(), hf, opt.theta - h)) /
                         (2 * h);
    EXPECT_LE(std::abs(slope), 1e-4);
    EXPECT_NEAR(opt.gain, rotated_fidelity(rho, target_plus_i(), hf, opt.theta) - fidelity(rho, target_plus_i()),
                1e-12);
  }
}

TEST(PaqsController, FixedPointGivesZeroControl) {
  const PureState zero = ket(1.0, 0.0);
  for (PaqsFilter f : {PaqsFilter::kTrueState, PaqsFilter::kFromRecord}) {
    PaqsController ctrl(SystemModel{}, zero, PaqsRule::kLocallyOptimal, f);
    const auto tr = simulate(SystemModel{}, DensityMatrix(zero), zero, ctrl, 100, 0.01, RngStream(2));
    for (double l : tr.lambda) EXPECT_EQ(l, 0.0);
    EXPECT_NEAR(tr.fidelity.back(), 1.0, 1e-12);
  }
}

TEST(PaqsController, DeterministicAndFilterMatchesTruthAtUnitEfficiency) {
  SystemModel m;
  const DensityMatrix rho0(ket(0.6, Complex(0.0, 0.8)));
  PaqsController a(m, target_plus_i(), PaqsRule::kLocallyOptimal, PaqsFilter::kTrueState);
  PaqsController b(m, target_plus_i(), PaqsRule::kLocallyOptimal, PaqsFilter::kTrueState);
  const auto ta = simulate(m, rho0, target_plus_i(), a, 100, 0.01, RngStream(6));
  const auto tb = simulate(m, rho0, target_plus_i(), b, 100, 0.01, RngStream(6));
  EXPECT_EQ(ta.lambda, tb.lambda);

  PaqsController f(m, target_plus_i(), PaqsRule::kLocallyOptimal, PaqsFilter::kFromRecord);
  const auto tf = simulate(m, rho0, target_plus_i(), f, 100, 0.01, RngStream(6));
  ASSERT_EQ(tf.lambda.size(), ta.lambda.size());
  for (std::size_t k = 0; k < ta.lambda.size(); ++k) EXPECT_NEAR(tf.lambda[k], ta.lambda[k], 1e-6);
  EXPECT_LE(max_abs(f.estimate().mat() - tf.final_state.mat()), 1e-9);
}

TEST(PaqsController, ClosedFormRuleRuns) {
  SystemModel m;
  PaqsController c(m, target_plus_i(), PaqsRule::kClosedForm, PaqsFilter::kFromRecord);
  const auto tr = simulate(m, DensityMatrix(ket(0.6, 0.8)), target_plus_i(), c, 100, 0.01, RngStream(3));
  for (double l : tr.lambda) EXPECT_TRUE(std::isfinite(l));
}

TEST(PaqsController, MeanFidelityNonDecreasingLate) {
  // Fig. 2 TLS preset under PaQS: the tail of the mean curve does not drop.
  ExperimentPreset p;
  p.system_target = target_plus_i();
  p.controller = ControllerKind::kPaqs;
  p.n_trajectories = 200;
  p.seed = 12;
  p.initial.seed = 13;
  const auto res = rollout(p, 4);
  const auto& f = res.curve.mean_F;
  const std::size_t start = f.size() - f.size() / 5 - 1;
  for (std::size_t t = start; t + 1 < f.size(); ++t) {
    EXPECT_GE(f[t + 1] - f[t], -2.0 * res.curve.stderr_F[t + 1]) << "t " << t;
  }
  EXPECT_GE(f.back(), f[start] - 2.0 * res.curve.stderr_F.back());
}

TEST(OptimalRotation, NeverWorseThanAnyAngle) {
  const CMatrix hf = 0.5 * sigma_x();
  const auto grid = theta_grid(-std::numbers::pi, std::numbers::pi, 1e-3);
  RngStream rng(33);
  for (InitialKind kind : {InitialKind::kPureHaar, InitialKind::kMixedRandom}) {
    for (const auto& rho : sample_initial_states(200, rng, kind)) {
      const auto opt = optimal_rotation(rho, target_plus_i(), hf);
      EXPECT_GE(opt.gain, -1e-12);
      const double best = rotated_fidelity(rho, target_plus_i(), hf, opt.theta);
      for (std::size_t i = 0; i < grid.size(); i += 37) {
        EXPECT_LE(rotated_fidelity(rho, target_plus_i(), hf, grid[i]), best + 1e-12);
      }
    }
  }
}
