#include "qfc/physmodel.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace qfc;

namespace {

double max_abs(const CMatrix& m) { return m.cwiseAbs().maxCoeff(); }

SystemModel rc_model(std::size_t dim, double g) {
  SystemModel m;
  m.mode = SystemMode::kTlsRc;
  m.rc_dim = dim;
  m.g = g;
  m.omega = 1.0;
  return m;
}

}  // namespace

TEST(PhysModel, TlsHamiltonian) {
  SystemModel m;
  EXPECT_EQ(max_abs(hamiltonian(m, 0.0)), 0.0);
  m.epsilon = 0.5;
  const CMatrix h = hamiltonian(m, 0.0);
  EXPECT_DOUBLE_EQ(h(0, 0).real(), 0.25);
  EXPECT_DOUBLE_EQ(h(1, 1).real(), -0.25);
  EXPECT_EQ(std::abs(h(0, 1)), 0.0);
}

TEST(PhysModel, RcHamiltonianHandExpansion) {
  const CMatrix h = hamiltonian(rc_model(2, 0.5), 0.0);
  ASSERT_EQ(h.rows(), 4);
  CMatrix expect = CMatrix::Zero(4, 4);
  expect(1, 1) = 1.0;
  expect(0, 1) = expect(1, 0) = 0.5;
  expect(3, 3) = 1.0;
  expect(2, 3) = expect(3, 2) = -0.5;
  EXPECT_LE(max_abs(h - expect), 1e-15);
}

TEST(PhysModel, HamiltonianHermitian) {
  SystemModel tls;
  tls.epsilon = 0.3;
  for (double lambda : {-50.0, -1.3, 0.0, 2.7, 49.0}) {
    EXPECT_EQ(hermiticity_error(hamiltonian(tls, lambda)), 0.0);
    EXPECT_EQ(hermiticity_error(hamiltonian(rc_model(4, 0.5), lambda)), 0.0);
  }
}

TEST(PhysModel, RcDecouplesAtZeroCoupling) {
  SystemModel tls;
  tls.epsilon = 0.7;
  SystemModel rc = rc_model(3, 0.0);
  rc.epsilon = 0.7;
  rc.omega = 1.5;
  const double lambda = 3.0;
  const CMatrix a = annihilation(3);
  const CMatrix expect = kron(hamiltonian(tls, lambda), identity(3)) + 1.5 * kron(identity(2), a.adjoint() * a);
  EXPECT_TRUE(hamiltonian(rc, lambda) == expect);
}

TEST(PhysModel, JumpOperator) {
  SystemModel m;
  EXPECT_LE(max_abs(jump_operator(m) - sigma_minus()), 1e-15);
  m.kappa = 4.0;
  EXPECT_LE(max_abs(jump_operator(m) - 2.0 * sigma_minus()), 1e-15);
  const CMatrix c = jump_operator(rc_model(3, 0.5));
  CMatrix a = CMatrix::Zero(3, 3);
  a(0, 1) = 1.0;
  a(1, 2) = std::sqrt(2.0);
  EXPECT_LE(max_abs(c - kron(identity(2), a)), 1e-15);
}

TEST(PhysModel, FeedbackGenerator) {
  const CMatrix hf = feedback_generator(SystemModel{});
  CMatrix expect = CMatrix::Zero(2, 2);
  expect(0, 1) = expect(1, 0) = 0.5;
  EXPECT_LE(max_abs(hf - expect), 1e-15);

  const CMatrix hf_rc = feedback_generator(rc_model(2, 0.5));
  EXPECT_LE(max_abs(hf_rc - kron(0.5 * sigma_x(), identity(2))), 1e-15);
  EXPECT_EQ(hermiticity_error(hf_rc), 0.0);
  EXPECT_LE(std::abs(trace(hf_rc)), 1e-15);
}

TEST(PhysModel, TargetState) {
  CVector v(2);
  v << 1.0, Complex(0.0, 1.0);
  const PureState t = PureState::normalized(v);
  EXPECT_LE((target_state(SystemModel{}, t).vec() - t.vec()).norm(), 1e-15);

  CVector zero(2);
  zero << 1.0, 0.0;
  const PureState lifted = target_state(rc_model(2, 0.5), PureState(zero));
  ASSERT_EQ(lifted.dim(), 4u);
  EXPECT_NEAR(lifted.vec().norm(), 1.0, 1e-12);
  EXPECT_EQ(lifted.vec()(0), Complex(1.0, 0.0));
  for (int i = 1; i < 4; ++i) EXPECT_EQ(std::abs(lifted.vec()(i)), 0.0);
}

TEST(PhysModel, LiftAndReduce) {
  const SystemModel rc = rc_model(3, 0.5);
  CMatrix q(2, 2);
  q << 0.7, Complex(0.1, 0.2), Complex(0.1, -0.2), 0.3;
  const DensityMatrix lifted = lift_initial_state(rc, DensityMatrix(q));
  EXPECT_EQ(lifted.dim(), 6u);
  EXPECT_LE(max_abs(reduced_qubit_state(rc, lifted) - q), 1e-15);
}

TEST(PhysModel, ValidationErrors) {
  SystemModel m;
  m.eta = 0.0;
  EXPECT_THROW(m.validate(), std::invalid_argument);
  m.eta = 1.1;
  EXPECT_THROW(m.validate(), std::invalid_argument);
  SystemModel rc = rc_model(1, 0.5);
  EXPECT_THROW(rc.validate(), std::invalid_argument);
  EXPECT_EQ(rc_model(6, 0.5).hilbert_dim(), 12u);
  EXPECT_EQ(SystemModel{}.hilbert_dim(), 2u);
}

TEST(ControlGrid, TokenizeExamples) {
  ControlGrid g{-5.0, 5.0, 64};
  const std::size_t mid = tokenize_lambda(g, 0.0);
  EXPECT_EQ(mid, 31u);  // exact midpoint, lower index wins
  EXPECT_EQ(tokenize_lambda(g, -7.0), 0u);
  EXPECT_EQ(tokenize_lambda(g, 7.0), 63u);
  EXPECT_EQ(tokenize_lambda(g, g.center(10)), 10u);
  for (std::size_t t = 0; t < 64; ++t) EXPECT_EQ(tokenize_lambda(g, detokenize_lambda(g, t)), t);
}

TEST(ControlGrid, RoundTripWithinHalfBin) {
  for (const ControlGrid g : {ControlGrid{-5.0, 5.0, 64}, ControlGrid{}}) {
    for (int i = -2000; i <= 2000; ++i) {
      const double x = 0.037 * i;
      EXPECT_LE(std::abs(detokenize_lambda(g, tokenize_lambda(g, x)) - g.clamp(x)), g.bin_width() / 2 + 1e-12);
    }
  }
}

TEST(ControlGrid, Validation) {
  EXPECT_THROW((ControlGrid{1.0, 1.0, 4}.validate()), std::invalid_argument);
  EXPECT_THROW((ControlGrid{-1.0, 1.0, 0}.validate()), std::invalid_argument);
  EXPECT_THROW(detokenize_lambda(ControlGrid{}, 64), std::out_of_range);
}
