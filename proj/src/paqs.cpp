#include "qfc/paqs.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace qfc {

namespace {

constexpr double kImagTol = 1e-9;

Complex target_expect(const PureState& psi, const CMatrix& m) {
  return (psi.vec().adjoint() * m * psi.vec())(0, 0);
}

double real_checked(Complex z, const char* what) {
  if (std::abs(z.imag()) > kImagTol * std::max(1.0, std::abs(z.real()))) {
    throw std::logic_error(std::string("paqs: ") + what + " has a non-negligible imaginary part");
  }
  return z.real();
}

void check_generator(const CMatrix& hf) {
  const CMatrix sq = hf * hf;
  const CMatrix quarter = 0.25 * CMatrix::Identity(hf.rows(), hf.cols());
  if ((sq - quarter).cwiseAbs().maxCoeff() > 1e-12 || hermiticity_error(hf) > 1e-12) {
    throw std::invalid_argument("optimal_rotation: feedback generator must satisfy H_F^2 = I/4");
  }
}

}  // namespace

PaqsCoefficients paqs_coefficients(const DensityMatrix& rho, const PureState& target,
                                   const CMatrix& hf, const CMatrix& h0, const CMatrix& c,
                                   double kappa) {
  const auto d = static_cast<Eigen::Index>(rho.dim());
  if (target.dim() != rho.dim() || hf.rows() != d || h0.rows() != d || c.rows() != d) {
    throw DimensionError("paqs_coefficients: dimension mismatch");
  }
  if (!(kappa > 0.0)) throw std::invalid_argument("paqs_coefficients: kappa must be > 0");

  const CMatrix& r = rho.mat();
  const double sqrt_kappa = std::sqrt(kappa);
  const CMatrix a = c / sqrt_kappa;
  const CMatrix h_a = innovation(a, rho);

  PaqsCoefficients out;
  out.denominator = real_checked(Complex(0.0, 1.0) * target_expect(target, commutator(hf, r)),
                                 "denominator");
  const double threshold = 1e-8 * r.norm();
  if (std::abs(out.denominator) < threshold) {
    out.saturated = true;
    return out;
  }

  const double num1 = real_checked(sqrt_kappa * target_expect(target, h_a), "A1 numerator");
  out.a1 = num1 / out.denominator;

  const CMatrix drift = Complex(0.0, -1.0) * commutator(h0, r) + kappa * dissipator(a, rho) +
                        out.a1 * out.a1 * dissipator(hf, rho) +
                        Complex(0.0, -1.0) * out.a1 * sqrt_kappa * commutator(hf, h_a);
  const double num2 = real_checked(target_expect(target, drift), "A2 numerator");
  out.a2 = num2 / out.denominator;
  if (!std::isfinite(out.a1) || !std::isfinite(out.a2)) {
    out = PaqsCoefficients{0.0, 0.0, out.denominator, true};
  }
  return out;
}

FeedbackStep feedback_from_theta(double theta, double dt, const CMatrix& hf) {
  if (!(dt > 0.0)) throw std::invalid_argument("feedback_step: dt must be > 0");
  FeedbackStep step;
  const double lim = std::numbers::pi;
  step.clamped = theta < -lim || theta > lim;
  step.theta = std::clamp(theta, -lim, lim);
  step.unitary = expm_hermitian(hf, step.theta);
  step.lambda_equiv = step.theta / dt;
  return step;
}

FeedbackStep feedback_step(const PaqsCoefficients& coeffs, double dW, double dt, const CMatrix& hf) {
  return feedback_from_theta(coeffs.a1 * dW + coeffs.a2 * dt, dt, hf);
}

DensityMatrix apply_feedback(const DensityMatrix& rho, const FeedbackStep& step) {
  if (step.unitary.rows() != static_cast<Eigen::Index>(rho.dim())) {
    throw DimensionError("apply_feedback: unitary and state dimensions differ");
  }
  return DensityMatrix::from_unnormalized(step.unitary * rho.mat() * step.unitary.adjoint());
}

OptimalRotation optimal_rotation(const DensityMatrix& rho_post, const PureState& target,
                                 const CMatrix& hf) {
  if (target.dim() != rho_post.dim() || hf.rows() != static_cast<Eigen::Index>(rho_post.dim())) {
    throw DimensionError("optimal_rotation: dimension mismatch");
  }
  check_generator(hf);
  const CMatrix comm = commutator(hf, rho_post.mat());
  OptimalRotation out;
  // F'(0) = -i <[H_F, rho]>,  F''(0) = -<[H_F, [H_F, rho]]>.
  out.sin_coef = real_checked(Complex(0.0, -1.0) * target_expect(target, comm), "F'(0)");
  out.cos_coef = real_checked(target_expect(target, commutator(hf, comm)), "fidelity curvature");
  const double amplitude = std::hypot(out.sin_coef, out.cos_coef);
  if (amplitude < 1e-8 * rho_post.mat().norm()) {
    out.saturated = true;
    return out;
  }
  out.theta = std::atan2(out.sin_coef, out.cos_coef);
  out.gain = amplitude - out.cos_coef;
  return out;
}

double rotated_fidelity(const DensityMatrix& rho, const PureState& target, const CMatrix& hf,
                        double theta) {
  // <psi|U rho U^dag|psi> = phi^dag rho phi with phi = U^dag psi.
  const CMatrix u = expm_hermitian(hf, theta);
  const CVector phi = u.adjoint() * target.vec();
  return (phi.adjoint() * rho.mat() * phi)(0, 0).real();
}

double brute_force_theta(const DensityMatrix& rho_post, const PureState& target, const CMatrix& hf,
                         std::span<const double> theta_grid) {
  if (theta_grid.empty()) throw std::invalid_argument("brute_force_theta: empty grid");
  if (target.dim() != rho_post.dim() || hf.rows() != static_cast<Eigen::Index>(rho_post.dim())) {
    throw DimensionError("brute_force_theta: dimension mismatch");
  }
  // Diagonalize once; U(theta)^dag psi = V diag(exp(i theta e)) V^dag psi.
  Eigen::SelfAdjointEigenSolver<CMatrix> eig(hf);
  const CMatrix& v = eig.eigenvectors();
  const Eigen::VectorXd& e = eig.eigenvalues();
  const CVector w = v.adjoint() * target.vec();
  const CMatrix rv = v.adjoint() * rho_post.mat() * v;

  double best_theta = theta_grid[0];
  double best_f = -1.0;
  CVector phase_w(w.size());
  for (const double theta : theta_grid) {
    for (Eigen::Index j = 0; j < w.size(); ++j) {
      phase_w(j) = std::polar(1.0, theta * e(j)) * w(j);
    }
    const double f = (phase_w.adjoint() * rv * phase_w)(0, 0).real();
    const bool better = f > best_f;
    const bool tie_closer =
        f == best_f && (std::abs(theta) < std::abs(best_theta) ||
                        (std::abs(theta) == std::abs(best_theta) && theta < best_theta));
    if (better || tie_closer) {
      best_f = f;
      best_theta = theta;
    }
  }
  return best_theta;
}

std::vector<double> theta_grid(double lo, double hi, double spacing) {
  if (!(spacing > 0.0) || !(hi >= lo)) throw std::invalid_argument("theta_grid: bad range");
  const auto n = static_cast<std::size_t>(std::floor((hi - lo) / spacing + 1e-9)) + 1;
  std::vector<double> grid(n);
  for (std::size_t i = 0; i < n; ++i) grid[i] = lo + spacing * static_cast<double>(i);
  return grid;
}

PaqsController::PaqsController(const SystemModel& model, const PureState& target, PaqsRule rule,
                               PaqsFilter filter)
    : model_(model),
      target_(target),
      rule_(rule),
      filter_mode_(filter),
      h0_(hamiltonian(model, 0.0)),
      jump_(jump_operator(model)),
      hf_(feedback_generator(model)),
      quadrature_(jump_ + jump_.adjoint()) {
  model_.validate();
  if (target_.dim() != model_.hilbert_dim()) {
    throw DimensionError("PaqsController: target dimension does not match the model");
  }
  check_generator(hf_);
}

void PaqsController::reset(const DensityMatrix& rho0) {
  estimate_ = rho0;
  clamp_events_ = 0;
  saturation_events_ = 0;
}

double PaqsController::act(const Observation& obs) {
  if (obs.record.empty()) throw std::invalid_argument("PaqsController: empty record");
  const double dt = obs.dt;
  const double dr = obs.record.back();
  // dW = sqrt(eta) (dr - <c + c^dag> dt) on the pre-step estimate
  const double dW = std::sqrt(model_.eta) * (dr - expect(quadrature_, estimate_).real() * dt);

  DensityMatrix post;
  if (filter_mode_ == PaqsFilter::kTrueState) {
    if (obs.true_state == nullptr) {
      throw std::logic_error("PaqsController: privileged controller did not receive the state");
    }
    post = *obs.true_state;
  } else {
    post = sme_step(SmeStepInput{estimate_, h0_, jump_, model_.eta, dt, dW}).rho;
  }

  FeedbackStep step;
  if (rule_ == PaqsRule::kLocallyOptimal) {
    const OptimalRotation opt = optimal_rotation(post, target_, hf_);
    if (opt.saturated) ++saturation_events_;
    step = feedback_from_theta(opt.theta, dt, hf_);
  } else {
    const PaqsCoefficients coeffs =
        paqs_coefficients(estimate_, target_, hf_, h0_, jump_, model_.kappa);
    if (coeffs.saturated) ++saturation_events_;
    step = feedback_step(coeffs, dW, dt, hf_);
  }
  if (step.clamped) ++clamp_events_;
  estimate_ = apply_feedback(post, step);
  return step.lambda_equiv;
}

}  // namespace qfc
