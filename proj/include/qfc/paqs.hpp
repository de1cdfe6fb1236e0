// paqs.hpp: locally optimal feedback rotations exp(-i theta H_F).
//
// Two routes are provided. paqs_coefficients/feedback_step implement the
// Ito-parameterized closed forms theta = A1 dW + A2 dt. optimal_rotation
// maximizes the next-step fidelity exactly: for a generator with spectrum
// {-1/2, +1/2}, F(theta) = m + B cos(theta) + C sin(theta) on the
// post-measurement state, so theta* = atan2(C, B). brute_force_theta is the
// scan oracle for both.

#pragma once

#include "qfc/complexmat.hpp"
#include "qfc/physmodel.hpp"
#include "qfc/sme.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace qfc {

struct PaqsCoefficients {
  double a1 = 0.0;
  double a2 = 0.0;
  double denominator = 0.0;  // i <psi|[H_F, rho]|psi>
  bool saturated = false;
};

// A1 = <psi|H[c]rho|psi> / den,
// A2 = <psi|-i[H0,rho] + D[c]rho + A1^2 D[H_F]rho - i A1 [H_F, H[c]rho]|psi> / den,
// den = i <psi|[H_F, rho]|psi>, with c = sqrt(kappa) a. Saturates (a1 = a2 = 0)
// when |den| < 1e-8 ||rho||.
PaqsCoefficients paqs_coefficients(const DensityMatrix& rho, const PureState& target,
                                   const CMatrix& hf, const CMatrix& h0, const CMatrix& c,
                                   double kappa);

struct FeedbackStep {
  double theta = 0.0;
  CMatrix unitary;
  double lambda_equiv = 0.0;  // theta / dt
  bool clamped = false;
};

// theta = a1 dW + a2 dt clamped to [-pi, pi]; U = exp(-i theta hf).
FeedbackStep feedback_step(const PaqsCoefficients& coeffs, double dW, double dt, const CMatrix& hf);
FeedbackStep feedback_from_theta(double theta, double dt, const CMatrix& hf);

DensityMatrix apply_feedback(const DensityMatrix& rho, const FeedbackStep& step);

struct OptimalRotation {
  double theta = 0.0;
  double gain = 0.0;  // F(theta) - F(0)
  double cos_coef = 0.0;
  double sin_coef = 0.0;
  bool saturated = false;
};

// Exact maximizer of <psi|U rho U^dag|psi>; requires hf^2 = I/4.
OptimalRotation optimal_rotation(const DensityMatrix& rho_post, const PureState& target,
                                 const CMatrix& hf);

// F(theta) = <psi|U(theta) rho U(theta)^dag|psi>.
double rotated_fidelity(const DensityMatrix& rho, const PureState& target, const CMatrix& hf,
                        double theta);

// Grid point maximizing the rotated fidelity; ties go to the smallest |theta|
// and then to the smaller theta.
double brute_force_theta(const DensityMatrix& rho_post, const PureState& target, const CMatrix& hf,
                         std::span<const double> theta_grid);

// Evenly spaced grid from lo to hi inclusive.
std::vector<double> theta_grid(double lo, double hi, double spacing);

enum class PaqsRule {
  kLocallyOptimal,  // optimal_rotation on the post-measurement state
  kClosedForm,      // paqs_coefficients + feedback_step
};

enum class PaqsFilter {
  kTrueState,      // privileged: reads the simulator state (label generation)
  kFromRecord,     // reconstructs dW from dr and propagates its own estimate
};

class PaqsController : public Controller {
 public:
  PaqsController(const SystemModel& model, const PureState& target,
                 PaqsRule rule = PaqsRule::kLocallyOptimal,
                 PaqsFilter filter = PaqsFilter::kTrueState);

  void reset(const DensityMatrix& rho0) override;
  double act(const Observation& obs) override;
  bool privileged() const override { return filter_mode_ == PaqsFilter::kTrueState; }

  const DensityMatrix& estimate() const { return estimate_; }
  std::size_t clamp_events() const { return clamp_events_; }
  std::size_t saturation_events() const { return saturation_events_; }

 private:
  SystemModel model_;
  PureState target_;
  PaqsRule rule_;
  PaqsFilter filter_mode_;
  CMatrix h0_;
  CMatrix jump_;
  CMatrix hf_;
  CMatrix quadrature_;
  DensityMatrix estimate_;
  std::size_t clamp_events_ = 0;
  std::size_t saturation_events_ = 0;
};

}  // namespace qfc
