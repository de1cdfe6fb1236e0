// sme.hpp: diffusive stochastic master equation under continuous homodyne
// measurement, the closed feedback loop, and a deterministic Lindblad solver.

#pragma once

#include "qfc/complexmat.hpp"
#include "qfc/physmodel.hpp"
#include "qfc/rng.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace qfc {

// D[c]rho = c rho c^dag - (c^dag c rho + rho c^dag c) / 2
CMatrix dissipator(const CMatrix& c, const DensityMatrix& rho);
// H[c]rho = c rho + rho c^dag - Tr[(c + c^dag) rho] rho
CMatrix innovation(const CMatrix& c, const DensityMatrix& rho);

struct SmeStepInput {
  const DensityMatrix& rho;
  const CMatrix& hamiltonian;
  const CMatrix& jump;
  double eta = 1.0;
  double dt = 0.0;
  double dW = 0.0;
};

struct SmeStepResult {
  DensityMatrix rho;
  double dr = 0.0;  // Tr[(c + c^dag) rho] dt + dW / sqrt(eta), pre-step rho
};

// Literal Euler-Maruyama increment of the SME (no normalization).
CMatrix sme_euler_increment(const SmeStepInput& in);

// One measurement step. The update is the completely positive Kraus form
//   M = I - (iH + c^dag c / 2) dt + sqrt(eta) c dy + (eta / 2) c^2 (dy^2 - dt),
//   rho' = (M rho M^dag + (1 - eta) c rho c^dag dt) / Tr(...),
// with dy = sqrt(eta) dr. It matches the Euler increment to first Ito order
// and keeps rho positive for any dW. Throws std::domain_error if the trace of
// the updated state is not positive.
SmeStepResult sme_step(const SmeStepInput& in);

// What a controller sees after measurement step `step`. `record` holds
// dr_0..dr_step. `true_state` is the post-measurement simulator state, set
// only for privileged controllers (label generation).
struct Observation {
  std::size_t step = 0;
  std::span<const double> record;
  double dt = 0.0;
  const DensityMatrix* true_state = nullptr;
};

class Controller {
 public:
  virtual ~Controller() = default;
  // Called once per trajectory with the known initial state.
  virtual void reset(const DensityMatrix& rho0) = 0;
  // Control value lambda_k, applied as U = exp(-i lambda_k dt H_F).
  virtual double act(const Observation& obs) = 0;
  virtual bool privileged() const { return false; }
};

class TrajectoryRejected : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Trajectory {
  double dt = 0.0;
  std::size_t n_steps = 0;
  std::uint64_t seed = 0;
  DensityMatrix rho0;
  std::vector<double> dW;
  std::vector<double> dr;
  std::vector<double> lambda;
  std::vector<double> fidelity;         // n_steps + 1 entries
  std::vector<DensityMatrix> states;    // rho_0..rho_n when requested
  DensityMatrix final_state;
};

struct SimulateOptions {
  bool keep_states = false;
  double negativity_tol = 1e-6;
};

// Closed loop: for each step, a measurement increment under H(0) produces
// dr_k, the controller returns lambda_k, and the feedback unitary is applied.
// Requires dt * kappa <= 0.05.
Trajectory simulate(const SystemModel& model, const DensityMatrix& rho0, const PureState& target,
                    Controller& controller, std::size_t n_steps, double dt, RngStream rng,
                    const SimulateOptions& options = {});

// RK4 integration of d rho/dt = -i[H(lambda_k), rho] + D[c]rho. An empty
// schedule means lambda = 0 throughout.
std::vector<DensityMatrix> lindblad_solve(const SystemModel& model, const DensityMatrix& rho0,
                                          std::span<const double> lambda_schedule,
                                          std::size_t n_steps, double dt);
// Same integrator for a fixed Hamiltonian and jump operator (c may be zero).
std::vector<DensityMatrix> lindblad_solve(const CMatrix& h, const CMatrix& c, const DensityMatrix& rho0,
                                          std::size_t n_steps, double dt);

// <psi|rho|psi>
double fidelity(const DensityMatrix& rho, const PureState& target);

}  // namespace qfc
