// physmodel.hpp: Hamiltonians, jump and feedback operators, targets and the
// control-value grid for the two-level system and the TLS + reaction
// coordinate (RC) embedding.

#pragma once

#include "qfc/complexmat.hpp"

#include <cstddef>
#include <string>

namespace qfc {

enum class SystemMode { kTls, kTlsRc };

std::string to_string(SystemMode mode);
SystemMode system_mode_from_string(const std::string& s);

struct SystemModel {
  SystemMode mode = SystemMode::kTls;
  double epsilon = 0.0;  // energy bias, units of kappa
  double kappa = 1.0;    // measurement rate
  double eta = 1.0;      // measurement efficiency in (0, 1]
  double omega = 1.0;    // RC frequency (TLS_RC only)
  double g = 0.0;        // TLS-RC coupling (TLS_RC only)
  std::size_t rc_dim = 2;

  // Throws std::invalid_argument on out-of-range parameters.
  void validate() const;
  std::size_t hilbert_dim() const;
  std::size_t rc_factor() const { return mode == SystemMode::kTls ? 1 : rc_dim; }
};

// H(lambda) = eps/2 sz + lambda/2 sx [+ Omega a^dag a + g sz (a + a^dag)].
CMatrix hamiltonian(const SystemModel& model, double lambda);
// sqrt(kappa) sigma_minus, or sqrt(kappa) (I_2 x a) with the RC.
CMatrix jump_operator(const SystemModel& model);
// sx/2, or (sx/2) x I_rc.
CMatrix feedback_generator(const SystemModel& model);
// system_target, or system_target x |0>_RC.
PureState target_state(const SystemModel& model, const PureState& system_target);
// Lifts a qubit density matrix to the full space (RC in vacuum).
DensityMatrix lift_initial_state(const SystemModel& model, const DensityMatrix& system_rho);
// Reduced qubit state, tracing out the RC when present.
CMatrix reduced_qubit_state(const SystemModel& model, const DensityMatrix& rho);

// Uniform bins over [lambda_min, lambda_max]; token i is the bin whose center
// is lambda_min + (i + 1/2) * width.
struct ControlGrid {
  double lambda_min = -50.0;
  double lambda_max = 50.0;
  std::size_t n_bins = 64;

  void validate() const;
  double bin_width() const { return (lambda_max - lambda_min) / static_cast<double>(n_bins); }
  double center(std::size_t token) const;
  double clamp(double lambda) const;
};

// Nearest bin center, ties toward the lower index, clamped to the grid.
std::size_t tokenize_lambda(const ControlGrid& grid, double lambda);
double detokenize_lambda(const ControlGrid& grid, std::size_t token);

}  // namespace qfc
