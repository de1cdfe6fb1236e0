#include "qfc/physmodel.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace qfc {

std::string to_string(SystemMode mode) { return mode == SystemMode::kTls ? "TLS" : "TLS_RC"; }

SystemMode system_mode_from_string(const std::string& s) {
  if (s == "TLS") return SystemMode::kTls;
  if (s == "TLS_RC") return SystemMode::kTlsRc;
  throw std::invalid_argument("unknown system mode '" + s + "'");
}

void SystemModel::validate() const {
  if (!(kappa > 0.0)) throw std::invalid_argument("SystemModel: kappa must be > 0");
  if (!(eta > 0.0 && eta <= 1.0)) throw std::invalid_argument("SystemModel: eta must lie in (0, 1]");
  if (!std::isfinite(epsilon)) throw std::invalid_argument("SystemModel: epsilon must be finite");
  if (mode == SystemMode::kTlsRc) {
    if (rc_dim < 2) throw std::invalid_argument("SystemModel: rc_dim must be >= 2");
    if (!(omega >= 0.0)) throw std::invalid_argument("SystemModel: omega must be >= 0");
    if (!std::isfinite(g)) throw std::invalid_argument("SystemModel: g must be finite");
  }
}

std::size_t SystemModel::hilbert_dim() const { return mode == SystemMode::kTls ? 2 : 2 * rc_dim; }

CMatrix hamiltonian(const SystemModel& model, double lambda) {
  CMatrix h_tls = 0.5 * model.epsilon * sigma_z() + 0.5 * lambda * sigma_x();
  if (model.mode == SystemMode::kTls) {
    return h_tls;
  }
  const CMatrix a = annihilation(model.rc_dim);
  const CMatrix id_rc = identity(model.rc_dim);
  return kron(h_tls, id_rc) + model.omega * kron(identity(2), a.adjoint() * a) +
         model.g * kron(sigma_z(), a + a.adjoint());
}

CMatrix jump_operator(const SystemModel& model) {
  const double s = std::sqrt(model.kappa);
  if (model.mode == SystemMode::kTls) {
    return s * sigma_minus();
  }
  return s * kron(identity(2), annihilation(model.rc_dim));
}

CMatrix feedback_generator(const SystemModel& model) {
  const CMatrix hf = 0.5 * sigma_x();
  if (model.mode == SystemMode::kTls) {
    return hf;
  }
  return kron(hf, identity(model.rc_dim));
}

PureState target_state(const SystemModel& model, const PureState& system_target) {
  if (system_target.dim() != 2) {
    throw DimensionError("target_state: system target must be a qubit state");
  }
  if (model.mode == SystemMode::kTls) {
    return system_target;
  }
  CVector vac = CVector::Zero(static_cast<Eigen::Index>(model.rc_dim));
  vac(0) = 1.0;
  return kron(system_target, PureState(vac));
}

DensityMatrix lift_initial_state(const SystemModel& model, const DensityMatrix& system_rho) {
  if (system_rho.dim() != 2) {
    throw DimensionError("lift_initial_state: expected a qubit state");
  }
  if (model.mode == SystemMode::kTls) {
    return system_rho;
  }
  CMatrix vac = CMatrix::Zero(static_cast<Eigen::Index>(model.rc_dim),
                              static_cast<Eigen::Index>(model.rc_dim));
  vac(0, 0) = 1.0;
  return DensityMatrix::from_unnormalized(kron(system_rho.mat(), vac));
}

CMatrix reduced_qubit_state(const SystemModel& model, const DensityMatrix& rho) {
  if (rho.dim() != model.hilbert_dim()) {
    throw DimensionError("reduced_qubit_state: state dimension does not match the model");
  }
  if (model.mode == SystemMode::kTls) {
    return rho.mat();
  }
  return partial_trace_second(rho.mat(), 2, model.rc_dim);
}

void ControlGrid::validate() const {
  if (n_bins < 2) throw std::invalid_argument("ControlGrid: n_bins must be >= 2");
  if (!(lambda_min < lambda_max)) {
    throw std::invalid_argument("ControlGrid: lambda_min must be < lambda_max");
  }
}

double ControlGrid::center(std::size_t token) const {
  return lambda_min + (static_cast<double>(token) + 0.5) * bin_width();
}

double ControlGrid::clamp(double lambda) const {
  return std::clamp(lambda, center(0), center(n_bins - 1));
}

std::size_t tokenize_lambda(const ControlGrid& grid, double lambda) {
  if (std::isnan(lambda)) {
    throw std::invalid_argument("tokenize_lambda: NaN control value");
  }
  // Position in units of bin width relative to the first center; a value
  // exactly halfway between two centers rounds down.
  const double u = (lambda - grid.center(0)) / grid.bin_width();
  const double last = static_cast<double>(grid.n_bins - 1);
  if (!(u > 0.0)) return 0;
  if (u >= last) return grid.n_bins - 1;
  const double fl = std::floor(u);
  const double frac = u - fl;
  auto tok = static_cast<std::size_t>(fl);
  if (frac > 0.5) ++tok;
  return std::min(tok, grid.n_bins - 1);
}

double detokenize_lambda(const ControlGrid& grid, std::size_t token) {
  if (token >= grid.n_bins) {
    throw std::out_of_range("detokenize_lambda: token outside the grid");
  }
  return grid.center(token);
}

}  // namespace qfc
