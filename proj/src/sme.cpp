#include "qfc/sme.hpp"

#include <cmath>
#include <string>

namespace qfc {

namespace {

void check_dims(const CMatrix& c, const DensityMatrix& rho, const char* what) {
  if (c.rows() != c.cols() || static_cast<std::size_t>(c.rows()) != rho.dim()) {
    throw DimensionError(std::string(what) + ": operator and state dimensions differ");
  }
}

double quadrature_mean(const CMatrix& c, const DensityMatrix& rho) {
  return expect(c + c.adjoint(), rho).real();
}

CMatrix lindblad_rhs(const CMatrix& h, const CMatrix& c, const CMatrix& cdc, const CMatrix& rho) {
  return Complex(0.0, -1.0) * (h * rho - rho * h) + c * rho * c.adjoint() -
         0.5 * (cdc * rho + rho * cdc);
}

}  // namespace

CMatrix dissipator(const CMatrix& c, const DensityMatrix& rho) {
  check_dims(c, rho, "dissipator");
  const CMatrix cdc = c.adjoint() * c;
  const CMatrix& r = rho.mat();
  return c * r * c.adjoint() - 0.5 * (cdc * r + r * cdc);
}

CMatrix innovation(const CMatrix& c, const DensityMatrix& rho) {
  check_dims(c, rho, "innovation");
  const CMatrix& r = rho.mat();
  return c * r + r * c.adjoint() - quadrature_mean(c, rho) * r;
}

CMatrix sme_euler_increment(const SmeStepInput& in) {
  check_dims(in.jump, in.rho, "sme_euler_increment");
  check_dims(in.hamiltonian, in.rho, "sme_euler_increment");
  const CMatrix& r = in.rho.mat();
  const CMatrix& h = in.hamiltonian;
  return Complex(0.0, -1.0) * (h * r - r * h) * in.dt + dissipator(in.jump, in.rho) * in.dt +
         std::sqrt(in.eta) * innovation(in.jump, in.rho) * in.dW;
}

SmeStepResult sme_step(const SmeStepInput& in) {
  check_dims(in.jump, in.rho, "sme_step");
  check_dims(in.hamiltonian, in.rho, "sme_step");
  if (!(in.dt > 0.0)) throw std::invalid_argument("sme_step: dt must be > 0");
  if (!(in.eta > 0.0 && in.eta <= 1.0)) throw std::invalid_argument("sme_step: eta outside (0, 1]");

  const CMatrix& c = in.jump;
  const CMatrix& r = in.rho.mat();
  const double dr = quadrature_mean(c, in.rho) * in.dt + in.dW / std::sqrt(in.eta);
  const double dy = std::sqrt(in.eta) * dr;
  const auto n = c.rows();

  CMatrix m = CMatrix::Identity(n, n) -
              (Complex(0.0, 1.0) * in.hamiltonian + 0.5 * c.adjoint() * c) * in.dt +
              std::sqrt(in.eta) * dy * c + 0.5 * in.eta * (dy * dy - in.dt) * (c * c);
  CMatrix next = m * r * m.adjoint();
  if (in.eta < 1.0) {
    next += (1.0 - in.eta) * in.dt * (c * r * c.adjoint());
  }
  return SmeStepResult{DensityMatrix::from_unnormalized(next), dr};
}

double fidelity(const DensityMatrix& rho, const PureState& target) {
  if (rho.dim() != target.dim()) {
    throw DimensionError("fidelity: state and target dimensions differ");
  }
  return (target.vec().adjoint() * rho.mat() * target.vec())(0, 0).real();
}

Trajectory simulate(const SystemModel& model, const DensityMatrix& rho0, const PureState& target,
                    Controller& controller, std::size_t n_steps, double dt, RngStream rng,
                    const SimulateOptions& options) {
  model.validate();
  if (!(dt > 0.0) || dt * model.kappa > 0.05) {
    throw std::invalid_argument("simulate: need 0 < dt * kappa <= 0.05");
  }
  if (rho0.dim() != model.hilbert_dim() || target.dim() != model.hilbert_dim()) {
    throw DimensionError("simulate: state/target dimension does not match the model");
  }

  const CMatrix h0 = hamiltonian(model, 0.0);
  const CMatrix c = jump_operator(model);
  const CMatrix hf = feedback_generator(model);
  // Feedback unitaries are exp(-i theta H_F); diagonalize H_F once.
  Eigen::SelfAdjointEigenSolver<CMatrix> hf_eig(hf);
  const CMatrix& hf_vecs = hf_eig.eigenvectors();
  const Eigen::VectorXd& hf_vals = hf_eig.eigenvalues();

  Trajectory traj;
  traj.dt = dt;
  traj.n_steps = n_steps;
  traj.seed = rng.seed();
  traj.rho0 = rho0;
  traj.dW.reserve(n_steps);
  traj.dr.reserve(n_steps);
  traj.lambda.reserve(n_steps);
  traj.fidelity.reserve(n_steps + 1);

  DensityMatrix rho = rho0;
  traj.fidelity.push_back(fidelity(rho, target));
  if (options.keep_states) traj.states.push_back(rho);
  controller.reset(rho0);

  const double sqrt_dt = std::sqrt(dt);
  for (std::size_t k = 0; k < n_steps; ++k) {
    const double dW = sqrt_dt * rng.normal();
    SmeStepResult meas = sme_step(SmeStepInput{rho, h0, c, model.eta, dt, dW});
    // The update depends on dW only through dr. Storing the increment as
    // reconstructed from dr keeps record-based filters bit-consistent with it.
    traj.dW.push_back(std::sqrt(model.eta) * (meas.dr - quadrature_mean(c, rho) * dt));
    traj.dr.push_back(meas.dr);

    Observation obs;
    obs.step = k;
    obs.record = std::span<const double>(traj.dr.data(), traj.dr.size());
    obs.dt = dt;
    obs.true_state = controller.privileged() ? &meas.rho : nullptr;
    const double lambda = controller.act(obs);
    if (!std::isfinite(lambda)) {
      throw std::runtime_error("simulate: controller returned a non-finite control value at step " +
                               std::to_string(k));
    }
    traj.lambda.push_back(lambda);

    if (lambda != 0.0) {
      CVector phases(hf_vals.size());
      for (Eigen::Index j = 0; j < hf_vals.size(); ++j) {
        phases(j) = std::polar(1.0, -lambda * dt * hf_vals(j));
      }
      const CMatrix u = hf_vecs * phases.asDiagonal() * hf_vecs.adjoint();
      rho = DensityMatrix::from_unnormalized(u * meas.rho.mat() * u.adjoint());
    } else {
      rho = std::move(meas.rho);
    }

    const double lowest = eigh_smallest(rho);
    if (lowest < -options.negativity_tol) {
      throw TrajectoryRejected("simulate: state lost positivity at step " + std::to_string(k) +
                               " (smallest eigenvalue " + std::to_string(lowest) + ")");
    }
    traj.fidelity.push_back(fidelity(rho, target));
    if (options.keep_states) traj.states.push_back(rho);
  }
  traj.final_state = rho;
  return traj;
}

namespace {

CMatrix rk4_step(const CMatrix& h, const CMatrix& c, const CMatrix& cdc, const CMatrix& r, double dt) {
  const CMatrix k1 = lindblad_rhs(h, c, cdc, r);
  const CMatrix k2 = lindblad_rhs(h, c, cdc, r + 0.5 * dt * k1);
  const CMatrix k3 = lindblad_rhs(h, c, cdc, r + 0.5 * dt * k2);
  const CMatrix k4 = lindblad_rhs(h, c, cdc, r + dt * k3);
  return r + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace

std::vector<DensityMatrix> lindblad_solve(const SystemModel& model, const DensityMatrix& rho0,
                                          std::span<const double> lambda_schedule,
                                          std::size_t n_steps, double dt) {
  model.validate();
  if (!(dt > 0.0) || dt * model.kappa > 0.05) {
    throw std::invalid_argument("lindblad_solve: need 0 < dt * kappa <= 0.05");
  }
  if (!lambda_schedule.empty() && lambda_schedule.size() < n_steps) {
    throw std::invalid_argument("lindblad_solve: schedule shorter than n_steps");
  }
  if (rho0.dim() != model.hilbert_dim()) {
    throw DimensionError("lindblad_solve: state dimension does not match the model");
  }
  const CMatrix c = jump_operator(model);
  const CMatrix cdc = c.adjoint() * c;
  const CMatrix h_zero = hamiltonian(model, 0.0);

  std::vector<DensityMatrix> out;
  out.reserve(n_steps + 1);
  out.push_back(rho0);
  CMatrix r = rho0.mat();
  for (std::size_t k = 0; k < n_steps; ++k) {
    r = rk4_step(lambda_schedule.empty() ? h_zero : hamiltonian(model, lambda_schedule[k]), c, cdc, r, dt);
    out.emplace_back(r);
  }
  return out;
}

std::vector<DensityMatrix> lindblad_solve(const CMatrix& h, const CMatrix& c, const DensityMatrix& rho0,
                                          std::size_t n_steps, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("lindblad_solve: dt must be positive");
  if (h.rows() != rho0.mat().rows() || c.rows() != rho0.mat().rows()) {
    throw DimensionError("lindblad_solve: operator dimensions do not match the state");
  }
  const CMatrix cdc = c.adjoint() * c;
  std::vector<DensityMatrix> out;
  out.reserve(n_steps + 1);
  out.push_back(rho0);
  CMatrix r = rho0.mat();
  for (std::size_t k = 0; k < n_steps; ++k) {
    r = rk4_step(h, c, cdc, r, dt);
    out.emplace_back(r);
  }
  return out;
}

}  // namespace qfc
