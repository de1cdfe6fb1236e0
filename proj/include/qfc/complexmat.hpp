// complexmat.hpp: dense complex linear algebra for small Hilbert spaces.
//
// Operators live in Eigen's dynamic complex matrices. DensityMatrix and
// PureState wrap them with the invariants the simulator relies on.

#pragma once

#include <Eigen/Dense>

#include <complex>
#include <cstddef>
#include <stdexcept>

namespace qfc {

using Complex = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Tolerances used when validating states.
inline constexpr double kTraceTol = 1e-9;
inline constexpr double kHermitianTol = 1e-9;
inline constexpr double kNegativityTol = 1e-7;

CMatrix matmul(const CMatrix& a, const CMatrix& b);
CMatrix dagger(const CMatrix& a);
Complex trace(const CMatrix& a);
CMatrix kron(const CMatrix& a, const CMatrix& b);
CMatrix commutator(const CMatrix& a, const CMatrix& b);

// Largest |a_ij - conj(a_ji)|.
double hermiticity_error(const CMatrix& a);

// exp(-i * angle * h) for Hermitian h, computed by eigendecomposition.
CMatrix expm_hermitian(const CMatrix& h, double angle);

// Pauli and ladder operators. sigma_minus maps |1> to |0>; sigma_z|0> = +|0>.
CMatrix identity(std::size_t dim);
CMatrix sigma_x();
CMatrix sigma_y();
CMatrix sigma_z();
CMatrix sigma_minus();
CMatrix sigma_plus();
CMatrix annihilation(std::size_t dim);

class PureState {
 public:
  PureState() = default;
  // Throws if the vector is not unit-norm within 1e-12.
  explicit PureState(CVector vec);
  // Normalizes the input first; throws on a zero vector.
  static PureState normalized(CVector vec);

  const CVector& vec() const noexcept { return vec_; }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(vec_.size()); }
  CMatrix projector() const { return vec_ * vec_.adjoint(); }

 private:
  CVector vec_;
};

PureState kron(const PureState& a, const PureState& b);

class DensityMatrix {
 public:
  DensityMatrix() = default;
  // Validates trace, Hermiticity and (loosely) positivity.
  explicit DensityMatrix(CMatrix mat);
  explicit DensityMatrix(const PureState& psi);

  // Symmetrizes and renormalizes; throws std::domain_error if the trace is not
  // positive. No positivity check.
  static DensityMatrix from_unnormalized(const CMatrix& mat);

  const CMatrix& mat() const noexcept { return mat_; }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(mat_.rows()); }
  double purity() const;

 private:
  struct Unchecked {};
  DensityMatrix(CMatrix mat, Unchecked) : mat_(std::move(mat)) {}
  CMatrix mat_;
};

// Tr(op * rho).
Complex expect(const CMatrix& op, const DensityMatrix& rho);

// Smallest eigenvalue of the Hermitian part of rho.
double eigh_smallest(const DensityMatrix& rho);

// Partial trace over the second tensor factor of a (d1*d2)-dimensional matrix.
CMatrix partial_trace_second(const CMatrix& m, std::size_t d1, std::size_t d2);

}  // namespace qfc
