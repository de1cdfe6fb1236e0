#include "qfc/complexmat.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace qfc {

namespace {

void require_square(const CMatrix& a, const char* what) {
  if (a.rows() != a.cols()) {
    throw DimensionError(std::string(what) + ": matrix must be square, got " +
                         std::to_string(a.rows()) + "x" + std::to_string(a.cols()));
  }
}

}  // namespace

CMatrix matmul(const CMatrix& a, const CMatrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ (" + std::to_string(a.cols()) +
                         " vs " + std::to_string(b.rows()) + ")");
  }
  return a * b;
}

CMatrix dagger(const CMatrix& a) { return a.adjoint(); }

Complex trace(const CMatrix& a) {
  require_square(a, "trace");
  return a.trace();
}

CMatrix kron(const CMatrix& a, const CMatrix& b) {
  CMatrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    }
  }
  return out;
}

CMatrix commutator(const CMatrix& a, const CMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError("commutator: shape mismatch");
  }
  return a * b - b * a;
}

double hermiticity_error(const CMatrix& a) {
  require_square(a, "hermiticity_error");
  return (a - a.adjoint()).cwiseAbs().maxCoeff();
}

CMatrix expm_hermitian(const CMatrix& h, double angle) {
  require_square(h, "expm_hermitian");
  if (h.rows() == 0) {
    return h;
  }
  if (hermiticity_error(h) > kHermitianTol) {
    throw std::invalid_argument("expm_hermitian: generator is not Hermitian");
  }
  Eigen::SelfAdjointEigenSolver<CMatrix> solver(h);
  if (solver.info() != Eigen::Success) {
    throw std::runtime_error("expm_hermitian: eigendecomposition failed");
  }
  const Eigen::VectorXd& e = solver.eigenvalues();
  CVector phases(e.size());
  for (Eigen::Index k = 0; k < e.size(); ++k) {
    phases(k) = std::polar(1.0, -angle * e(k));
  }
  const CMatrix& v = solver.eigenvectors();
  return v * phases.asDiagonal() * v.adjoint();
}

CMatrix identity(std::size_t dim) {
  return CMatrix::Identity(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
}

CMatrix sigma_x() {
  CMatrix m(2, 2);
  m << 0.0, 1.0, 1.0, 0.0;
  return m;
}

CMatrix sigma_y() {
  CMatrix m(2, 2);
  m << 0.0, Complex(0.0, -1.0), Complex(0.0, 1.0), 0.0;
  return m;
}

CMatrix sigma_z() {
  CMatrix m(2, 2);
  m << 1.0, 0.0, 0.0, -1.0;
  return m;
}

CMatrix sigma_minus() {
  CMatrix m = CMatrix::Zero(2, 2);
  m(0, 1) = 1.0;
  return m;
}

CMatrix sigma_plus() { return sigma_minus().adjoint(); }

CMatrix annihilation(std::size_t dim) {
  CMatrix a = CMatrix::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  for (std::size_t n = 1; n < dim; ++n) {
    a(static_cast<Eigen::Index>(n - 1), static_cast<Eigen::Index>(n)) =
        std::sqrt(static_cast<double>(n));
  }
  return a;
}

PureState::PureState(CVector vec) : vec_(std::move(vec)) {
  if (vec_.size() == 0) {
    throw DimensionError("PureState: empty vector");
  }
  if (std::abs(vec_.norm() - 1.0) > 1e-12) {
    throw std::invalid_argument("PureState: vector is not normalized");
  }
}

PureState PureState::normalized(CVector vec) {
  const double n = vec.norm();
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw std::invalid_argument("PureState: cannot normalize a zero vector");
  }
  return PureState(vec / n);
}

PureState kron(const PureState& a, const PureState& b) {
  CVector out(a.vec().size() * b.vec().size());
  for (Eigen::Index i = 0; i < a.vec().size(); ++i) {
    out.segment(i * b.vec().size(), b.vec().size()) = a.vec()(i) * b.vec();
  }
  return PureState::normalized(std::move(out));
}

DensityMatrix::DensityMatrix(CMatrix mat) : mat_(std::move(mat)) {
  require_square(mat_, "DensityMatrix");
  if (mat_.rows() == 0) {
    throw DimensionError("DensityMatrix: empty matrix");
  }
  if (!mat_.allFinite()) {
    throw std::invalid_argument("DensityMatrix: non-finite entries");
  }
  if (std::abs(mat_.trace() - Complex(1.0, 0.0)) > kTraceTol) {
    throw std::invalid_argument("DensityMatrix: trace differs from one");
  }
  if (hermiticity_error(mat_) > kHermitianTol) {
    throw std::invalid_argument("DensityMatrix: not Hermitian");
  }
  if (eigh_smallest(*this) < -kNegativityTol) {
    throw std::invalid_argument("DensityMatrix: negative eigenvalue");
  }
}

DensityMatrix::DensityMatrix(const PureState& psi) : mat_(psi.projector()) {}

DensityMatrix DensityMatrix::from_unnormalized(const CMatrix& mat) {
  require_square(mat, "DensityMatrix::from_unnormalized");
  CMatrix sym = 0.5 * (mat + mat.adjoint());
  const double tr = sym.trace().real();
  if (!(tr > 0.0) || !std::isfinite(tr)) {
    throw std::domain_error("DensityMatrix: non-positive trace after update");
  }
  sym /= tr;
  return DensityMatrix(std::move(sym), Unchecked{});
}

double DensityMatrix::purity() const { return (mat_ * mat_).trace().real(); }

Complex expect(const CMatrix& op, const DensityMatrix& rho) {
  require_square(op, "expect");
  if (op.rows() != rho.mat().rows()) {
    throw DimensionError("expect: operator and state dimensions differ");
  }
  // Tr(A B) = sum_ij A_ij B_ji
  return (op.transpose().cwiseProduct(rho.mat())).sum();
}

double eigh_smallest(const DensityMatrix& rho) {
  const CMatrix herm = 0.5 * (rho.mat() + rho.mat().adjoint());
  if (herm.rows() == 2) {
    const double a = herm(0, 0).real();
    const double d = herm(1, 1).real();
    const double off = std::abs(herm(0, 1));
    return 0.5 * (a + d) - std::sqrt(0.25 * (a - d) * (a - d) + off * off);
  }
  Eigen::SelfAdjointEigenSolver<CMatrix> solver(herm, Eigen::EigenvaluesOnly);
  return solver.eigenvalues()(0);
}

CMatrix partial_trace_second(const CMatrix& m, std::size_t d1, std::size_t d2) {
  if (static_cast<std::size_t>(m.rows()) != d1 * d2 || m.rows() != m.cols()) {
    throw DimensionError("partial_trace_second: dimension mismatch");
  }
  CMatrix out = CMatrix::Zero(static_cast<Eigen::Index>(d1), static_cast<Eigen::Index>(d1));
  const auto n2 = static_cast<Eigen::Index>(d2);
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(d1); ++i) {
    for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(d1); ++j) {
      Complex s = 0.0;
      for (Eigen::Index k = 0; k < n2; ++k) {
        s += m(i * n2 + k, j * n2 + k);
      }
      out(i, j) = s;
    }
  }
  return out;
}

}  // namespace qfc
