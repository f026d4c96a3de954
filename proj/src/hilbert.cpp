#include "qphoton/hilbert.hpp"

#include <algorithm>
#include <array>
#include <functional>
#include <stdexcept>
#include <string>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <Eigen/Sparse>

namespace qphoton {

Axis parse_axis(std::string_view label) {
  if (label == "identity" || label == "i" || label == "I") return Axis::Identity;
  if (label == "x" || label == "X") return Axis::X;
  if (label == "y" || label == "Y") return Axis::Y;
  if (label == "z" || label == "Z") return Axis::Z;
  throw std::invalid_argument("unknown Pauli axis '" + std::string(label) + "'");
}

std::string_view axis_name(Axis axis) {
  switch (axis) {
    case Axis::Identity: return "identity";
    case Axis::X: return "x";
    case Axis::Y: return "y";
    case Axis::Z: return "z";
  }
  return "?";
}

HilbertSpec::HilbertSpec(int transmon_levels, int fock_cutoff)
    : levels_(transmon_levels), cutoff_(fock_cutoff) {
  if (levels_ != 2 && levels_ != 3)
    throw std::invalid_argument("transmon_levels must be 2 or 3");
  if (cutoff_ < 1) throw std::invalid_argument("fock_cutoff must be >= 1");
}

Matrix pauli_factor(Axis axis, int levels) {
  Matrix s = Matrix::Zero(levels, levels);
  switch (axis) {
    case Axis::Identity:
      s(0, 0) = s(1, 1) = 1.0;
      break;
    case Axis::X:
      s(0, 1) = s(1, 0) = 1.0;
      break;
    case Axis::Y:
      // sigma_y|g> = i|e>
      s(1, 0) = kI;
      s(0, 1) = -kI;
      break;
    case Axis::Z:
      s(0, 0) = 1.0;
      s(1, 1) = -1.0;
      break;
  }
  return s;
}

Matrix kron(const Matrix& transmon, const Matrix& field) {
  const auto fr = field.rows(), fc = field.cols();
  Matrix out(transmon.rows() * fr, transmon.cols() * fc);
  for (Eigen::Index i = 0; i < transmon.rows(); ++i)
    for (Eigen::Index j = 0; j < transmon.cols(); ++j)
      out.block(i * fr, j * fc, fr, fc) = transmon(i, j) * field;
  return out;
}

namespace {

void require_same_space(const HilbertSpec& a, const HilbertSpec& b) {
  if (!(a == b)) throw std::invalid_argument("operators live on different Hilbert spaces");
}

Matrix fock_identity(const HilbertSpec& s) { return Matrix::Identity(s.fock_dim(), s.fock_dim()); }
Matrix transmon_identity(const HilbertSpec& s) {
  return Matrix::Identity(s.transmon_levels(), s.transmon_levels());
}

}  // namespace

Operator::Operator(HilbertSpec space, Matrix entries) : space_(space), entries_(std::move(entries)) {
  if (entries_.rows() != space_.dim() || entries_.cols() != space_.dim())
    throw std::invalid_argument("operator dimension does not match its Hilbert space");
}

Operator operator+(const Operator& a, const Operator& b) {
  require_same_space(a.space_, b.space_);
  return {a.space_, a.entries_ + b.entries_};
}

Operator operator-(const Operator& a, const Operator& b) {
  require_same_space(a.space_, b.space_);
  return {a.space_, a.entries_ - b.entries_};
}

Operator operator*(const Operator& a, const Operator& b) {
  require_same_space(a.space_, b.space_);
  return {a.space_, a.entries_ * b.entries_};
}

Operator identity(const HilbertSpec& space) {
  return {space, Matrix::Identity(space.dim(), space.dim())};
}

Operator annihilation(const HilbertSpec& space) {
  return {space, kron(transmon_identity(space), fock_annihilation(space.fock_cutoff()))};
}

Operator creation(const HilbertSpec& space) { return annihilation(space).adjoint(); }

Operator number(const HilbertSpec& space) { return creation(space) * annihilation(space); }

Operator transmon_lowering(const HilbertSpec& space) {
  return {space, kron(transmon_lowering_factor(space.transmon_levels()), fock_identity(space))};
}

Operator pauli(const HilbertSpec& space, Axis axis) {
  return {space, kron(pauli_factor(axis, space.transmon_levels()), fock_identity(space))};
}

Operator transmon_projector(const HilbertSpec& space, int level) {
  Matrix p = Matrix::Zero(space.transmon_levels(), space.transmon_levels());
  p(level, level) = 1.0;
  return {space, kron(p, fock_identity(space))};
}

Operator field_phase(const HilbertSpec& space, double phi) {
  Matrix f = Matrix::Zero(space.fock_dim(), space.fock_dim());
  for (int n = 0; n < space.fock_dim(); ++n) f(n, n) = std::polar(1.0, phi * n);
  return {space, kron(transmon_identity(space), f)};
}

Operator tensor(const Matrix& transmon, const Matrix& field) {
  if (transmon.rows() != transmon.cols() || field.rows() != field.cols())
    throw std::invalid_argument("tensor factors must be square");
  HilbertSpec space(static_cast<int>(transmon.rows()), static_cast<int>(field.rows()) - 1);
  return {space, kron(transmon, field)};
}

KetState::KetState(HilbertSpec space, Vector amplitudes)
    : space_(space), amplitudes_(std::move(amplitudes)) {
  if (amplitudes_.size() != space_.dim())
    throw std::invalid_argument("ket dimension does not match its Hilbert space");
  if (std::abs(amplitudes_.norm() - 1.0) > 1e-12)
    throw std::invalid_argument("ket is not normalized");
}

KetState KetState::normalized(HilbertSpec space, Vector amplitudes) {
  const double norm = amplitudes.norm();
  if (norm == 0.0) throw std::invalid_argument("cannot normalize the zero vector");
  return {space, amplitudes / norm};
}

KetState KetState::basis(HilbertSpec space, int level, int photons) {
  Vector v = Vector::Zero(space.dim());
  v(space.index(level, photons)) = 1.0;
  return {space, v};
}

double min_eigenvalue(const Matrix& hermitian) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(hermitian, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

Matrix hermitize_normalize(const Matrix& m) {
  Matrix h = 0.5 * (m + m.adjoint());
  return h / h.trace().real();
}

DensityMatrix::DensityMatrix(HilbertSpec space, Matrix entries, double tolerance,
                             double positivity_tolerance)
    : space_(space), entries_(std::move(entries)) {
  if (entries_.rows() != space_.dim() || entries_.cols() != space_.dim())
    throw std::invalid_argument("density matrix dimension does not match its Hilbert space");
  if ((entries_ - entries_.adjoint()).cwiseAbs().maxCoeff() > tolerance)
    throw std::invalid_argument("density matrix is not Hermitian");
  if (std::abs(entries_.trace() - 1.0) > tolerance)
    throw std::invalid_argument("density matrix trace differs from 1");
  if (min_eigenvalue(entries_) < -positivity_tolerance)
    throw std::invalid_argument("density matrix has a negative eigenvalue");
}

DensityMatrix DensityMatrix::pure(const KetState& ket) {
  const Vector& v = ket.amplitudes();
  return {ket.space(), v * v.adjoint()};
}

DensityMatrix DensityMatrix::maximally_mixed(const HilbertSpec& space) {
  return {space, Matrix::Identity(space.dim(), space.dim()) / static_cast<double>(space.dim())};
}

Matrix DensityMatrix::transmon_block(int level_i, int level_j) const {
  const int f = space_.fock_dim();
  return entries_.block(level_i * f, level_j * f, f, f);
}

Complex expectation(const DensityMatrix& rho, const Operator& op) {
  require_same_space(rho.space(), op.space());
  // tr(rho op) without forming the product.
  return (rho.matrix().transpose().cwiseProduct(op.matrix())).sum();
}

DensityMatrix apply_unitary(const DensityMatrix& rho, const Operator& unitary) {
  require_same_space(rho.space(), unitary.space());
  Matrix out = unitary.matrix() * rho.matrix() * unitary.matrix().adjoint();
  return {rho.space(), 0.5 * (out + out.adjoint())};
}

Matrix partial_trace_field(const DensityMatrix& rho) {
  const int levels = rho.space().transmon_levels();
  Matrix q(levels, levels);
  for (int i = 0; i < levels; ++i)
    for (int j = 0; j < levels; ++j) q(i, j) = rho.transmon_block(i, j).trace();
  return q;
}

Matrix partial_trace_qubit(const DensityMatrix& rho) {
  const int f = rho.space().fock_dim();
  Matrix field = Matrix::Zero(f, f);
  for (int l = 0; l < rho.space().transmon_levels(); ++l) field += rho.transmon_block(l, l);
  return field;
}

double purity(const Matrix& rho) { return (rho * rho).trace().real(); }

Matrix lindblad_integrate(const Matrix& rho, const Operator& hamiltonian,
                          const std::vector<Collapse>& collapse_ops, double duration, double dt) {
  if (duration < 0.0) throw std::invalid_argument("negative evolution duration");
  if (!(dt > 0.0)) throw std::invalid_argument("time step must be positive");
  if (duration == 0.0) return rho;

  using Sparse = Eigen::SparseMatrix<Complex>;
  const auto& space = hamiltonian.space();
  Matrix h_eff = hamiltonian.matrix();
  std::vector<Sparse> jumps;
  for (const auto& c : collapse_ops) {
    require_same_space(space, c.op.space());
    if (c.rate < 0.0) throw std::invalid_argument("negative collapse rate");
    if (c.rate == 0.0) continue;
    const Matrix& l = c.op.matrix();
    h_eff -= 0.5 * kI * c.rate * (l.adjoint() * l);
    jumps.push_back((std::sqrt(c.rate) * l).sparseView(1.0, 1e-300));
  }
  const Sparse h = h_eff.sparseView(1.0, 1e-300);

  // d rho/dt = -i (H_eff rho - rho H_eff^dag) + sum_k J_k rho J_k^dag; rho is
  // Hermitian throughout, so rho H_eff^dag = (H_eff rho)^dag.
  auto rhs = [&](const Matrix& r) {
    Matrix a = h * r;
    Matrix out = -kI * (a - a.adjoint());
    for (const auto& j : jumps) {
      Matrix b = j * r;
      out.noalias() += j * b.adjoint();
    }
    return out;
  };

  const auto steps = static_cast<long>(std::ceil(duration / dt - 1e-9));
  const double step = duration / static_cast<double>(steps);
  Matrix state = rho;
  for (long s = 0; s < steps; ++s) {
    const Matrix k1 = rhs(state);
    const Matrix k2 = rhs(state + 0.5 * step * k1);
    const Matrix k3 = rhs(state + 0.5 * step * k2);
    const Matrix k4 = rhs(state + step * k3);
    state += (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return state;
}

DensityMatrix lindblad_evolve(const DensityMatrix& rho, const Operator& hamiltonian,
                              const std::vector<Collapse>& collapse_ops, double duration,
                              double dt) {
  require_same_space(rho.space(), hamiltonian.space());
  Matrix out = lindblad_integrate(rho.matrix(), hamiltonian, collapse_ops, duration, dt);
  const double drift = std::abs(out.trace() - 1.0);
  if (drift > 1e-4)
    throw std::runtime_error("Lindblad trace drift " + std::to_string(drift) +
                             " exceeds 1e-4; time step too large");
  return {rho.space(), hermitize_normalize(out), kStateTolerance, kIntegratorPositivityTolerance};
}

double fidelity_to_pure(const DensityMatrix& rho, const KetState& target) {
  require_same_space(rho.space(), target.space());
  const Vector& psi = target.amplitudes();
  const Complex f = psi.dot(rho.matrix() * psi);
  if (std::abs(f.imag()) > 1e-9) throw std::runtime_error("fidelity has an imaginary part");
  return std::clamp(f.real(), 0.0, 1.0);
}

double concurrence_two_qubit(const Matrix& rho4) {
  if (rho4.rows() != 4 || rho4.cols() != 4)
    throw std::invalid_argument("concurrence needs a 4x4 density matrix");
  if ((rho4 - rho4.adjoint()).cwiseAbs().maxCoeff() > kStateTolerance)
    throw std::invalid_argument("concurrence input is not Hermitian");
  if (std::abs(rho4.trace() - 1.0) > kStateTolerance)
    throw std::invalid_argument("concurrence input trace differs from 1");
  if (min_eigenvalue(rho4) < -kStateTolerance)
    throw std::invalid_argument("concurrence input is not positive");

  // The Wootters lambdas are the singular values of sqrt(rho) F conj(sqrt(rho))
  // with F = sigma_y (x) sigma_y. Working with singular values avoids the
  // square roots of near-zero eigenvalues that cost half the digits.
  const Matrix sy = pauli_factor(Axis::Y, 2);
  const Matrix flip = kron(sy, sy);
  Eigen::SelfAdjointEigenSolver<Matrix> es(rho4);
  const Matrix root = es.eigenvectors() *
                      es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
                      es.eigenvectors().adjoint();
  Eigen::JacobiSVD<Matrix> svd(root * flip * root.conjugate());
  const RealVector lambda = svd.singularValues();  // sorted, largest first
  return std::max(0.0, lambda(0) - lambda(1) - lambda(2) - lambda(3));
}

}  // namespace qphoton
