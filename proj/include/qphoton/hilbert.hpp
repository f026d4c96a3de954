#pragma once

#include <cmath>
#include <string_view>
#include <vector>

#include "qphoton/types.hpp"

namespace qphoton {

enum class Axis { Identity, X, Y, Z };

Axis parse_axis(std::string_view label);
std::string_view axis_name(Axis axis);

inline constexpr double kStateTolerance = 1e-9;
inline constexpr double kIntegratorPositivityTolerance = 1e-7;

/// Truncated transmon (x) Fock space. The transmon index varies slowest, so
/// the block rho(level_i, level_j) is a contiguous (cutoff+1)^2 sub-matrix.
class HilbertSpec {
 public:
  HilbertSpec(int transmon_levels, int fock_cutoff);

  /// Two-level qubit with photon numbers 0..4.
  static HilbertSpec reconstruction() { return {2, 4}; }

  int transmon_levels() const { return levels_; }
  int fock_cutoff() const { return cutoff_; }
  int fock_dim() const { return cutoff_ + 1; }
  int dim() const { return levels_ * (cutoff_ + 1); }
  int index(int level, int photons) const { return level * (cutoff_ + 1) + photons; }

  bool operator==(const HilbertSpec&) const = default;

 private:
  int levels_;
  int cutoff_;
};

// Single-factor matrices. Ladder factors are templated so oracles can use
// extended precision.
template <typename Scalar = double>
CMatrix<Scalar> fock_annihilation(int cutoff) {
  CMatrix<Scalar> a = CMatrix<Scalar>::Zero(cutoff + 1, cutoff + 1);
  for (int n = 1; n <= cutoff; ++n) a(n - 1, n) = std::sqrt(static_cast<Scalar>(n));
  return a;
}

/// |g><e| with weight 1 and, for three levels, |e><f| with weight sqrt(2).
template <typename Scalar = double>
CMatrix<Scalar> transmon_lowering_factor(int levels) {
  CMatrix<Scalar> l = CMatrix<Scalar>::Zero(levels, levels);
  l(0, 1) = 1;
  if (levels == 3) l(1, 2) = std::sqrt(Scalar(2));
  return l;
}

/// Pauli matrix in (g, e) order with sigma_z|g> = +|g>; embedded in the g,e
/// block (zeros on f) for three levels.
Matrix pauli_factor(Axis axis, int levels);

/// Kronecker product, transmon factor first.
Matrix kron(const Matrix& transmon, const Matrix& field);

class Operator {
 public:
  Operator(HilbertSpec space, Matrix entries);

  const HilbertSpec& space() const { return space_; }
  const Matrix& matrix() const { return entries_; }
  Complex operator()(int row, int col) const { return entries_(row, col); }

  Operator adjoint() const { return {space_, entries_.adjoint()}; }

  friend Operator operator+(const Operator& a, const Operator& b);
  friend Operator operator-(const Operator& a, const Operator& b);
  friend Operator operator*(const Operator& a, const Operator& b);
  friend Operator operator*(Complex s, const Operator& a) { return {a.space_, s * a.entries_}; }
  friend Operator operator*(const Operator& a, Complex s) { return s * a; }

 private:
  HilbertSpec space_;
  Matrix entries_;
};

Operator identity(const HilbertSpec& space);
Operator annihilation(const HilbertSpec& space);
Operator creation(const HilbertSpec& space);
Operator number(const HilbertSpec& space);
Operator transmon_lowering(const HilbertSpec& space);
Operator pauli(const HilbertSpec& space, Axis axis);
/// Projector |level><level| on the transmon factor.
Operator transmon_projector(const HilbertSpec& space, int level);
/// exp(i phi a^dagger a), the local-oscillator phase of the field.
Operator field_phase(const HilbertSpec& space, double phi);
/// Operator on the joint space from a transmon factor and a field factor.
Operator tensor(const Matrix& transmon, const Matrix& field);

class KetState {
 public:
  KetState(HilbertSpec space, Vector amplitudes);

  /// Normalizes the given amplitudes first.
  static KetState normalized(HilbertSpec space, Vector amplitudes);
  static KetState basis(HilbertSpec space, int level, int photons);

  const HilbertSpec& space() const { return space_; }
  const Vector& amplitudes() const { return amplitudes_; }

 private:
  HilbertSpec space_;
  Vector amplitudes_;
};

class DensityMatrix {
 public:
  /// Validates Hermiticity and unit trace to `tolerance` and the spectrum
  /// against -positivity_tolerance.
  DensityMatrix(HilbertSpec space, Matrix entries, double tolerance = kStateTolerance,
                double positivity_tolerance = kStateTolerance);

  static DensityMatrix pure(const KetState& ket);
  static DensityMatrix maximally_mixed(const HilbertSpec& space);

  const HilbertSpec& space() const { return space_; }
  const Matrix& matrix() const { return entries_; }
  Complex operator()(int row, int col) const { return entries_(row, col); }

  /// Block <level_i| rho |level_j> over the Fock factor.
  Matrix transmon_block(int level_i, int level_j) const;

 private:
  HilbertSpec space_;
  Matrix entries_;
};

double min_eigenvalue(const Matrix& hermitian);
/// (m + m^dagger) / 2 scaled to unit trace.
Matrix hermitize_normalize(const Matrix& m);

Complex expectation(const DensityMatrix& rho, const Operator& op);
DensityMatrix apply_unitary(const DensityMatrix& rho, const Operator& unitary);

Matrix partial_trace_field(const DensityMatrix& rho);
Matrix partial_trace_qubit(const DensityMatrix& rho);
double purity(const Matrix& rho);

struct Collapse {
  Operator op;
  double rate;
};

/// Fixed-step RK4 integration of the Lindblad equation without any
/// post-processing. The number of steps is ceil(duration / dt) so the last
/// step lands exactly on `duration`.
Matrix lindblad_integrate(const Matrix& rho, const Operator& hamiltonian,
                          const std::vector<Collapse>& collapse_ops, double duration, double dt);

/// lindblad_integrate followed by re-Hermitization and trace renormalization.
/// Throws std::runtime_error when the trace drifted by more than 1e-4.
DensityMatrix lindblad_evolve(const DensityMatrix& rho, const Operator& hamiltonian,
                              const std::vector<Collapse>& collapse_ops, double duration,
                              double dt);

double fidelity_to_pure(const DensityMatrix& rho, const KetState& target);

/// Wootters concurrence of a 4x4 two-qubit density matrix.
double concurrence_two_qubit(const Matrix& rho4);

}  // namespace qphoton
