#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include "qphoton/dynamics.hpp"
#include "qphoton/hilbert.hpp"
#include "test_util.hpp"

namespace qphoton {
namespace {

using testing::max_abs;
using testing::random_state;

const HilbertSpec kSpace = HilbertSpec::reconstruction();

Vector fock_ket(int cutoff, int n) {
  Vector v = Vector::Zero(cutoff + 1);
  v(n) = 1.0;
  return v;
}

KetState psi() { return bell_target(); }

TEST(Ladder, AnnihilationMatrixElements) {
  const Matrix a = fock_annihilation(4);
  EXPECT_DOUBLE_EQ((a * fock_ket(4, 1))(0).real(), 1.0);
  EXPECT_DOUBLE_EQ((a * fock_ket(4, 0)).norm(), 0.0);
  EXPECT_NEAR((a * fock_ket(4, 2))(1).real(), 1.41421356, 1e-8);
}

TEST(Ladder, TransmonLowering) {
  const Matrix two = transmon_lowering_factor(2);
  const Vector g = Vector::Unit(2, 0), e = Vector::Unit(2, 1);
  EXPECT_NEAR((two * e - g).norm(), 0.0, 1e-15);
  EXPECT_NEAR((two * g).norm(), 0.0, 1e-15);
  const Matrix three = transmon_lowering_factor(3);
  EXPECT_NEAR((three * Vector::Unit(3, 2))(1).real(), std::sqrt(2.0), 1e-15);
}

TEST(Ladder, CommutatorFailsOnlyAtCutoff) {
  const int c = 6;
  const Matrix a = fock_annihilation(c);
  const Matrix comm = a * a.adjoint() - a.adjoint() * a;
  for (int i = 0; i <= c; ++i)
    for (int j = 0; j <= c; ++j) {
      const double expected = i == j ? (i == c ? -c : 1.0) : 0.0;
      EXPECT_NEAR(comm(i, j).real(), expected, 1e-12) << i << "," << j;
    }
}

TEST(Pauli, Algebra) {
  const Matrix x = pauli_factor(Axis::X, 2), y = pauli_factor(Axis::Y, 2), z = pauli_factor(Axis::Z, 2);
  EXPECT_NEAR((z * Vector::Unit(2, 0) - Vector::Unit(2, 0)).norm(), 0.0, 1e-15);
  EXPECT_NEAR(max_abs(x * x - Matrix::Identity(2, 2)), 0.0, 1e-15);
  EXPECT_NEAR(max_abs(x * y - kI * z), 0.0, 1e-15);
}

TEST(Pauli, EmbeddedInThreeLevels) {
  const Matrix z = pauli_factor(Axis::Z, 3);
  EXPECT_EQ(z(2, 2), Complex(0.0));
  EXPECT_EQ(z(0, 0), Complex(1.0));
}

TEST(Expectation, ExamplesOnBellState) {
  const DensityMatrix e0 = DensityMatrix::pure(KetState::basis(kSpace, 1, 0));
  EXPECT_NEAR(std::abs(expectation(e0, number(kSpace))), 0.0, 1e-15);

  const DensityMatrix rho = DensityMatrix::pure(psi());
  EXPECT_NEAR(max_abs(partial_trace_field(rho) - 0.5 * Matrix::Identity(2, 2)), 0.0, 1e-15);
  const Operator nz = number(kSpace) * pauli(kSpace, Axis::Z);
  EXPECT_NEAR(expectation(rho, nz).real(), 0.5, 1e-15);
}

TEST(Expectation, TensorMatchesKron) {
  const Matrix x = pauli_factor(Axis::X, 2);
  const Matrix n = fock_annihilation(4).adjoint() * fock_annihilation(4);
  EXPECT_NEAR(max_abs(tensor(x, n).matrix() - kron(x, n)), 0.0, 0.0);
  EXPECT_NEAR(max_abs((pauli(kSpace, Axis::X) * number(kSpace)).matrix() - kron(x, n)), 0.0, 1e-15);
}

TEST(DensityMatrixType, RejectsInvalidMatrices) {
  Matrix bad = Matrix::Identity(kSpace.dim(), kSpace.dim());
  EXPECT_THROW(DensityMatrix(kSpace, bad), std::invalid_argument);  // trace 10
  Matrix neg = Matrix::Zero(kSpace.dim(), kSpace.dim());
  neg(0, 0) = 1.5;
  neg(1, 1) = -0.5;
  EXPECT_THROW(DensityMatrix(kSpace, neg), std::invalid_argument);
  Matrix wrong = Matrix::Identity(3, 3) / 3.0;
  EXPECT_THROW(DensityMatrix(kSpace, wrong), std::invalid_argument);
}

TEST(Fidelity, Examples) {
  std::mt19937_64 rng(3);
  const KetState t = testing::random_ket(kSpace, rng);
  EXPECT_NEAR(fidelity_to_pure(DensityMatrix::pure(t), t), 1.0, 1e-12);
  EXPECT_NEAR(fidelity_to_pure(DensityMatrix::maximally_mixed(kSpace), t), 1.0 / kSpace.dim(), 1e-12);
}

TEST(Fidelity, GlobalPhaseInvariant) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const DensityMatrix rho = random_state(kSpace, rng);
    const KetState t = testing::random_ket(kSpace, rng);
    const KetState shifted(kSpace, t.amplitudes() * std::polar(1.0, 0.37 * trial + 0.1));
    EXPECT_NEAR(fidelity_to_pure(rho, t), fidelity_to_pure(rho, shifted), 1e-12);
  }
}

Matrix two_qubit_bell() {
  Vector v = Vector::Zero(4);
  v(1) = v(2) = 1.0 / std::sqrt(2.0);
  return v * v.adjoint();
}

// Brute-force Wootters: sqrt-eigenvalues of rho (sy x sy) rho* (sy x sy),
// computed through the non-Hermitian eigen solver.
double wootters_oracle(const Matrix& rho) {
  const Matrix sy = pauli_factor(Axis::Y, 2);
  Matrix flip(4, 4);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) flip.block(2 * i, 2 * j, 2, 2) = sy(i, j) * sy;
  const Matrix r = rho * flip * rho.conjugate() * flip;
  Eigen::ComplexEigenSolver<Matrix> es(r);
  std::vector<double> l;
  for (int i = 0; i < 4; ++i) l.push_back(std::sqrt(std::max(0.0, es.eigenvalues()(i).real())));
  std::sort(l.rbegin(), l.rend());
  return std::max(0.0, l[0] - l[1] - l[2] - l[3]);
}

TEST(Concurrence, PureAndProduct) {
  EXPECT_NEAR(concurrence_two_qubit(two_qubit_bell()), 1.0, 1e-9);
  Matrix product = Matrix::Zero(4, 4);
  product(0, 0) = 1.0;
  EXPECT_NEAR(concurrence_two_qubit(product), 0.0, 1e-9);
}

TEST(Concurrence, WernerMatchesBruteForceAndAnalytic) {
  for (double p : {0.2, 0.3334, 0.5, 0.8, 1.0}) {
    const Matrix w = p * two_qubit_bell() + (1.0 - p) * Matrix::Identity(4, 4) / 4.0;
    const double c = concurrence_two_qubit(w);
    EXPECT_NEAR(c, std::max(0.0, (3.0 * p - 1.0) / 2.0), 1e-9) << p;
    EXPECT_NEAR(c, wootters_oracle(w), 1e-7) << p;
  }
  const Matrix w = 0.8 * two_qubit_bell() + 0.2 * Matrix::Identity(4, 4) / 4.0;
  EXPECT_NEAR(concurrence_two_qubit(w), 0.7, 1e-9);
}

TEST(Concurrence, RandomStatesMatchOracle) {
  std::mt19937_64 rng(11);
  const HilbertSpec qubits(2, 1);
  for (int trial = 0; trial < 50; ++trial) {
    const DensityMatrix rho = random_state(qubits, rng, 1 + trial % 4);
    EXPECT_NEAR(concurrence_two_qubit(rho.matrix()), wootters_oracle(rho.matrix()), 1e-7);
  }
}

TEST(Concurrence, LocalPhaseInvariant) {
  std::mt19937_64 rng(12);
  const HilbertSpec qubits(2, 1);
  for (int trial = 0; trial < 10; ++trial) {
    const DensityMatrix rho = random_state(qubits, rng, 2);
    // diag(1, a) (x) diag(1, b)
    const Complex a = std::polar(1.0, 0.7), b = std::polar(1.0, -1.1);
    Matrix u = Matrix::Identity(4, 4);
    u(1, 1) = b;
    u(2, 2) = a;
    u(3, 3) = a * b;
    EXPECT_NEAR(concurrence_two_qubit(rho.matrix()), concurrence_two_qubit(u * rho.matrix() * u.adjoint()),
                1e-9);
  }
}

TEST(PartialTrace, ProductStateFactors) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix gq = testing::ginibre(2, 2, rng), gf = testing::ginibre(5, 5, rng);
    const Matrix q = gq * gq.adjoint() / (gq * gq.adjoint()).trace();
    const Matrix f = gf * gf.adjoint() / (gf * gf.adjoint()).trace();
    const DensityMatrix joint(kSpace, kron(q, f));
    EXPECT_NEAR(max_abs(partial_trace_qubit(joint) - f), 0.0, 1e-15);
    EXPECT_NEAR(max_abs(partial_trace_field(joint) - q), 0.0, 1e-15);
  }
}

TEST(Lindblad, FreeDecay) {
  const HilbertSpec q(2, 1);
  const double t1 = 1e-6;
  const DensityMatrix e = DensityMatrix::pure(KetState::basis(q, 1, 0));
  const Operator h(q, Matrix::Zero(q.dim(), q.dim()));
  const DensityMatrix out = lindblad_evolve(e, h, {{transmon_lowering(q), 1.0 / t1}}, t1, 1e-9);
  EXPECT_NEAR(out(q.index(1, 0), q.index(1, 0)).real(), std::exp(-1.0), 1e-4);
}

TEST(Lindblad, VacuumRabiHalfPeriod) {
  const HilbertSpec s(2, 2);
  const double g = 2.0 * kPi * 65e6;
  const DensityMatrix start = DensityMatrix::pure(KetState::basis(s, 1, 0));
  const DensityMatrix out =
      lindblad_evolve(start, jc_hamiltonian(s, Transition::GE, g), {}, kPi / (2.0 * g), 1e-12);
  EXPECT_NEAR(out(s.index(0, 1), s.index(0, 1)).real(), 1.0, 1e-6);
}

TEST(Lindblad, ZeroDurationIsIdentity) {
  std::mt19937_64 rng(6);
  const DensityMatrix rho = random_state(kSpace, rng);
  const DensityMatrix out = lindblad_evolve(rho, number(kSpace), {{annihilation(kSpace), 1e6}}, 0.0, 1e-11);
  EXPECT_LT(max_abs(out.matrix() - rho.matrix()), 1e-15);
}

TEST(LindbladProperty, PreservesStateInvariants) {
  std::mt19937_64 rng(7);
  const HilbertSpec s(3, 3);
  const double g = 2.0 * kPi * 65e6;
  for (int trial = 0; trial < 8; ++trial) {
    const DensityMatrix rho = random_state(s, rng, 1 + trial % 3);
    const Operator h = jc_hamiltonian(s, Transition::GE, g) + carrier_hamiltonian(s, Transition::EF, Axis::Y, 2e8);
    const std::vector<Collapse> c = {{transmon_lowering(s), 1e6}, {annihilation(s), 4e7},
                                     {pauli(s, Axis::Z), 2e6}};
    const Matrix raw = lindblad_integrate(rho.matrix(), h, c, 5e-9, 0.01e-9);
    EXPECT_NEAR(std::abs(raw.trace() - 1.0), 0.0, 1e-6);
    EXPECT_NEAR(max_abs(raw - raw.adjoint()), 0.0, 1e-9);
    EXPECT_GE(min_eigenvalue(raw), -kIntegratorPositivityTolerance);
  }
}

TEST(LindbladProperty, FourthOrderConvergence) {
  std::mt19937_64 rng(8);
  const HilbertSpec s(2, 3);
  const DensityMatrix rho = random_state(s, rng);
  const Operator h = jc_hamiltonian(s, Transition::GE, 2.0 * kPi * 65e6);
  const std::vector<Collapse> c = {{transmon_lowering(s), 1e6}, {annihilation(s), 4e7}};
  const double t = 2e-9;
  const Matrix r1 = lindblad_integrate(rho.matrix(), h, c, t, 0.2e-9);
  const Matrix r2 = lindblad_integrate(rho.matrix(), h, c, t, 0.1e-9);
  const Matrix r3 = lindblad_integrate(rho.matrix(), h, c, t, 0.05e-9);
  const double ratio = max_abs(r1 - r2) / max_abs(r2 - r3);
  EXPECT_GT(ratio, 14.0);
  EXPECT_LT(ratio, 18.0);
}

}  // namespace
}  // namespace qphoton
