#include <gtest/gtest.h>

#include "qphoton/dynamics.hpp"
#include "test_util.hpp"

namespace qphoton {
namespace {

using testing::max_abs;

const ExperimentParams kDevice{};

double population(const DensityMatrix& rho, int level, int photons) {
  const int i = rho.space().index(level, photons);
  return rho(i, i).real();
}

TEST(JcHamiltonian, MatrixElements) {
  const HilbertSpec s(3, 4);
  const double g = 1.7;
  const Operator h = jc_hamiltonian(s, Transition::GE, g) + jc_hamiltonian(s, Transition::EF, g);
  EXPECT_NEAR(std::abs(h(s.index(0, 1), s.index(1, 0))), g, 1e-14);
  EXPECT_NEAR(std::abs(h(s.index(1, 2), s.index(2, 1))), 2.0 * g, 1e-14);
  EXPECT_NEAR(max_abs(h.matrix() - h.matrix().adjoint()), 0.0, 0.0);
  EXPECT_THROW(jc_hamiltonian(s, Transition::GF, g), std::invalid_argument);
}

TEST(RunSequence, PiPulseAndSwaps) {
  const HilbertSpec s(2, 4);
  const double g = kDevice.g_coupling;
  const CarrierPulse pi{Transition::GE, kPi, Axis::X, 10e-9};

  const DensityMatrix excited = run_sequence({{pi}}, kDevice, s, true);
  EXPECT_NEAR(population(excited, 1, 0), 1.0, 1e-6);

  const DensityMatrix full = run_sequence({{pi, ResonantSwap{Transition::GE, kPi / (2.0 * g)}}}, kDevice, s, true);
  EXPECT_NEAR(population(full, 0, 1), 1.0, 1e-6);

  const DensityMatrix half = run_sequence({{pi, ResonantSwap{Transition::GE, kPi / (4.0 * g)}}}, kDevice, s, true);
  EXPECT_NEAR(population(half, 1, 0), 0.5, 1e-6);
  EXPECT_NEAR(population(half, 0, 1), 0.5, 1e-6);
}

TEST(RunSequence, RejectsTransitionsOutsideTheSpace) {
  const HilbertSpec s(2, 4);
  EXPECT_THROW(run_sequence({{CarrierPulse{Transition::EF, kPi, Axis::X, 1e-9}}}, kDevice, s, true),
               std::invalid_argument);
}

TEST(RunSequenceProperty, IdealSequencesStayPure) {
  const HilbertSpec s(3, 6);
  for (const PulseSequence& seq : {bell_sequence(kDevice), two_photon_sequence(kDevice)}) {
    const DensityMatrix rho = run_sequence(seq, kDevice, s, true);
    EXPECT_NEAR(rho.matrix().trace().real(), 1.0, 1e-9);
    EXPECT_GE(purity(rho.matrix()), 1.0 - 1e-9);
  }
}

TEST(PulseSegments, ParseAndFormatRoundTrip) {
  for (const char* record : {"carrier g-e pi x 10e-9", "carrier g-f -0.5pi y 1e-8", "swap e-f 1.923e-9",
                             "idle 2e-08"}) {
    const Segment seg = parse_segment(record);
    const Segment again = parse_segment(format_segment(seg));
    EXPECT_EQ(format_segment(seg), format_segment(again)) << record;
  }
  const auto c = std::get<CarrierPulse>(parse_segment("carrier g-e -0.5pi y 10e-9"));
  EXPECT_DOUBLE_EQ(c.angle, -0.5 * kPi);
  EXPECT_EQ(c.axis, Axis::Y);
  EXPECT_THROW(parse_segment("swap g-f 1e-9"), std::invalid_argument);
  EXPECT_THROW(parse_segment("carrier g-e pi z 1e-9"), std::invalid_argument);
  EXPECT_THROW(parse_segment("warp 1e-9"), std::invalid_argument);
}

TEST(Params, ValidationAndWarnings) {
  ExperimentParams p;
  EXPECT_NO_THROW(p.validate());
  EXPECT_TRUE(p.hierarchy_warnings().empty());
  p.kappa = 1e10;  // cavity faster than the coupling
  EXPECT_FALSE(p.hierarchy_warnings().empty());
  p.eta = 1.5;
  EXPECT_THROW(p.validate(), std::invalid_argument);
}

TEST(PrepareBell, IdealIsTheTarget) {
  const DensityMatrix rho = prepare_bell(kDevice, true);
  EXPECT_GE(fidelity_to_pure(rho, bell_target()), 1.0 - 1e-6);
  EXPECT_NEAR(purity(partial_trace_field(rho)), 0.5, 1e-6);
}

TEST(PrepareBell, DeviceDefaultsInBand) {
  const double f = fidelity_to_pure(prepare_bell(kDevice, false), bell_target());
  EXPECT_GE(f, 0.78);
  EXPECT_LE(f, 0.88);
}

TEST(PrepareBellProperty, FidelityFallsWithWait) {
  double previous = 2.0;
  for (double wait : {0.0, 50e-9, 100e-9, 150e-9, 200e-9}) {
    ExperimentParams p;
    p.qubit_wait = wait;
    const double f = fidelity_to_pure(prepare_bell(p, false), bell_target());
    EXPECT_LT(f, previous) << wait;
    previous = f;
  }
}

TEST(PrepareBellProperty, SingleSharedExcitation) {
  const HilbertSpec s(2, kDevice.prep_fock_cutoff);
  const DensityMatrix rho = run_sequence(bell_sequence(kDevice), kDevice, s, false);
  const double photons = expectation(rho, number(s)).real();
  const double excited = (1.0 - expectation(rho, pauli(s, Axis::Z)).real()) / 2.0;
  EXPECT_NEAR(photons + excited, 1.0, 0.02);
}

// Indices (i, j) with a clearly negative real part of rho_ij, i != j.
std::vector<std::pair<int, int>> negative_entries(const Matrix& m) {
  std::vector<std::pair<int, int>> out;
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j)
      if (i != j && m(i, j).real() < -1e-3) out.emplace_back(i, j);
  return out;
}

TEST(PrepareTwoPhoton, IdealMatchesTarget) {
  const DensityMatrix rho = prepare_two_photon(kDevice, true);
  EXPECT_GE(fidelity_to_pure(rho, two_photon_target()), 0.999);
  const auto neg = negative_entries(rho.matrix());
  EXPECT_EQ(neg.size(), 6u);
  const Matrix target = DensityMatrix::pure(two_photon_target()).matrix();
  EXPECT_EQ(neg, negative_entries(target));
}

TEST(PrepareTwoPhoton, DeviceDefaultsInBand) {
  const double f = fidelity_to_pure(prepare_two_photon(kDevice, false), two_photon_target());
  EXPECT_GE(f, 0.70);
  EXPECT_LE(f, 0.88);
}

TEST(PrepareTwoPhotonProperty, FockCutoffConverged) {
  ExperimentParams big;
  big.prep_fock_cutoff = 12;
  const Matrix a = prepare_two_photon(kDevice, false).matrix();
  const Matrix b = prepare_two_photon(big, false).matrix();
  EXPECT_LT(max_abs(a - b), 1e-6);
}

TEST(EmitSnapshot, RelabelsAndTruncates) {
  const HilbertSpec prep(3, 6);
  Vector v = Vector::Zero(prep.dim());
  v(prep.index(1, 0)) = v(prep.index(0, 1)) = 1.0 / std::sqrt(2.0);
  const DensityMatrix out = emit_snapshot(DensityMatrix::pure(KetState(prep, v)));
  EXPECT_GE(fidelity_to_pure(out, bell_target()), 1.0 - 1e-12);
}

TEST(EmitSnapshot, RejectsFPopulation) {
  const HilbertSpec prep(3, 6);
  Vector v = Vector::Zero(prep.dim());
  v(prep.index(0, 0)) = std::sqrt(0.99);
  v(prep.index(2, 0)) = std::sqrt(0.01);
  EXPECT_THROW(emit_snapshot(DensityMatrix::pure(KetState(prep, v))), std::runtime_error);
}

TEST(EmitSnapshot, DeviceBellLeavesNegligibleTail) {
  const HilbertSpec prep(2, kDevice.prep_fock_cutoff);
  const DensityMatrix rho = run_sequence(bell_sequence(kDevice), kDevice, prep, false);
  double kept = 0.0;
  for (int l = 0; l < 2; ++l)
    for (int n = 0; n <= 4; ++n) kept += population(rho, l, n);
  EXPECT_GE(kept, 0.999);
}

TEST(TomographyRotation, Conventions) {
  const HilbertSpec s = HilbertSpec::reconstruction();
  EXPECT_NEAR(max_abs(tomography_rotation(Axis::Z).matrix() - Matrix::Identity(s.dim(), s.dim())), 0.0, 0.0);
  const double r = 1.0 / std::sqrt(2.0);
  Vector plus_x = Vector::Zero(s.dim()), plus_y = Vector::Zero(s.dim());
  plus_x(s.index(0, 0)) = r;
  plus_x(s.index(1, 0)) = r;
  plus_y(s.index(0, 0)) = r;
  plus_y(s.index(1, 0)) = Complex(0.0, r);
  for (auto [axis, v] : {std::pair{Axis::X, plus_x}, std::pair{Axis::Y, plus_y}}) {
    const DensityMatrix rotated =
        apply_unitary(DensityMatrix::pure(KetState(s, v)), tomography_rotation(axis));
    EXPECT_NEAR(expectation(rotated, pauli(s, Axis::Z)).real(), 1.0, 1e-12);
  }
}

TEST(BestFieldPhase, RemovesATwist) {
  const HilbertSpec s = HilbertSpec::reconstruction();
  const DensityMatrix twisted =
      apply_unitary(DensityMatrix::pure(bell_target()), field_phase(s, 0.9));
  const double phi = best_field_phase(twisted, bell_target());
  EXPECT_GE(fidelity_to_pure(apply_unitary(twisted, field_phase(s, phi)), bell_target()), 1.0 - 1e-12);
}

}  // namespace
}  // namespace qphoton
