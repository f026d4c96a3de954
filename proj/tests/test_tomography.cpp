#include <gtest/gtest.h>

#include <sstream>

#include "qphoton/detection.hpp"
#include "qphoton/dynamics.hpp"
#include "qphoton/moments.hpp"
#include "qphoton/tomography.hpp"
#include "test_util.hpp"

namespace qphoton {
namespace {

using testing::max_abs;

const HilbertSpec kSpace = HilbertSpec::reconstruction();

DensityMatrix bell() { return DensityMatrix::pure(bell_target()); }

TomographyData simulate_data(const DensityMatrix& rho, std::size_t shots, const DetectorConfig& c,
                             std::uint64_t tag = 0) {
  const DensityMatrix vacuum = DensityMatrix::pure(KetState::basis(kSpace, 0, 0));
  TomographyData d{{}, simulate_histogram(vacuum, Axis::Z, 3 * shots, c, 1, 0, 1000 + tag), {}, {}};
  for (Axis b : {Axis::X, Axis::Y, Axis::Z}) d.signal.push_back(simulate_histogram(rho, b, shots, c, 1, 0, 2000 + tag));
  std::tie(d.ref_g, d.ref_e) = readout_reference_histograms_binned(c, 10'000'000);
  return d;
}

// ---------------------------------------------------------------- MomentSet

TEST(MomentSet, StorageRules) {
  MomentSet s(2);
  s.set(1, 1, Axis::Z, {Complex(0.5, 0.0), 0.1});
  EXPECT_TRUE(s.contains(1, 1, Axis::Z));
  EXPECT_FALSE(s.contains(1, 1, Axis::X));
  EXPECT_THROW(s.at(1, 0, Axis::Z), std::out_of_range);
  EXPECT_THROW(s.set(2, 1, Axis::Z, {}), std::out_of_range);
  EXPECT_THROW(MomentSet(-1), std::invalid_argument);
}

TEST(MomentSet, ConjugatesAndConsistency) {
  MomentSet s(2);
  s.set(1, 0, Axis::X, {Complex(0.3, 0.2), 0.01});
  s.fill_conjugates();
  EXPECT_EQ(s.at(0, 1, Axis::X).value, Complex(0.3, -0.2));
  EXPECT_TRUE(s.conjugates_consistent());
  s.set(0, 1, Axis::X, {Complex(0.3, 0.2), 0.01});
  EXPECT_FALSE(s.conjugates_consistent());
}

TEST(MomentSet, TableRoundTrip) {
  std::mt19937_64 rng(51);
  MomentSet s = exact_moments(testing::random_state(kSpace, rng), 4);
  std::stringstream buf;
  s.write_table(buf);
  const MomentSet back = MomentSet::read_table(buf);
  ASSERT_EQ(back.entries().size(), s.entries().size());
  for (const auto& [k, v] : s.entries()) {
    EXPECT_EQ(back.at(k.n, k.m, k.axis).value, v.value);
    EXPECT_EQ(back.at(k.n, k.m, k.axis).std_error, v.std_error);
  }
  std::stringstream bad("1 1 q 0 0 0\n");
  EXPECT_THROW(MomentSet::read_table(bad), std::invalid_argument);
  std::stringstream short_line("1 1 z 0\n");
  EXPECT_THROW(MomentSet::read_table(short_line), std::runtime_error);
}

TEST(MomentSet, ExactMomentsOfBell) {
  const MomentSet m = exact_moments(bell(), 4);
  EXPECT_NEAR(m.at(0, 0, Axis::Identity).value.real(), 1.0, 1e-15);
  EXPECT_NEAR(m.at(1, 1, Axis::Identity).value.real(), 0.5, 1e-15);
  EXPECT_NEAR(m.at(1, 1, Axis::Z).value.real(), 0.5, 1e-15);
  EXPECT_NEAR(std::abs(m.at(2, 2, Axis::Identity).value), 0.0, 1e-15);
  EXPECT_NEAR(max_abs(normal_ordered(1, 1, 4) - fock_annihilation(4).adjoint() * fock_annihilation(4)), 0.0, 0.0);
}

// ---------------------------------------------------------------- populations

QHistogram q_hist(const BinAxis& axis, std::vector<std::uint64_t> counts) { return {axis, std::move(counts), 0}; }

TEST(ExtractPopulations, ReferenceColumns) {
  DetectorConfig c;
  const auto [ref_g, ref_e] = readout_reference_histograms(c, 2'000'000);
  const int nq = c.hist_bins_q;
  Histogram3D layout = Histogram3D::for_config(Axis::Z, c);
  std::vector<std::uint64_t> counts(layout.counts().size(), 0);
  // Column (0, 0) holds pure ground samples, column (0, 1) an equal mixture.
  const auto [g2, e2] = readout_reference_histograms_binned(c, 1'000'000);
  for (int q = 0; q < nq; ++q) {
    counts[q] = g2.counts[q];
    counts[nq + q] = g2.counts[q] / 2 + e2.counts[q] / 2;
  }
  const Histogram3D h = Histogram3D::from_counts(layout, counts, 0);
  const BlochGrid grid = extract_populations(h, ref_g, ref_e);
  EXPECT_NEAR(grid.excited_weight[grid.flat(0, 0)], 0.0, 0.05);
  EXPECT_NEAR(grid.excited_weight[grid.flat(0, 1)], 0.5, 0.05);
  EXPECT_TRUE(grid.valid[grid.flat(0, 0)]);
  EXPECT_FALSE(grid.valid[grid.flat(5, 5)]);
  for (double w : grid.excited_weight) {
    EXPECT_GE(w, 0.0);
    EXPECT_LE(w, 1.0);
  }
}

TEST(ExtractPopulations, RejectsBadReferences) {
  DetectorConfig c;
  const Histogram3D h = Histogram3D::for_config(Axis::Z, c);
  const auto [g, e] = readout_reference_histograms(c, 1000);
  const QHistogram empty = q_hist(g.axis, std::vector<std::uint64_t>(g.counts.size(), 0));
  EXPECT_THROW(extract_populations(h, empty, e), std::invalid_argument);
  EXPECT_THROW(extract_populations(h, g, g), std::invalid_argument);
  const QHistogram other = q_hist(BinAxis{-1.0, 1.0, 8}, g.counts);
  EXPECT_THROW(extract_populations(h, other, e), std::invalid_argument);
}

TEST(ExtractPopulations, BellCenterIsMoreExcited) {
  DetectorConfig c;
  const Histogram3D h = simulate_histogram(bell(), Axis::Z, 1'000'000, c);
  const auto [g, e] = readout_reference_histograms(c, 2'000'000);
  const BlochGrid grid = extract_populations(h, g, e);
  const double delta_m = std::sqrt(1.0 / (2.0 * c.eta));
  double inner = 0.0, outer = 0.0;
  int n_inner = 0, n_outer = 0;
  for (int ix = 0; ix < grid.xp.bins; ++ix)
    for (int ip = 0; ip < grid.xp.bins; ++ip) {
      const std::size_t b = grid.flat(ix, ip);
      if (!grid.valid[b]) continue;
      const double r = std::abs(Complex(grid.xp.center(ix), grid.xp.center(ip)));
      if (r < delta_m) {
        inner += grid.excited_weight[b];
        ++n_inner;
      } else if (r > 2.0 * delta_m) {
        outer += grid.excited_weight[b];
        ++n_outer;
      }
    }
  ASSERT_GT(n_inner, 0);
  ASSERT_GT(n_outer, 0);
  EXPECT_GT(inner / n_inner - outer / n_outer, 0.0);
}

// ---------------------------------------------------------------- raw moments

TEST(RawMoments, SingleBinAtOne) {
  // X/P bin centers at the integers -3..3; all shots in the bin at S = 1.
  const BinAxis xp{-3.5, 3.5, 7}, q{-4.0, 4.0, 4};
  Histogram3D layout(Axis::Z, xp, q);
  const QHistogram ref_g = q_hist(q, {10, 40, 30, 20});
  const QHistogram ref_e = q_hist(q, {20, 30, 40, 10});
  std::vector<std::uint64_t> counts(layout.counts().size(), 0);
  const std::size_t cell = static_cast<std::size_t>(4) * 7 + 3;  // ix = 4 (x = 1), ip = 3 (p = 0)
  for (int k = 0; k < 4; ++k) counts[cell * 4 + k] = 100 * ref_g.counts[k];
  const Histogram3D h = Histogram3D::from_counts(layout, counts, 0);
  const BlochGrid grid = extract_populations(h, ref_g, ref_e, 1);
  EXPECT_NEAR(grid.linear_weight[grid.flat(4, 3)], 0.0, 1e-14);
  const MomentSet raw = raw_moments(h, grid, 2);
  EXPECT_NEAR(std::abs(raw.at(0, 1, Axis::Z).value - 1.0), 0.0, 1e-12);
  EXPECT_NEAR(std::abs(raw.at(1, 1, Axis::Identity).value - 1.0), 0.0, 1e-12);
  EXPECT_NEAR(raw.at(0, 1, Axis::Identity).std_error, 0.0, 1e-12);
}

TEST(RawMoments, VacuumReference) {
  DetectorConfig c;
  c.eta = 0.147;
  const Histogram3D h =
      simulate_histogram(DensityMatrix::pure(KetState::basis(kSpace, 0, 0)), Axis::Z, 1'000'000, c);
  const MomentSet raw = raw_field_moments(h, 2);
  const MomentValue s = raw.at(1, 0, Axis::Identity);
  EXPECT_LE(std::abs(s.value.real()), 3.0 * s.std_error);
  EXPECT_LE(std::abs(s.value.imag()), 3.0 * s.std_error);
  // With the vacuum half-quantum in both quadratures <S^dag S> = 1/eta;
  // removing that quantum leaves the added noise N = 1/eta - 1.
  const double sds = raw.at(1, 1, Axis::Identity).value.real();
  EXPECT_NEAR(sds, 1.0 / c.eta, 0.02 / c.eta);
  EXPECT_NEAR(sds - 1.0, 5.77, 0.02 * 5.77);
}

TEST(RawMoments, InputChecks) {
  DetectorConfig c;
  const Histogram3D h = simulate_histogram(bell(), Axis::X, 10000, c);
  const auto [g, e] = readout_reference_histograms(c, 10000);
  const BlochGrid grid = extract_populations(h, g, e);
  EXPECT_THROW(raw_moments(h, grid, 9), std::invalid_argument);
  const Histogram3D z = simulate_histogram(bell(), Axis::Z, 10000, c);
  EXPECT_THROW(raw_moments(z, grid, 4), std::invalid_argument);
  BlochGrid none = grid;
  std::fill(none.valid.begin(), none.valid.end(), 0);
  EXPECT_THROW(raw_moments(h, none, 4), std::invalid_argument);
}

// ---------------------------------------------------------------- deconvolution

MomentSet identity_set(int order, std::initializer_list<std::tuple<int, int, double>> values) {
  MomentSet s(order);
  for (int n = 0; n <= order; ++n)
    for (int m = 0; n + m <= order; ++m) s.set(n, m, Axis::Identity, {0.0, 0.0});
  s.set(0, 0, Axis::Identity, {1.0, 0.0});
  for (auto [n, m, v] : values) s.set(n, m, Axis::Identity, {v, 0.0});
  return s;
}

TEST(Deconvolve, SinglePhotonBookkeeping) {
  const double noise = 5.67;
  const MomentSet raw = identity_set(2, {{1, 1, 1.0 + noise}});
  const MomentSet ref = identity_set(2, {{1, 1, noise}});
  EXPECT_NEAR(std::abs(deconvolve(raw, ref, 2).at(1, 1, Axis::Identity).value - 1.0), 0.0, 1e-14);
}

TEST(Deconvolve, ZeroNoiseIsIdentity) {
  std::mt19937_64 rng(52);
  const MomentSet signal = exact_moments(testing::random_state(kSpace, rng), 8);
  const MomentSet out = deconvolve(signal, identity_set(8, {}), 8);
  for (const auto& [k, v] : signal.entries())
    EXPECT_NEAR(std::abs(out.at(k.n, k.m, k.axis).value - v.value), 0.0, 1e-15);
}

TEST(DeconvolveProperty, ExactThroughOrderEight) {
  std::mt19937_64 rng(53);
  for (double eta : {0.15, 0.5}) {
    const MomentSet noise = analytic_noise_moments(1.0 / eta - 1.0, 8);
    for (int trial = 0; trial < 5; ++trial) {
      const MomentSet signal = exact_moments(testing::random_state(kSpace, rng), 8);
      const MomentSet out = deconvolve(convolve_moments(signal, noise, 8), noise, 8);
      for (const auto& [k, v] : signal.entries())
        EXPECT_NEAR(std::abs(out.at(k.n, k.m, k.axis).value - v.value), 0.0, 1e-10)
            << k.n << k.m << axis_name(k.axis);
    }
  }
}

TEST(Deconvolve, MissingReferenceThrows) {
  const MomentSet raw = identity_set(4, {});
  EXPECT_THROW(deconvolve(raw, identity_set(2, {}), 4), std::invalid_argument);
  EXPECT_THROW(deconvolve(identity_set(2, {}), identity_set(4, {}), 4), std::invalid_argument);
}

// ---------------------------------------------------------------- pipeline

TEST(MeasureMoments, BellOracleAtModerateShots) {
  DetectorConfig c;
  const TomographyData d = simulate_data(bell(), 300000, c);
  const MomentSet m = measure_moments(d, {4});
  const MomentSet exact = exact_moments(bell(), 4);
  for (const auto& [k, v] : m.entries()) {
    const Complex want = exact.at(k.n, k.m, k.axis).value;
    EXPECT_LE(std::abs(v.value.real() - want.real()), 3.0 * v.std_error + 1e-12) << k.n << k.m << axis_name(k.axis);
    EXPECT_LE(std::abs(v.value.imag() - want.imag()), 3.0 * v.std_error + 1e-12) << k.n << k.m << axis_name(k.axis);
  }
  EXPECT_TRUE(m.conjugates_consistent());
  EXPECT_EQ(m.at(0, 0, Axis::Identity).value, Complex(1.0));
}

TEST(MeasureMoments, RejectsIncompleteBases) {
  DetectorConfig c;
  TomographyData d = simulate_data(bell(), 20000, c);
  d.signal.pop_back();
  EXPECT_THROW(measure_moments(d), std::invalid_argument);
  d = simulate_data(bell(), 20000, c);
  d.signal[2] = d.signal[1];
  EXPECT_THROW(measure_moments(d), std::invalid_argument);
}

// Propagated errors track the scatter of independent repetitions.
TEST(MeasureMomentsProperty, ErrorsMatchRepetitionScatter) {
  DetectorConfig c;
  const DensityMatrix rho = prepare_bell(ExperimentParams{}, false);
  const int reps = 40;
  std::vector<MomentSet> runs;
  for (int r = 0; r < reps; ++r) runs.push_back(measure_moments(simulate_data(rho, 20000, c, 10 + r), {4}));
  for (auto [n, m, axis] : {std::tuple{1, 1, Axis::Identity}, std::tuple{2, 2, Axis::Identity},
                            std::tuple{1, 0, Axis::X}, std::tuple{1, 1, Axis::Z}, std::tuple{2, 1, Axis::Y}}) {
    Complex mean = 0.0;
    double se = 0.0;
    for (const auto& run : runs) {
      mean += run.at(n, m, axis).value;
      se += run.at(n, m, axis).std_error;
    }
    mean /= double(reps);
    se /= reps;
    double var = 0.0;
    for (const auto& run : runs) var += std::norm(run.at(n, m, axis).value - mean);
    const double scatter = std::sqrt(var / (reps - 1));
    EXPECT_NEAR(scatter / se, 1.0, 0.3) << n << m << axis_name(axis);
  }
}

TEST(BootstrapErrors, DuplicatesAndMinimumBatches) {
  DetectorConfig c;
  const TomographyData d = simulate_data(bell(), 20000, c);
  const std::vector<TomographyData> same = {d, d, d};
  const MomentSet b = bootstrap_errors(same, {4});
  for (const auto& [k, v] : b.entries()) EXPECT_EQ(v.std_error, 0.0);
  EXPECT_THROW(bootstrap_errors(std::span(same.data(), 1), {4}), std::invalid_argument);
}

TEST(BinningProperty, FinerGridChangesLowOrdersByLessThanOneError) {
  DetectorConfig coarse;
  DetectorConfig fine = coarse;
  fine.hist_bins_xp = 256;
  const DensityMatrix rho = prepare_bell(ExperimentParams{}, false);
  // The same shot streams binned two ways.
  const MomentSet a = measure_moments(simulate_data(rho, 1'000'000, coarse), {2});
  const MomentSet b = measure_moments(simulate_data(rho, 1'000'000, fine), {2});
  for (const auto& [k, v] : a.entries()) {
    if (v.std_error == 0.0) continue;
    EXPECT_LT(std::abs(v.value - b.at(k.n, k.m, k.axis).value), v.std_error) << k.n << k.m << axis_name(k.axis);
  }
}

// ---------------------------------------------------------------- linear inversion

TEST(LinearInversion, VacuumAndBell) {
  MomentSet vac(8);
  for (int n = 0; n <= 4; ++n)
    for (int m = 0; m <= 4; ++m)
      for (Axis a : kAllAxes) vac.set(n, m, a, {0.0, 0.0});
  vac.set(0, 0, Axis::Identity, {1.0, 0.0});
  vac.set(0, 0, Axis::Z, {1.0, 0.0});
  const HermitianEstimate v = moments_to_rho_linear(vac);
  EXPECT_LT(max_abs(v.matrix() - DensityMatrix::pure(KetState::basis(kSpace, 0, 0)).matrix()), 1e-9);

  const HermitianEstimate b = moments_to_rho_linear(exact_moments(bell(), 8));
  EXPECT_LT(max_abs(b.matrix() - bell().matrix()), 1e-8);
  EXPECT_TRUE(b.is_physical());
}

TEST(LinearInversionProperty, RoundTripRandomStates) {
  std::mt19937_64 rng(54);
  for (int trial = 0; trial < 100; ++trial) {
    const DensityMatrix rho = testing::random_state(kSpace, rng, 1 + trial % 10);
    EXPECT_LT(max_abs(moments_to_rho_linear(exact_moments(rho, 8)).matrix() - rho.matrix()), 1e-8);
  }
}

TEST(LinearInversion, NoisyMomentsGiveRawEstimate) {
  std::mt19937_64 rng(55);
  std::normal_distribution<double> noise(0.0, 0.02);
  MomentSet m = exact_moments(bell(), 8);
  MomentSet noisy(8);
  for (const auto& [k, v] : m.entries()) {
    if (k.n < k.m || (k.n == 0 && k.axis == Axis::Identity)) continue;
    noisy.set(k.n, k.m, k.axis, {v.value + Complex(noise(rng), k.n == k.m ? 0.0 : noise(rng)), 0.02});
  }
  noisy.set(0, 0, Axis::Identity, {1.0, 0.0});
  noisy.fill_conjugates();
  const HermitianEstimate est = moments_to_rho_linear(noisy);
  EXPECT_LT(est.min_eigenvalue(), 0.0);
  EXPECT_FALSE(est.is_physical());
  const DensityMatrix fixed = est.project_to_physical();
  EXPECT_GE(min_eigenvalue(fixed.matrix()), -kStateTolerance);
  EXPECT_NEAR(std::abs(est.matrix().trace() - 1.0), 0.0, 1e-12);
}

TEST(LinearInversion, MissingMomentsThrow) {
  MomentSet partial(8);
  partial.set(0, 0, Axis::Identity, {1.0, 0.0});
  EXPECT_THROW(moments_to_rho_linear(partial), std::out_of_range);
}

// ---------------------------------------------------------------- MLE

MomentSet with_uniform_error(const MomentSet& m, double se) {
  MomentSet out(m.max_order());
  for (const auto& [k, v] : m.entries()) out.set(k.n, k.m, k.axis, {v.value, se});
  out.set(0, 0, Axis::Identity, {1.0, 0.0});
  return out;
}

TEST(Mle, ExactPureMomentsConverge) {
  const MomentSet m = with_uniform_error(exact_moments(bell(), 8), 1e-6);
  const MleResult fit = mle_rho(m);
  EXPECT_GE(fidelity_to_pure(fit.rho, bell_target()), 1.0 - 1e-6);
  EXPECT_LE(fit.chi2_final, fit.chi2_initial);
  EXPECT_EQ(fit.moments_used, 59);
  EXPECT_NEAR(moment_chi2(bell(), m), 0.0, 1e-12);
}

TEST(MleProperty, PhysicalAndMonotoneOnNoisyMoments) {
  std::mt19937_64 rng(56);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    const DensityMatrix truth = testing::random_state(kSpace, rng, 2);
    const MomentSet exact = exact_moments(truth, 8);
    MomentSet noisy(8);
    for (const auto& [k, v] : exact.entries()) {
      if (k.n < k.m) continue;
      const double se = 0.01 * (1 << (k.n + k.m) / 2);
      noisy.set(k.n, k.m, k.axis, {v.value + se * Complex(noise(rng), k.n == k.m ? 0.0 : noise(rng)), se});
    }
    noisy.set(0, 0, Axis::Identity, {1.0, 0.0});
    noisy.fill_conjugates();
    const MleResult fit = mle_rho(noisy);
    const Matrix& r = fit.rho.matrix();
    EXPECT_GE(min_eigenvalue(r), -1e-12);
    EXPECT_NEAR(std::abs(r.trace() - 1.0), 0.0, 1e-12);
    EXPECT_LT(max_abs(r - r.adjoint()), 1e-12);
    EXPECT_LE(fit.chi2_final, fit.chi2_initial);
    EXPECT_LT(max_abs(r - truth.matrix()), 0.2);
  }
}

TEST(Mle, RejectsNonPositiveErrors) {
  const MomentSet m = with_uniform_error(exact_moments(bell(), 8), 0.0);
  EXPECT_THROW(mle_rho(m), std::invalid_argument);
}

// ---------------------------------------------------------------- metrics

TEST(QubitPhotonConcurrence, Cases) {
  const ConcurrenceResult pure = qubit_photon_concurrence(bell());
  EXPECT_NEAR(pure.concurrence, 1.0, 1e-9);
  EXPECT_NEAR(pure.weight, 1.0, 1e-12);

  Matrix sep = Matrix::Zero(kSpace.dim(), kSpace.dim());
  sep(kSpace.index(1, 0), kSpace.index(1, 0)) = 0.5;
  sep(kSpace.index(0, 1), kSpace.index(0, 1)) = 0.5;
  EXPECT_NEAR(qubit_photon_concurrence(DensityMatrix(kSpace, sep)).concurrence, 0.0, 1e-9);

  EXPECT_THROW(qubit_photon_concurrence(DensityMatrix::pure(KetState::basis(kSpace, 0, 3))),
               std::invalid_argument);
}

TEST(ReportMetrics, RemovesPhaseTwist) {
  const DensityMatrix twisted = rotate_field_phase(bell(), kPi / 5.0);
  EXPECT_GT(max_abs(twisted.matrix().imag().cast<Complex>()), 0.1);
  const Metrics m = report_metrics(twisted, bell_target());
  EXPECT_LT(m.max_imaginary, 1e-9);
  EXPECT_NEAR(m.fidelity, 1.0, 1e-9);
  EXPECT_NEAR(m.concurrence, 1.0, 1e-9);
  EXPECT_NEAR(m.purity, 1.0, 1e-12);
  ASSERT_EQ(m.populations.size(), 5u);
  EXPECT_NEAR(m.populations[0], 0.5, 1e-12);
  EXPECT_NEAR(m.populations[1], 0.5, 1e-12);
}

TEST(ReportMetrics, RotationMatchesFieldPhaseOperator) {
  std::mt19937_64 rng(57);
  const DensityMatrix rho = testing::random_state(kSpace, rng);
  const DensityMatrix a = rotate_field_phase(rho, 0.4);
  const DensityMatrix b = apply_unitary(rho, field_phase(kSpace, 0.4));
  EXPECT_LT(max_abs(a.matrix() - b.matrix()), 1e-14);
}

TEST(MatrixCsv, WritesRealAndImaginaryParts) {
  Matrix m(2, 2);
  m << Complex(1, 2), Complex(3, -4), Complex(0.5, 0), Complex(0, 0.25);
  std::ostringstream re, im;
  write_matrix_csv(re, m, false);
  write_matrix_csv(im, m, true);
  EXPECT_NE(re.str().find("3"), std::string::npos);
  EXPECT_NE(im.str().find("-4"), std::string::npos);
  EXPECT_NE(im.str().find("0.25"), std::string::npos);
}

}  // namespace
}  // namespace qphoton
