#include "qphoton/selftest.hpp"

#include <chrono>
#include <fstream>
#include <functional>
#include <iomanip>
#include <random>
#include <sstream>
#include <unistd.h>

#include "qphoton/run.hpp"

namespace qphoton {

namespace fs = std::filesystem;

namespace {

struct SuiteFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void expect(bool ok, const std::string& what) {
  if (!ok) throw SuiteFailure(what);
}

DensityMatrix random_state(const HilbertSpec& s, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Matrix g(s.dim(), s.dim());
  for (int i = 0; i < s.dim(); ++i)
    for (int j = 0; j < s.dim(); ++j) g(i, j) = Complex(n(rng), n(rng));
  Matrix r = g * g.adjoint();
  return {s, r / r.trace().real()};
}

void hilbert_suite() {
  const DensityMatrix bell = DensityMatrix::pure(bell_target());
  expect(std::abs(purity(bell.matrix()) - 1.0) < 1e-12, "Bell purity");
  expect(std::abs(qubit_photon_concurrence(bell).concurrence - 1.0) < 1e-9, "Bell concurrence");
  // Werner state p |Phi+><Phi+| + (1-p) I/4 has C = (3p - 1)/2.
  Matrix phi = Matrix::Zero(4, 4);
  phi(0, 0) = phi(0, 3) = phi(3, 0) = phi(3, 3) = 0.5;
  const Matrix werner = 0.8 * phi + 0.05 * Matrix::Identity(4, 4);
  expect(std::abs(concurrence_two_qubit(werner) - 0.7) < 1e-9, "Werner concurrence");
  expect(std::abs(partial_trace_field(bell).trace().real() - 1.0) < 1e-12, "partial trace");
}

void dynamics_suite() {
  const ExperimentParams p;
  expect(fidelity_to_pure(prepare_bell(p, true), bell_target()) > 1.0 - 1e-6, "ideal Bell preparation");
  const double f = fidelity_to_pure(prepare_bell(p, false), bell_target());
  expect(f > 0.78 && f < 0.9, "decohered Bell fidelity in band");
  expect(fidelity_to_pure(prepare_two_photon(p, true), two_photon_target()) > 0.999,
         "ideal two-photon preparation");
}

void detection_suite() {
  DetectorConfig det;
  det.eta = 0.147;
  const auto shots = sample_shots(DensityMatrix::pure(KetState::basis(HilbertSpec::reconstruction(), 0, 0)),
                                  Axis::Z, 200000, det);
  double s1 = 0.0, s2 = 0.0;
  for (const auto& s : shots) {
    s1 += s.X;
    s2 += s.X * s.X;
  }
  const double n = static_cast<double>(shots.size());
  const double std_x = std::sqrt(s2 / n - (s1 / n) * (s1 / n));
  expect(std::abs(std_x - std::sqrt(0.5 / 0.147)) < 0.02, "vacuum quadrature width");

  const DensityMatrix rho = prepare_bell(ExperimentParams{}, false);
  const Histogram3D one = simulate_histogram(rho, Axis::X, 150000, det, 1);
  const Histogram3D four = simulate_histogram(rho, Axis::X, 150000, det, 4);
  expect(one.counts() == four.counts() && one.overflow() == four.overflow(),
         "worker count changes the histogram");
}

void tomography_suite() {
  std::mt19937_64 rng(7);
  const HilbertSpec s = HilbertSpec::reconstruction();
  for (int k = 0; k < 10; ++k) {
    const DensityMatrix rho = random_state(s, rng);
    const HermitianEstimate back = moments_to_rho_linear(exact_moments(rho, 8));
    expect((back.matrix() - rho.matrix()).cwiseAbs().maxCoeff() < 1e-8, "linear round trip");
  }
  const DensityMatrix rho = random_state(s, rng);
  const MomentSet exact = exact_moments(rho, 8);
  const MomentSet noise = analytic_noise_moments(1.0 / 0.15 - 1.0, 8);
  const MomentSet back = deconvolve(convolve_moments(exact, noise, 8), noise, 8);
  for (const auto& [key, v] : exact.entries())
    expect(std::abs(back.at(key.n, key.m, key.axis).value - v.value) < 1e-10 * std::max(1.0, std::abs(v.value)) + 1e-10,
           "deconvolution exactness");

  MomentSet noisy = exact_moments(DensityMatrix::pure(bell_target()), 8);
  std::normal_distribution<double> n(0.0, 0.01);
  const MomentSet clean = noisy;
  for (const auto& [key, v] : clean.entries())
    noisy.set(key.n, key.m, key.axis, {v.value + Complex(n(rng), n(rng)), 0.01});
  const MleResult fit = mle_rho(noisy);
  Eigen::SelfAdjointEigenSolver<Matrix> es(fit.rho.matrix());
  expect(es.eigenvalues().minCoeff() >= -1e-12, "MLE positivity");
  expect(std::abs(fit.rho.matrix().trace().real() - 1.0) < 1e-12, "MLE trace");
  expect(fit.chi2_final <= fit.chi2_initial, "MLE monotonicity");
}

void vacuum_cache_suite(const fs::path& cache_dir) {
  DetectorConfig det;
  const std::uint64_t shots = 200000;
  // Throws when the cached file fails its checksum or fingerprint.
  const Histogram3D vac = vacuum_reference(det, shots, SamplerMode::Shots, 1, cache_dir).front();
  expect(vac.ingested() == shots, "cached reference has the wrong shot count");
  const MomentSet raw = raw_field_moments(vac, 2);
  const double expected = 1.0 + det.noise_photons();
  expect(std::abs(raw.at(1, 1, Axis::Identity).value.real() - expected) < 0.03 * expected,
         "reference <S^dag S> does not match 1/eta");
  expect(std::abs(raw.at(1, 0, Axis::Identity).value) < 4.0 * raw.at(1, 0, Axis::Identity).std_error + 1e-12,
         "reference <S> is not phase symmetric");

  // Every other reference in the cache must still pass its checksum.
  for (const auto& entry : fs::directory_iterator(cache_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.starts_with("vacuum_") && entry.path().extension() == ".bin") read_vacuum_cache(entry.path());
  }
}

std::string slurp(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void determinism_suite() {
  const fs::path root = fs::temp_directory_path() / ("qphoton_selftest_" + std::to_string(::getpid()));
  const std::string text =
      "experiment = bell\nshots_per_basis = 30000\nbatches = 3\nreadout_reference_shots = 200000\n"
      "reference_shots = 60000\n";
  std::ostringstream log;
  for (const char* run : {"a", "b"}) {
    std::istringstream in(text);
    RunConfig c = parse_config(in, root);
    c.output_dir = root / run;
    c.cache_dir = root / "cache";
    run_experiment(c, text, run[0] == 'a' ? 1 : 3, log);
  }
  for (const char* file : {"metrics.txt", "fig2b_moments.txt", "hist_x.bin", "fig2c_rho_mle_real.csv"})
    expect(slurp(root / "a" / file) == slurp(root / "b" / file),
           std::string("outputs differ between identical runs: ") + file);
  fs::remove_all(root);
}

}  // namespace

int run_selftest(const fs::path& cache_dir, std::ostream& out) {
  const std::vector<std::pair<std::string, std::function<void()>>> suites{
      {"hilbert", hilbert_suite},
      {"dynamics", dynamics_suite},
      {"detection", detection_suite},
      {"tomography", tomography_suite},
      {"vacuum-reference consistency", [&] { vacuum_cache_suite(cache_dir); }},
      {"determinism", determinism_suite},
  };
  int failed = 0;
  for (const auto& [name, suite] : suites) {
    const auto t0 = std::chrono::steady_clock::now();
    std::string verdict = "PASS";
    try {
      suite();
    } catch (const std::exception& e) {
      verdict = std::string("FAIL (") + e.what() + ")";
      ++failed;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out << std::left << std::setw(30) << name << verdict << "  [" << std::fixed << std::setprecision(1)
        << secs << " s]\n";
    out.unsetf(std::ios::floatfield);
  }
  out << (failed ? "selftest: FAIL\n" : "selftest: PASS\n");
  return failed;
}

}  // namespace qphoton
