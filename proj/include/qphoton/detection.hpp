#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qphoton/hilbert.hpp"
#include "qphoton/phase_space.hpp"

namespace qphoton {

struct DetectorConfig {
  double eta = 0.15;
  double readout_mu_g = -1.0;
  double readout_mu_e = 1.0;
  double readout_sigma = 1.2;
  double readout_decay_mix = 0.35;
  double hist_range_xp = 12.0;
  int hist_bins_xp = 128;
  int hist_bins_q = 8;
  std::optional<double> hist_range_q;  // half-width; defaults to 5 sigma
  std::uint64_t seed = 20121029;

  void validate() const;
  /// Added noise photons N = 1/eta - 1 of the phase-preserving amplifier.
  double noise_photons() const { return 1.0 / eta - 1.0; }
  double q_low() const;
  double q_high() const;
};

struct Shot {
  Axis basis = Axis::Z;
  double X = 0.0;
  double P = 0.0;
  double Q = 0.0;
};

using ShotBatch = std::vector<Shot>;

/// Uniform half-open bins [lo + i w, lo + (i+1) w).
struct BinAxis {
  double lo = 0.0;
  double hi = 1.0;
  int bins = 1;

  double width() const { return (hi - lo) / bins; }
  double center(int i) const { return lo + (i + 0.5) * width(); }
  double edge(int i) const { return lo + i * width(); }
  /// Bin index, or -1 outside [lo, hi).
  int locate(double v) const {
    if (!(v >= lo && v < hi)) return -1;
    const int i = static_cast<int>((v - lo) * (bins / (hi - lo)));
    return i < bins ? i : bins - 1;
  }
  bool operator==(const BinAxis&) const = default;
};

/// Counts over (X, P, Q) for one tomography basis; Q varies fastest.
class Histogram3D {
 public:
  Histogram3D(Axis basis, BinAxis xp, BinAxis q);
  static Histogram3D for_config(Axis basis, const DetectorConfig& config);

  Axis basis() const { return basis_; }
  const BinAxis& x_axis() const { return x_; }
  const BinAxis& p_axis() const { return p_; }
  const BinAxis& q_axis() const { return q_; }

  std::uint64_t count(int ix, int ip, int iq) const { return counts_[flat(ix, ip, iq)]; }
  std::uint64_t overflow() const { return overflow_; }
  /// Shots that landed inside the range.
  std::uint64_t in_range() const;
  std::uint64_t ingested() const { return in_range() + overflow_; }
  const std::vector<std::uint64_t>& counts() const { return counts_; }

  /// Histogram with the layout of `layout` and the given cell counts.
  static Histogram3D from_counts(const Histogram3D& layout, std::vector<std::uint64_t> counts,
                                 std::uint64_t overflow);

  void add(double x, double p, double q);
  /// Throws std::invalid_argument on a basis mismatch.
  void accumulate(std::span<const Shot> shots);
  /// Elementwise sum; throws std::invalid_argument on differing edges or basis.
  void merge(const Histogram3D& other);

  bool same_edges(const Histogram3D& other) const;

  void write_binary(std::ostream& out) const;
  static Histogram3D read_binary(std::istream& in);
  /// Non-empty bins as "ix,ip,iq,x,p,q,count".
  void write_csv(std::ostream& out) const;

 private:
  std::size_t flat(int ix, int ip, int iq) const {
    return (static_cast<std::size_t>(ix) * p_.bins + ip) * q_.bins + iq;
  }

  Axis basis_;
  BinAxis x_, p_, q_;
  std::vector<std::uint64_t> counts_;
  std::uint64_t overflow_ = 0;
};

Histogram3D accumulate(Histogram3D hist, std::span<const Shot> shots);
Histogram3D merge(const Histogram3D& a, const Histogram3D& b);

/// One-dimensional Q histogram used for the readout references.
struct QHistogram {
  BinAxis axis;
  std::vector<std::uint64_t> counts;
  std::uint64_t overflow = 0;

  std::uint64_t total() const;
  /// Bin probabilities normalized over in-range counts.
  RealVector probabilities() const;
};

/// Deterministic per-stream generator: streams are keyed by the run seed,
/// a purpose tag, and a stream index.
std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t tag, std::uint64_t stream);

/// Per-shot generator for one density matrix and tomography basis. All
/// phase-space polynomials and the rejection envelope are precomputed.
class ShotSampler {
 public:
  ShotSampler(const DensityMatrix& rho, Axis basis, const DetectorConfig& config);

  Shot sample(std::mt19937_64& rng) const;
  /// Field amplitude drawn from the Husimi distribution of the field marginal.
  Complex sample_husimi(std::mt19937_64& rng) const;
  /// Excited-state probability of the (rotated) qubit given outcome S.
  double excited_probability(Complex s) const;
  /// Outcome density tr(Pi_N(S) rho_f).
  double outcome_density(Complex s) const;
  /// Qubit readout value for a projected qubit state.
  double sample_readout(bool excited, std::mt19937_64& rng) const;

  Axis basis() const { return basis_; }
  /// Probability of projecting the rotated qubit onto e.
  double excited_weight() const { return excited_weight_; }

 private:
  struct Branch {
    bool excited;
    double weight;
    PhaseSpacePolynomial husimi;  // of the normalized conditional field state
    double envelope_w;
    double envelope_m;
  };

  ShotSampler(const DensityMatrix& rotated, Axis basis, const DetectorConfig& config, int);
  static Branch make_branch(bool excited, double weight, const Matrix& field);
  const Branch& pick_branch(std::mt19937_64& rng) const;
  Complex sample_field(const Branch& b, std::mt19937_64& rng) const;

  Axis basis_;
  DetectorConfig config_;
  PhaseSpacePolynomial total_;
  PhaseSpacePolynomial excited_;
  std::vector<Branch> branches_;
  double excited_weight_ = 0.0;
};

inline constexpr std::size_t kShotChunk = 1 << 15;

/// Shots of chunk `chunk`; chunk c always draws from the same random stream
/// (keyed by seed, basis, stream_tag and c), so any partition of chunks over
/// workers reproduces the same shot multiset. Distinct runs sharing a seed
/// (signal vs. vacuum reference) must use distinct stream tags.
ShotBatch sample_chunk(const ShotSampler& sampler, const DetectorConfig& config,
                       std::uint64_t stream_tag, std::uint64_t chunk, std::size_t count);

/// The first n_shots shots of the (rho, basis) stream.
ShotBatch sample_shots(const DensityMatrix& rho, Axis basis, std::size_t n_shots,
                       const DetectorConfig& config, std::uint64_t stream_tag = 0);

/// Streams n_shots into a fresh histogram using `workers` threads, each with
/// a private histogram merged at the end. The result does not depend on the
/// worker count. `first_chunk` offsets the stream (for disjoint batches).
Histogram3D simulate_histogram(const DensityMatrix& rho, Axis basis, std::size_t n_shots,
                               const DetectorConfig& config, int workers = 1,
                               std::uint64_t first_chunk = 0, std::uint64_t stream_tag = 0);

/// Exact probability of every histogram cell (Q fastest) for `rho` measured
/// in `basis`; bins integrate the outcome density with a 4x4 Gauss-Legendre
/// rule. One minus the sum is the overflow probability.
std::vector<double> cell_probabilities(const DensityMatrix& rho, Axis basis,
                                       const DetectorConfig& config);

/// Histogram of n_shots drawn in one multinomial step from
/// cell_probabilities. Same law as streaming shots through simulate_histogram
/// (up to the quadrature), at a cost independent of n_shots.
Histogram3D simulate_histogram_binned(const DensityMatrix& rho, Axis basis, std::uint64_t n_shots,
                                      const DetectorConfig& config, std::uint64_t stream_tag = 0);

void write_shot_log(std::ostream& out, std::span<const Shot> shots);
ShotBatch read_shot_log(std::istream& in);

/// Q samples of the pure |0g> and |0e> preparations, binned on the
/// configured Q axis.
std::pair<QHistogram, QHistogram> readout_reference_histograms(const DetectorConfig& config,
                                                               std::size_t n_shots);

/// Multinomial counterpart of readout_reference_histograms.
std::pair<QHistogram, QHistogram> readout_reference_histograms_binned(const DetectorConfig& config,
                                                                      std::uint64_t n_shots);

/// 1 - P(e|g) - P(g|e) at the best single threshold, from the configured
/// readout densities.
double readout_assignment_fidelity(const DetectorConfig& config);

/// Matched temporal-mode filter: returns sum_k conj(f_k) s_k dt with
/// f(t) = sqrt(kappa) exp(-kappa t / 2), renormalized so sum |f|^2 dt = 1.
Complex matched_filter(std::span<const Complex> trace, double dt, double kappa);

}  // namespace qphoton
