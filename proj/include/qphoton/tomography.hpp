#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "qphoton/detection.hpp"
#include "qphoton/moments.hpp"

namespace qphoton {

inline constexpr std::uint64_t kDefaultMinCount = 10;

/// Conditional qubit excitation per (X, P) bin for one tomography basis.
///
/// Two weights are kept per bin. `excited_weight` is the clipped value in
/// [0, 1] used for display; `linear_weight` is the unclipped least-squares
/// solution, which is linear in the Q-column counts and therefore unbiased.
/// Moment sums use the linear form (see raw_moments).
struct BlochGrid {
  Axis basis = Axis::Z;
  BinAxis xp;
  std::vector<double> excited_weight;
  std::vector<double> linear_weight;
  std::vector<std::uint64_t> shot_count;
  std::vector<std::uint8_t> valid;
  /// Per Q bin: w = sum_q c_q u_q / n for a column with counts c and total n.
  RealVector q_projection;

  std::size_t flat(int ix, int ip) const { return static_cast<std::size_t>(ix) * xp.bins + ip; }
  std::size_t valid_bins() const;
  /// "ix,ip,x,p,count,valid,w_e" for every non-empty bin.
  void write_csv(std::ostream& out) const;
};

/// Fits each (X, P) column of `hist` to w ref_e + (1 - w) ref_g.
/// Throws std::invalid_argument on empty references or mismatched Q edges.
BlochGrid extract_populations(const Histogram3D& hist, const QHistogram& ref_g,
                              const QHistogram& ref_e,
                              std::uint64_t min_count = kDefaultMinCount);

/// Raw moments <(S^dag)^n S^m> and <(S^dag)^n S^m sigma_basis> for
/// n + m <= max_order, with per-shot standard errors. Each shot contributes
/// conj(S)^n S^m (1 - 2 u_q) for sigma moments, where S is the bin center.
/// All in-range bins are used, so probabilities are normalized over the
/// in-range count.
MomentSet raw_moments(const Histogram3D& hist, const BlochGrid& grid, int max_order);

/// Identity-only raw moments of one or more histograms pooled together.
MomentSet raw_field_moments(std::span<const Histogram3D* const> hists, int max_order);
MomentSet raw_field_moments(const Histogram3D& hist, int max_order);

/// Removes the amplifier noise: solves
///   R_nm = sum_{j<=n, k<=m} C(n,j) C(m,k) a_jk H_{n-j,m-k}
/// for a_jk in increasing order, per sigma index present in `raw`. H are the
/// identity moments of `reference_raw`. Standard errors of R, H and the
/// already-solved a are combined in quadrature, which ignores the strong
/// correlation between moments of one histogram and so overstates the
/// error at high order. measure_moments replaces them.
MomentSet deconvolve(const MomentSet& raw, const MomentSet& reference_raw, int max_order);

/// Everything the moment pipeline consumes for one data set.
struct TomographyData {
  std::vector<Histogram3D> signal;  // one histogram per basis x, y, z
  Histogram3D reference;            // vacuum input
  QHistogram ref_g;
  QHistogram ref_e;
};

struct PipelineOptions {
  int max_order = 8;
  std::uint64_t min_count = kDefaultMinCount;
  /// Standard errors from the per-shot linearization of the whole pipeline.
  /// When false the quadrature errors of deconvolve are kept.
  bool linearized_errors = true;
};

/// populations -> raw moments -> deconvolution for all three bases. Identity
/// moments pool the histograms of every basis; sigma_i moments come from the
/// basis-i histogram. Standard errors combine the shot noise of the signal
/// and vacuum histograms, each shot entering through its exact linear
/// influence on the deconvolved moment. Readout-reference noise is not
/// included.
MomentSet measure_moments(const TomographyData& data, const PipelineOptions& options = {});

/// Batch errors: runs measure_moments on each batch. The result holds the
/// batch mean as value and sample std / sqrt(batches) as std_error. Throws
/// std::invalid_argument for fewer than two batches.
MomentSet bootstrap_errors(std::span<const TomographyData> batches,
                           const PipelineOptions& options = {});

/// Hermitian estimate that may fail positivity; kept apart from DensityMatrix.
class HermitianEstimate {
 public:
  HermitianEstimate(HilbertSpec space, Matrix entries);

  const HilbertSpec& space() const { return space_; }
  const Matrix& matrix() const { return entries_; }
  double min_eigenvalue() const;
  bool is_physical(double tolerance = kStateTolerance) const;
  /// Negative eigenvalues clipped to zero, then renormalized.
  DensityMatrix project_to_physical() const;

 private:
  HilbertSpec space_;
  Matrix entries_;
};

/// Linear map from moments with n, m <= cutoff to a Hermitian, unit-trace
/// matrix through the Gram system of the operator basis.
HermitianEstimate moments_to_rho_linear(const MomentSet& moments,
                                        const HilbertSpec& space = HilbertSpec::reconstruction());

struct MleOptions {
  int max_order = 8;
  int max_iterations = 50000;
  double gradient_tolerance = 1e-8;
  double relative_improvement = 1e-10;
  int improvement_window = 50;
};

struct MleResult {
  DensityMatrix rho;
  double chi2_initial = 0.0;
  double chi2_final = 0.0;
  int iterations = 0;
  int moments_used = 0;
  bool converged = false;
  std::string stop_reason;
};

/// Weighted least-squares fit over moments with n >= m, n, m <= cutoff and
/// n + m <= max_order (all sigma indices, excluding the fixed (0,0,I)).
/// rho = T T^dag / tr(T T^dag) with T lower triangular, optimized by L-BFGS.
/// Throws std::invalid_argument on a non-positive std error.
MleResult mle_rho(const MomentSet& moments, const HilbertSpec& space = HilbertSpec::reconstruction(),
                  const MleOptions& options = {});

/// Weighted squared residual of rho against the moments used by mle_rho.
double moment_chi2(const DensityMatrix& rho, const MomentSet& moments, int max_order = 8);

struct ConcurrenceResult {
  double concurrence = 0.0;
  double weight = 0.0;  // trace of the projection onto {0,1} x {g,e}
};

/// Throws std::invalid_argument if the projected weight is below 1e-6.
ConcurrenceResult qubit_photon_concurrence(const DensityMatrix& rho);

struct Metrics {
  double phase = 0.0;
  double fidelity = 0.0;
  double concurrence = 0.0;
  double concurrence_weight = 0.0;
  double purity = 0.0;
  double max_imaginary = 0.0;
  std::vector<double> populations;
};

/// Picks the field phase minimizing the largest imaginary entry. That
/// objective has period pi, so between phi and phi + pi the one with higher
/// target fidelity is kept.
Metrics report_metrics(const DensityMatrix& rho, const KetState& target);
/// rho rotated by exp(i phase a^dag a).
DensityMatrix rotate_field_phase(const DensityMatrix& rho, double phase);

void write_matrix_csv(std::ostream& out, const Matrix& m, bool imaginary);
void write_metrics(std::ostream& out, const Metrics& metrics);

}  // namespace qphoton
