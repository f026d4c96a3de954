#include "qphoton/tomography.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <stdexcept>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "qphoton/phase_scan.hpp"

namespace qphoton {

namespace {

constexpr int kMaxRawOrder = 8;

double binomial(int n, int k) {
  double out = 1.0;
  for (int i = 1; i <= k; ++i) out = out * (n - k + i) / i;
  return out;
}

// Powers S^0..S^order for every bin center.
struct CenterPowers {
  std::vector<Complex> table;  // [bin][power]
  int stride;

  CenterPowers(const BinAxis& xp, int order) : stride(order + 1) {
    table.resize(static_cast<std::size_t>(xp.bins) * xp.bins * stride);
    for (int ix = 0; ix < xp.bins; ++ix)
      for (int ip = 0; ip < xp.bins; ++ip) {
        const Complex s(xp.center(ix), xp.center(ip));
        Complex* row = &table[(static_cast<std::size_t>(ix) * xp.bins + ip) * stride];
        row[0] = 1.0;
        for (int k = 1; k <= order; ++k) row[k] = row[k - 1] * s;
      }
  }
  const Complex* at(std::size_t bin) const { return &table[bin * stride]; }
};

// Accumulates sum_b weight1_b f_nm(S_b) and sum_b weight2_b |f_nm(S_b)|^2
// for all n >= m with n + m <= order, where f_nm = conj(S)^n S^m.
struct MomentAccumulator {
  int order;
  std::vector<Complex> first;
  std::vector<double> second;

  explicit MomentAccumulator(int max_order)
      : order(max_order), first((max_order + 1) * (max_order + 1)), second(first.size()) {}

  std::size_t slot(int n, int m) const { return static_cast<std::size_t>(n) * (order + 1) + m; }

  void add(const Complex* powers, double w1, double w2) {
    for (int n = 0; n <= order; ++n)
      for (int m = 0; m <= n && n + m <= order; ++m) {
        const Complex f = std::conj(powers[n]) * powers[m];
        first[slot(n, m)] += w1 * f;
        second[slot(n, m)] += w2 * std::norm(f);
      }
  }

  // Mean and standard error of the per-shot values over `shots` shots.
  void emit(MomentSet& set, Axis axis, double shots) const {
    for (int n = 0; n <= order; ++n)
      for (int m = 0; m <= n && n + m <= order; ++m) {
        const Complex mean = first[slot(n, m)] / shots;
        const double var = std::max(0.0, second[slot(n, m)] / shots - std::norm(mean));
        set.set(n, m, axis, {mean, std::sqrt(var / shots)});
      }
  }
};

void check_order(int max_order) {
  if (max_order < 0 || max_order > kMaxRawOrder)
    throw std::invalid_argument("moment order must lie in [0, 8]");
}

// Field-operator basis (a^dag)^n a^m (x) sigma_i in a fixed order.
struct OperatorBasis {
  std::vector<MomentKey> keys;
  std::vector<Matrix> ops;
};

OperatorBasis operator_basis(const HilbertSpec& space, bool lower_only) {
  if (space.transmon_levels() != 2)
    throw std::invalid_argument("reconstruction needs a two-level qubit space");
  OperatorBasis basis;
  const int c = space.fock_cutoff();
  for (int n = 0; n <= c; ++n)
    for (int m = 0; m <= (lower_only ? n : c); ++m) {
      const Matrix field = normal_ordered(n, m, c);
      for (Axis axis : kAllAxes) {
        basis.keys.push_back({n, m, axis});
        basis.ops.push_back(kron(pauli_factor(axis, 2), field));
      }
    }
  return basis;
}

MomentValue moment_or_conjugate(const MomentSet& set, int n, int m, Axis axis) {
  if (auto v = set.find(n, m, axis)) return *v;
  if (auto v = set.find(m, n, axis)) return {std::conj(v->value), v->std_error};
  return set.at(n, m, axis);  // throws with the missing index
}

// Moment tables T_nm for n + m <= order under the binomial product
//   (A * B)_nm = sum_{j<=n, k<=m} C(n,j) C(m,k) A_jk B_{n-j,m-k}.
// The detector convolves the field moments with the noise table in exactly
// this product, so deconvolution multiplies by the inverse reference table.
class MomentTable {
 public:
  explicit MomentTable(int order) : order_(order), v_(static_cast<std::size_t>(order + 1) * (order + 1)) {}

  int order() const { return order_; }
  Complex& operator()(int n, int m) { return v_[static_cast<std::size_t>(n) * (order_ + 1) + m]; }
  Complex operator()(int n, int m) const { return v_[static_cast<std::size_t>(n) * (order_ + 1) + m]; }

 private:
  int order_;
  std::vector<Complex> v_;
};

MomentTable table_of(const MomentSet& set, Axis axis, int order) {
  MomentTable t(order);
  for (int n = 0; n <= order; ++n)
    for (int m = 0; n + m <= order; ++m) t(n, m) = moment_or_conjugate(set, n, m, axis).value;
  return t;
}

MomentTable binomial_product(const MomentTable& a, const MomentTable& b) {
  MomentTable out(a.order());
  for (int n = 0; n <= a.order(); ++n)
    for (int m = 0; n + m <= a.order(); ++m) {
      Complex sum = 0.0;
      for (int j = 0; j <= n; ++j)
        for (int k = 0; k <= m; ++k) sum += binomial(n, j) * binomial(m, k) * a(j, k) * b(n - j, m - k);
      out(n, m) = sum;
    }
  return out;
}

MomentTable binomial_inverse(const MomentTable& h) {
  MomentTable g(h.order());
  const Complex h00 = h(0, 0);
  for (int order = 0; order <= h.order(); ++order)
    for (int n = 0; n <= order; ++n) {
      const int m = order - n;
      Complex sum = n == 0 && m == 0 ? Complex(1.0) : Complex(0.0);
      for (int j = 0; j <= n; ++j)
        for (int k = 0; k <= m; ++k)
          if (j != n || k != m) sum -= binomial(n, j) * binomial(m, k) * g(j, k) * h(n - j, m - k);
      g(n, m) = sum / h00;
    }
  return g;
}

// Per-bin shot weights: `first` multiplies a shot's contribution in the
// mean, `second` its squared modulus.
struct BinWeights {
  std::vector<double> first;
  std::vector<double> second;
  double shots = 0.0;

  explicit BinWeights(std::size_t cells) : first(cells), second(cells) {}
};

BinWeights field_weights(std::span<const Histogram3D* const> hists) {
  const std::size_t cells = hists.front()->counts().size() / hists.front()->q_axis().bins;
  BinWeights w(cells);
  for (const Histogram3D* h : hists) {
    const int nq = h->q_axis().bins;
    const auto& counts = h->counts();
    for (std::size_t b = 0; b < cells; ++b) {
      std::uint64_t n = 0;
      for (int q = 0; q < nq; ++q) n += counts[b * nq + q];
      w.first[b] += static_cast<double>(n);
      w.second[b] += static_cast<double>(n);
      w.shots += static_cast<double>(n);
    }
  }
  return w;
}

BinWeights sigma_weights(const Histogram3D& hist, const BlochGrid& grid) {
  const int nq = hist.q_axis().bins;
  BinWeights w(grid.shot_count.size());
  const auto& counts = hist.counts();
  for (std::size_t b = 0; b < grid.shot_count.size(); ++b) {
    for (int q = 0; q < nq; ++q) {
      const double c = static_cast<double>(counts[b * nq + q]);
      const double sign = 1.0 - 2.0 * grid.q_projection(q);
      w.first[b] += c * sign;
      w.second[b] += c * sign * sign;
    }
    w.shots += static_cast<double>(grid.shot_count[b]);
  }
  return w;
}

// A shot at bin center S contributes (f(S) * kernel)_nm with
// f_jk(S) = conj(S)^j S^k to a statistic that is linear in the shots.
// Returns the variance of its mean, indexed like a MomentTable.
MomentTable linearized_variance(const CenterPowers& powers, const MomentTable& kernel,
                                const BinWeights& w) {
  const int order = kernel.order();
  MomentTable mean(order), second(order), f(order);
  for (std::size_t b = 0; b < w.first.size(); ++b) {
    if (w.second[b] == 0.0) continue;
    const Complex* p = powers.at(b);
    for (int j = 0; j <= order; ++j)
      for (int k = 0; j + k <= order; ++k) f(j, k) = std::conj(p[j]) * p[k];
    const MomentTable v = binomial_product(f, kernel);
    for (int n = 0; n <= order; ++n)
      for (int m = 0; n + m <= order; ++m) {
        mean(n, m) += w.first[b] * v(n, m);
        second(n, m) += w.second[b] * std::norm(v(n, m));
      }
  }
  MomentTable var(order);
  for (int n = 0; n <= order; ++n)
    for (int m = 0; n + m <= order; ++m) {
      const Complex mu = mean(n, m) / w.shots;
      var(n, m) = std::max(0.0, second(n, m).real() / w.shots - std::norm(mu)) / w.shots;
    }
  return var;
}

// Replaces the standard errors of the `axis` moments in `out` by the
// linearized errors of signal and reference shots. The deconvolved moments
// are a = R * G with G the inverse reference table, so a signal shot enters
// through f * G and a reference shot through -(a * G) * f.
void attach_errors(MomentSet& out, Axis axis, const CenterPowers& powers, const MomentTable& inverse,
                   const BinWeights& signal, const BinWeights& reference) {
  const int order = inverse.order();
  const MomentTable var_signal = linearized_variance(powers, inverse, signal);
  const MomentTable kernel = binomial_product(table_of(out, axis, order), inverse);
  const MomentTable var_reference = linearized_variance(powers, kernel, reference);
  for (int n = 0; n <= order; ++n)
    for (int m = 0; n + m <= order; ++m) {
      if (!out.contains(n, m, axis)) continue;
      const bool fixed = axis == Axis::Identity && n == 0 && m == 0;
      const double se = fixed ? 0.0 : std::sqrt(var_signal(n, m).real() + var_reference(n, m).real());
      out.set(n, m, axis, {out.at(n, m, axis).value, se});
    }
}

}  // namespace

std::size_t BlochGrid::valid_bins() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
}

void BlochGrid::write_csv(std::ostream& out) const {
  out << "ix,ip,x,p,count,valid,w_e\n" << std::setprecision(10);
  for (int ix = 0; ix < xp.bins; ++ix)
    for (int ip = 0; ip < xp.bins; ++ip) {
      const std::size_t b = flat(ix, ip);
      if (shot_count[b] == 0) continue;
      out << ix << ',' << ip << ',' << xp.center(ix) << ',' << xp.center(ip) << ','
          << shot_count[b] << ',' << int(valid[b]) << ',' << excited_weight[b] << '\n';
    }
}

BlochGrid extract_populations(const Histogram3D& hist, const QHistogram& ref_g,
                              const QHistogram& ref_e, std::uint64_t min_count) {
  if (!(ref_g.axis == hist.q_axis()) || !(ref_e.axis == hist.q_axis()))
    throw std::invalid_argument("reference histograms use different Q edges");
  if (ref_g.total() == 0 || ref_e.total() == 0)
    throw std::invalid_argument("empty reference histogram");
  const RealVector g = ref_g.probabilities();
  const RealVector d = ref_e.probabilities() - g;
  const double dd = d.squaredNorm();
  if (!(dd > 0.0)) throw std::invalid_argument("reference histograms are identical");

  // Least squares over w of |c/n - g - w d|^2 gives w = sum_q c_q u_q / n.
  BlochGrid grid;
  grid.basis = hist.basis();
  grid.xp = hist.x_axis();
  grid.q_projection = (d.array() - g.dot(d)) / dd;

  const int nb = grid.xp.bins, nq = hist.q_axis().bins;
  const std::size_t cells = static_cast<std::size_t>(nb) * nb;
  grid.excited_weight.assign(cells, 0.0);
  grid.linear_weight.assign(cells, 0.0);
  grid.shot_count.assign(cells, 0);
  grid.valid.assign(cells, 0);
  const auto& counts = hist.counts();
  for (std::size_t b = 0; b < cells; ++b) {
    std::uint64_t n = 0;
    double proj = 0.0;
    for (int q = 0; q < nq; ++q) {
      const auto c = counts[b * nq + q];
      n += c;
      proj += static_cast<double>(c) * grid.q_projection(q);
    }
    grid.shot_count[b] = n;
    if (n == 0) continue;
    grid.linear_weight[b] = proj / static_cast<double>(n);
    grid.excited_weight[b] = std::clamp(grid.linear_weight[b], 0.0, 1.0);
    grid.valid[b] = n >= min_count;
  }
  return grid;
}

MomentSet raw_moments(const Histogram3D& hist, const BlochGrid& grid, int max_order) {
  check_order(max_order);
  if (grid.basis != hist.basis() || !(grid.xp == hist.x_axis()))
    throw std::invalid_argument("grid does not belong to this histogram");
  if (grid.valid_bins() == 0) throw std::invalid_argument("no valid bins");
  const double shots = static_cast<double>(hist.in_range());

  const int nq = hist.q_axis().bins;
  RealVector sign(nq);
  for (int q = 0; q < nq; ++q) sign(q) = 1.0 - 2.0 * grid.q_projection(q);

  const CenterPowers powers(grid.xp, max_order);
  MomentAccumulator identity(max_order), sigma(max_order);
  const auto& counts = hist.counts();
  for (std::size_t b = 0; b < grid.shot_count.size(); ++b) {
    if (grid.shot_count[b] == 0) continue;
    double s1 = 0.0, s2 = 0.0;
    for (int q = 0; q < nq; ++q) {
      const double c = static_cast<double>(counts[b * nq + q]);
      s1 += c * sign(q);
      s2 += c * sign(q) * sign(q);
    }
    const double n = static_cast<double>(grid.shot_count[b]);
    identity.add(powers.at(b), n, n);
    sigma.add(powers.at(b), s1, s2);
  }

  MomentSet out(max_order);
  identity.emit(out, Axis::Identity, shots);
  sigma.emit(out, hist.basis(), shots);
  out.set(0, 0, Axis::Identity, {1.0, 0.0});
  out.fill_conjugates();
  return out;
}

MomentSet raw_field_moments(std::span<const Histogram3D* const> hists, int max_order) {
  check_order(max_order);
  if (hists.empty()) throw std::invalid_argument("no histograms");
  const Histogram3D& first = *hists.front();
  const CenterPowers powers(first.x_axis(), max_order);
  MomentAccumulator identity(max_order);
  double shots = 0.0;
  const int nq = first.q_axis().bins;
  const std::size_t cells = static_cast<std::size_t>(first.x_axis().bins) * first.x_axis().bins;
  for (const Histogram3D* h : hists) {
    if (!(h->x_axis() == first.x_axis()) || !(h->q_axis() == first.q_axis()))
      throw std::invalid_argument("pooled histograms use different edges");
    const auto& counts = h->counts();
    for (std::size_t b = 0; b < cells; ++b) {
      std::uint64_t n = 0;
      for (int q = 0; q < nq; ++q) n += counts[b * nq + q];
      if (n == 0) continue;
      identity.add(powers.at(b), static_cast<double>(n), static_cast<double>(n));
      shots += static_cast<double>(n);
    }
  }
  if (shots == 0.0) throw std::invalid_argument("no valid bins");
  MomentSet out(max_order);
  identity.emit(out, Axis::Identity, shots);
  out.set(0, 0, Axis::Identity, {1.0, 0.0});
  out.fill_conjugates();
  return out;
}

MomentSet raw_field_moments(const Histogram3D& hist, int max_order) {
  const Histogram3D* one[] = {&hist};
  return raw_field_moments(one, max_order);
}

MomentSet deconvolve(const MomentSet& raw, const MomentSet& reference_raw, int max_order) {
  if (max_order > raw.max_order()) throw std::invalid_argument("raw moments do not reach max_order");
  auto noise = [&](int p, int q) {
    if (auto v = reference_raw.find(p, q, Axis::Identity)) return *v;
    if (auto v = reference_raw.find(q, p, Axis::Identity)) return MomentValue{std::conj(v->value), v->std_error};
    throw std::invalid_argument("reference moment (" + std::to_string(p) + "," + std::to_string(q) +
                                ") missing");
  };
  const Complex h00 = noise(0, 0).value;
  if (std::abs(h00) == 0.0) throw std::invalid_argument("reference normalization is zero");

  // High orders cancel terms of size (1 + N)^order, so the recursion runs in
  // extended precision.
  using Wide = std::complex<long double>;
  const int stride = max_order + 1;
  MomentSet out(max_order);
  for (Axis axis : kAllAxes) {
    if (!raw.contains(0, 0, axis)) continue;
    std::vector<Wide> solved(static_cast<std::size_t>(stride) * stride);
    for (int order = 0; order <= max_order; ++order)
      for (int n = 0; n <= order; ++n) {
        const int m = order - n;
        const MomentValue r = moment_or_conjugate(raw, n, m, axis);
        Wide value(r.value.real(), r.value.imag());
        double var = r.std_error * r.std_error;
        for (int j = 0; j <= n; ++j)
          for (int k = 0; k <= m; ++k) {
            if (j == n && k == m) continue;
            const long double c = binomial(n, j) * binomial(m, k);
            const MomentValue a = out.at(j, k, axis);
            const MomentValue h = noise(n - j, m - k);
            value -= c * solved[j * stride + k] * Wide(h.value.real(), h.value.imag());
            var += static_cast<double>(c * c) *
                   (a.std_error * a.std_error * std::norm(h.value) +
                    std::norm(a.value) * h.std_error * h.std_error);
          }
        value /= Wide(h00.real(), h00.imag());
        solved[n * stride + m] = value;
        out.set(n, m, axis,
                {Complex(static_cast<double>(value.real()), static_cast<double>(value.imag())),
                 std::sqrt(var) / std::abs(h00)});
      }
  }
  if (out.contains(0, 0, Axis::Identity)) out.set(0, 0, Axis::Identity, {1.0, 0.0});
  return out;
}

MomentSet measure_moments(const TomographyData& data, const PipelineOptions& options) {
  if (data.signal.size() != 3) throw std::invalid_argument("need one histogram per basis x, y, z");
  std::vector<const Histogram3D*> pooled;
  for (Axis b : {Axis::X, Axis::Y, Axis::Z}) {
    auto it = std::find_if(data.signal.begin(), data.signal.end(),
                           [&](const Histogram3D& h) { return h.basis() == b; });
    if (it == data.signal.end())
      throw std::invalid_argument("missing histogram for basis " + std::string(axis_name(b)));
    pooled.push_back(&*it);
  }
  const int order = options.max_order;
  const MomentSet reference = raw_field_moments(data.reference, order);

  MomentSet out(order);
  out.take_axis(deconvolve(raw_field_moments(pooled, order), reference, order), Axis::Identity);
  std::vector<BlochGrid> grids;
  for (const Histogram3D* h : pooled) {
    grids.push_back(extract_populations(*h, data.ref_g, data.ref_e, options.min_count));
    out.take_axis(deconvolve(raw_moments(*h, grids.back(), order), reference, order), h->basis());
  }
  if (!options.linearized_errors) return out;

  for (const Histogram3D* h : pooled)
    if (!(h->x_axis() == data.reference.x_axis()))
      throw std::invalid_argument("signal and reference use different X/P edges");
  const CenterPowers powers(data.reference.x_axis(), order);
  const MomentTable inverse = binomial_inverse(table_of(reference, Axis::Identity, order));
  const Histogram3D* ref[] = {&data.reference};
  const BinWeights ref_weights = field_weights(ref);
  attach_errors(out, Axis::Identity, powers, inverse, field_weights(pooled), ref_weights);
  for (std::size_t i = 0; i < pooled.size(); ++i)
    attach_errors(out, pooled[i]->basis(), powers, inverse, sigma_weights(*pooled[i], grids[i]),
                  ref_weights);
  return out;
}

MomentSet bootstrap_errors(std::span<const TomographyData> batches, const PipelineOptions& options) {
  if (batches.size() < 2) throw std::invalid_argument("bootstrap needs at least two batches");
  std::vector<MomentSet> runs;
  runs.reserve(batches.size());
  PipelineOptions values_only = options;
  values_only.linearized_errors = false;
  for (const auto& b : batches) runs.push_back(measure_moments(b, values_only));

  const double count = static_cast<double>(runs.size());
  MomentSet out(options.max_order);
  for (const auto& [key, unused] : runs.front().entries()) {
    (void)unused;
    // Deviations from the first batch keep identical batches at exactly zero.
    const Complex first = runs.front().at(key.n, key.m, key.axis).value;
    Complex shift_sum = 0.0;
    double shift_sq = 0.0;
    for (const auto& r : runs) {
      const Complex d = r.at(key.n, key.m, key.axis).value - first;
      shift_sum += d;
      shift_sq += std::norm(d);
    }
    const double ss = std::max(0.0, shift_sq - std::norm(shift_sum) / count);
    out.set(key.n, key.m, key.axis, {first + shift_sum / count, std::sqrt(ss / (count - 1.0) / count)});
  }
  return out;
}

HermitianEstimate::HermitianEstimate(HilbertSpec space, Matrix entries)
    : space_(space), entries_(std::move(entries)) {
  if (entries_.rows() != space_.dim() || entries_.cols() != space_.dim())
    throw std::invalid_argument("matrix does not match the space");
}

double HermitianEstimate::min_eigenvalue() const { return qphoton::min_eigenvalue(entries_); }

bool HermitianEstimate::is_physical(double tolerance) const { return min_eigenvalue() >= -tolerance; }

DensityMatrix HermitianEstimate::project_to_physical() const {
  Eigen::SelfAdjointEigenSolver<Matrix> es(entries_);
  RealVector ev = es.eigenvalues().cwiseMax(0.0);
  if (!(ev.sum() > 0.0)) throw std::runtime_error("estimate has no positive spectrum");
  ev /= ev.sum();
  const Matrix m = es.eigenvectors() * ev.cast<Complex>().asDiagonal() * es.eigenvectors().adjoint();
  return {space_, 0.5 * (m + m.adjoint())};
}

HermitianEstimate moments_to_rho_linear(const MomentSet& moments, const HilbertSpec& space) {
  const OperatorBasis basis = operator_basis(space, false);
  const int d = space.dim();
  const auto k = static_cast<Eigen::Index>(basis.ops.size());
  Matrix vecs(d * d, k);
  Vector rhs(k);
  for (Eigen::Index l = 0; l < k; ++l) {
    vecs.col(l) = basis.ops[l].reshaped();
    const MomentKey& key = basis.keys[l];
    rhs(l) = std::conj(moment_or_conjugate(moments, key.n, key.m, key.axis).value);
  }
  // tr(B_k^dag B_l) = <vec B_k, vec B_l>.
  const Matrix gram = vecs.adjoint() * vecs;
  Eigen::FullPivLU<Matrix> lu(gram);
  if (lu.rank() < k) throw std::runtime_error("singular Gram matrix");
  const Vector c = lu.solve(rhs);
  const Matrix rho = (vecs * c).reshaped(d, d);
  return {space, hermitize_normalize(rho)};
}

// ---------------------------------------------------------------------------
// Maximum likelihood (weighted least squares) reconstruction.

namespace {

struct ChiSquare {
  int d;
  Matrix predict;  // row k: vec(B_k^T)^T, so predict * vec(rho) = tr(B_k rho)
  Matrix lift;     // column k: vec(B_k)
  Vector target;
  RealVector weight;

  double value(const Matrix& rho) const {
    const Vector r = predict * rho.reshaped() - target;
    return (r.cwiseAbs2().array() * weight.array()).sum();
  }

  // chi2 and its Hermitian derivative G with d chi2 = tr(G d rho).
  double value_and_derivative(const Matrix& rho, Matrix& g) const {
    const Vector r = predict * rho.reshaped() - target;
    const Vector wr = (weight.cast<Complex>().array() * r.conjugate().array()).matrix();
    const Matrix half = (lift * wr).reshaped(d, d);
    g = half + half.adjoint();
    return (r.cwiseAbs2().array() * weight.array()).sum();
  }
};

ChiSquare build_chi2(const MomentSet& moments, const HilbertSpec& space, int max_order) {
  const OperatorBasis basis = operator_basis(space, true);
  std::vector<Eigen::Index> used;
  ChiSquare chi;
  chi.d = space.dim();
  std::vector<Complex> target;
  std::vector<double> weight;
  std::vector<const Matrix*> ops;
  for (std::size_t l = 0; l < basis.keys.size(); ++l) {
    const MomentKey& key = basis.keys[l];
    if (key.n + key.m > max_order) continue;
    if (key.n == 0 && key.m == 0 && key.axis == Axis::Identity) continue;
    const MomentValue v = moment_or_conjugate(moments, key.n, key.m, key.axis);
    if (!(v.std_error > 0.0))
      throw std::invalid_argument("moment std errors must be positive for the fit");
    target.push_back(v.value);
    weight.push_back(1.0 / (v.std_error * v.std_error));
    ops.push_back(&basis.ops[l]);
  }
  const auto k = static_cast<Eigen::Index>(ops.size());
  const int d2 = chi.d * chi.d;
  chi.predict.resize(k, d2);
  chi.lift.resize(d2, k);
  chi.target.resize(k);
  chi.weight.resize(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    chi.predict.row(i) = ops[i]->transpose().reshaped().transpose();
    chi.lift.col(i) = ops[i]->reshaped();
    chi.target(i) = target[i];
    chi.weight(i) = weight[i];
  }
  return chi;
}

// Real parameter vector <-> lower-triangular T with real diagonal.
struct CholeskyMap {
  int d;
  int size() const { return d + d * (d - 1); }

  Matrix to_matrix(const RealVector& x) const {
    Matrix t = Matrix::Zero(d, d);
    int p = 0;
    for (int j = 0; j < d; ++j) {
      t(j, j) = x(p++);
      for (int i = j + 1; i < d; ++i) {
        t(i, j) = Complex(x(p), x(p + 1));
        p += 2;
      }
    }
    return t;
  }

  RealVector from_matrix(const Matrix& t) const {
    RealVector x(size());
    int p = 0;
    for (int j = 0; j < d; ++j) {
      x(p++) = t(j, j).real();
      for (int i = j + 1; i < d; ++i) {
        x(p++) = t(i, j).real();
        x(p++) = t(i, j).imag();
      }
    }
    return x;
  }
};

Matrix rho_from(const Matrix& t) {
  const Matrix tt = t * t.adjoint();
  return tt / tt.trace().real();
}

struct Objective {
  const ChiSquare& chi;
  CholeskyMap map;

  double operator()(const RealVector& x, RealVector& grad) const {
    const Matrix t = map.to_matrix(x);
    const Matrix tt = t * t.adjoint();
    const double tau = tt.trace().real();
    const Matrix rho = tt / tau;
    Matrix g;
    const double f = chi.value_and_derivative(rho, g);
    g -= (g * rho).trace().real() * Matrix::Identity(map.d, map.d);
    const Matrix w = (2.0 / tau) * g * t;
    grad.resize(map.size());
    int p = 0;
    for (int j = 0; j < map.d; ++j) {
      grad(p++) = w(j, j).real();
      for (int i = j + 1; i < map.d; ++i) {
        grad(p++) = w(i, j).real();
        grad(p++) = w(i, j).imag();
      }
    }
    return f;
  }
};

}  // namespace

double moment_chi2(const DensityMatrix& rho, const MomentSet& moments, int max_order) {
  return build_chi2(moments, rho.space(), max_order).value(rho.matrix());
}

MleResult mle_rho(const MomentSet& moments, const HilbertSpec& space, const MleOptions& options) {
  const ChiSquare chi = build_chi2(moments, space, options.max_order);
  const int d = space.dim();

  // Start from the positivity-projected linear estimate, nudged to full rank
  // so the Cholesky factor exists.
  const DensityMatrix start = moments_to_rho_linear(moments, space).project_to_physical();
  Matrix seed = start.matrix() + 1e-8 * Matrix::Identity(d, d);
  seed /= seed.trace().real();
  Eigen::LLT<Matrix> llt(seed);
  const Objective objective{chi, CholeskyMap{d}};
  RealVector x = objective.map.from_matrix(llt.matrixL());

  RealVector grad;
  double f = objective(x, grad);
  const double chi2_initial = chi.value(start.matrix());

  // L-BFGS with Armijo backtracking; every accepted step lowers f.
  constexpr int kHistory = 12;
  std::vector<RealVector> s_hist, y_hist;
  std::vector<double> rho_hist;
  std::vector<double> f_hist{f};
  MleResult result{DensityMatrix(space, rho_from(objective.map.to_matrix(x)), 1e-12, 1e-12), 0.0, 0.0, 0, 0, false, {}};
  result.moments_used = static_cast<int>(chi.target.size());
  int it = 0;
  for (; it < options.max_iterations; ++it) {
    if (grad.norm() < options.gradient_tolerance) {
      result.converged = true;
      result.stop_reason = "gradient tolerance";
      break;
    }
    const int window = options.improvement_window;
    if (static_cast<int>(f_hist.size()) > window) {
      const double old = f_hist[f_hist.size() - 1 - window];
      if (old - f <= options.relative_improvement * std::max(std::abs(old), 1e-300)) {
        result.converged = true;
        result.stop_reason = "chi2 stalled";
        break;
      }
    }
    RealVector q = grad;
    std::vector<double> alpha(s_hist.size());
    for (int i = static_cast<int>(s_hist.size()) - 1; i >= 0; --i) {
      alpha[i] = rho_hist[i] * s_hist[i].dot(q);
      q -= alpha[i] * y_hist[i];
    }
    if (!s_hist.empty()) q *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
    for (std::size_t i = 0; i < s_hist.size(); ++i) {
      const double beta = rho_hist[i] * y_hist[i].dot(q);
      q += (alpha[i] - beta) * s_hist[i];
    }
    RealVector dir = -q;
    double slope = grad.dot(dir);
    if (!(slope < 0.0)) {
      dir = -grad;
      slope = -grad.squaredNorm();
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
    }
    double step = s_hist.empty() ? std::min(1.0, 1.0 / grad.norm()) : 1.0;
    RealVector x_new, g_new;
    double f_new = f;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = x + step * dir;
      f_new = objective(x_new, g_new);
      if (std::isfinite(f_new) && f_new <= f + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted || !(f_new < f)) {
      if (!s_hist.empty()) {
        s_hist.clear();
        y_hist.clear();
        rho_hist.clear();
        continue;
      }
      result.converged = true;
      result.stop_reason = "no descent step";
      break;
    }
    const RealVector s = x_new - x, y = g_new - grad;
    const double sy = s.dot(y);
    if (sy > 1e-300) {
      s_hist.push_back(s);
      y_hist.push_back(y);
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > kHistory) {
        s_hist.erase(s_hist.begin());
        y_hist.erase(y_hist.begin());
        rho_hist.erase(rho_hist.begin());
      }
    }
    x = x_new;
    grad = g_new;
    f = f_new;
    f_hist.push_back(f);
  }
  if (!result.converged) result.stop_reason = "iteration cap";

  Matrix rho = rho_from(objective.map.to_matrix(x));
  rho = 0.5 * (rho + rho.adjoint());
  rho /= rho.trace().real();
  result.rho = DensityMatrix(space, rho, 1e-12, 1e-12);
  result.iterations = it;
  result.chi2_initial = chi2_initial;
  result.chi2_final = chi.value(rho);
  // The Cholesky start sits 1e-8 away from the projected estimate; never
  // report a fit worse than that starting point.
  if (result.chi2_final > chi2_initial) {
    result.rho = start;
    result.chi2_final = chi2_initial;
  }
  return result;
}

ConcurrenceResult qubit_photon_concurrence(const DensityMatrix& rho) {
  const HilbertSpec& s = rho.space();
  if (s.transmon_levels() != 2) throw std::invalid_argument("concurrence needs a two-level qubit");
  const int idx[4] = {s.index(0, 0), s.index(0, 1), s.index(1, 0), s.index(1, 1)};
  Matrix sub(4, 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) sub(i, j) = rho(idx[i], idx[j]);
  const double weight = sub.trace().real();
  if (weight < 1e-6) throw std::invalid_argument("projected weight below 1e-6");
  return {concurrence_two_qubit(sub / weight), weight};
}

DensityMatrix rotate_field_phase(const DensityMatrix& rho, double phase) {
  return apply_unitary(rho, field_phase(rho.space(), phase));
}

Metrics report_metrics(const DensityMatrix& rho, const KetState& target) {
  if (!(rho.space() == target.space())) throw std::invalid_argument("incompatible spaces");
  const HilbertSpec& s = rho.space();
  // Entry (i, j) picks up exp(i phi (n_i - n_j)).
  const Matrix& m = rho.matrix();
  auto max_imag = [&](double phi) {
    double worst = 0.0;
    for (int i = 0; i < s.dim(); ++i)
      for (int j = 0; j < s.dim(); ++j) {
        const int dn = i % s.fock_dim() - j % s.fock_dim();
        worst = std::max(worst, std::abs((m(i, j) * std::polar(1.0, phi * dn)).imag()));
      }
    return worst;
  };
  double phi = maximize_phase([&](double p) { return -max_imag(p); });
  const double alt = phi > 0.0 ? phi - kPi : phi + kPi;
  if (fidelity_to_pure(rotate_field_phase(rho, alt), target) >
      fidelity_to_pure(rotate_field_phase(rho, phi), target))
    phi = alt;

  const DensityMatrix rotated = rotate_field_phase(rho, phi);
  Metrics out;
  out.phase = phi;
  out.fidelity = fidelity_to_pure(rotated, target);
  out.purity = purity(rotated.matrix());
  out.max_imaginary = rotated.matrix().imag().cwiseAbs().maxCoeff();
  const Matrix field = partial_trace_qubit(rotated);
  for (int n = 0; n < s.fock_dim(); ++n) out.populations.push_back(field(n, n).real());
  if (s.transmon_levels() == 2) {
    try {
      const auto c = qubit_photon_concurrence(rotated);
      out.concurrence = c.concurrence;
      out.concurrence_weight = c.weight;
    } catch (const std::invalid_argument&) {
      out.concurrence = 0.0;
    }
  }
  return out;
}

void write_matrix_csv(std::ostream& out, const Matrix& m, bool imaginary) {
  out << std::setprecision(12);
  for (int i = 0; i < m.rows(); ++i) {
    for (int j = 0; j < m.cols(); ++j) {
      const double v = imaginary ? m(i, j).imag() : m(i, j).real();
      out << (j ? "," : "") << (v == 0.0 ? 0.0 : v);
    }
    out << '\n';
  }
}

void write_metrics(std::ostream& out, const Metrics& metrics) {
  out << std::setprecision(10);
  out << "fidelity=" << metrics.fidelity << '\n'
      << "concurrence=" << metrics.concurrence << '\n'
      << "concurrence_weight=" << metrics.concurrence_weight << '\n'
      << "purity=" << metrics.purity << '\n'
      << "max_imaginary=" << metrics.max_imaginary << '\n'
      << "lo_phase=" << metrics.phase << '\n';
  for (std::size_t n = 0; n < metrics.populations.size(); ++n)
    out << "population_" << n << '=' << metrics.populations[n] << '\n';
}

}  // namespace qphoton
