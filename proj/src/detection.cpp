#include "qphoton/detection.hpp"

#include <algorithm>
#include <numeric>
#include <cmath>
#include <stdexcept>
#include <thread>

#include "qphoton/dynamics.hpp"
#include "qphoton/phase_scan.hpp"

namespace qphoton {

void DetectorConfig::validate() const {
  if (!(eta > 0.0 && eta <= 1.0)) throw std::invalid_argument("eta must lie in (0, 1]");
  if (hist_bins_xp < 2 || hist_bins_q < 2) throw std::invalid_argument("histograms need >= 2 bins");
  if (!(hist_range_xp > 0.0)) throw std::invalid_argument("hist_range_xp must be positive");
  if (!(readout_sigma > 0.0)) throw std::invalid_argument("readout_sigma must be positive");
  if (readout_mu_g == readout_mu_e) throw std::invalid_argument("readout means must differ");
  if (!(readout_decay_mix >= 0.0 && readout_decay_mix <= 1.0))
    throw std::invalid_argument("readout_decay_mix must lie in [0, 1]");
  if (hist_range_q && !(*hist_range_q > 0.0))
    throw std::invalid_argument("hist_range_q must be positive");
}

double DetectorConfig::q_low() const {
  const double mid = 0.5 * (readout_mu_g + readout_mu_e);
  return mid - hist_range_q.value_or(5.0 * readout_sigma);
}

double DetectorConfig::q_high() const {
  const double mid = 0.5 * (readout_mu_g + readout_mu_e);
  return mid + hist_range_q.value_or(5.0 * readout_sigma);
}

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t tag, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(tag >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

namespace {

double uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// Marsaglia polar method: one pair of independent standard normals.
std::pair<double, double> normal_pair(std::mt19937_64& rng) {
  for (;;) {
    const double u = 2.0 * uniform(rng) - 1.0;
    const double v = 2.0 * uniform(rng) - 1.0;
    const double s = u * u + v * v;
    if (s > 0.0 && s < 1.0) {
      const double f = std::sqrt(-2.0 * std::log(s) / s);
      return {u * f, v * f};
    }
  }
}

std::uint64_t basis_code(Axis basis) { return static_cast<std::uint64_t>(basis); }

constexpr int kMaxRejections = 10000;

}  // namespace

ShotSampler::Branch ShotSampler::make_branch(bool excited, double weight, const Matrix& field) {
  Branch b{excited, weight, PhaseSpacePolynomial(field / weight, 0.0), 1.0, 1.0};
  // Complex Gaussian envelope with E|a|^2 = w, wider than the Husimi function
  // (whose second moment is <a a^dag> = <n> + 1). The bound on Q/envelope
  // comes from a dense polar scan of the smooth ratio plus a 5% margin.
  const RealVector photons = RealVector::LinSpaced(field.rows(), 0, field.rows() - 1);
  const double mean_photons = std::max(0.0, field.diagonal().real().dot(photons) / weight);
  b.envelope_w = 1.25 * (1.0 + mean_photons);
  const double w = b.envelope_w;
  const double r_max = 3.0 + 6.0 * std::sqrt(w);
  double peak = 0.0;
  for (double r = 0.0; r <= r_max; r += 0.01)
    for (int k = 0; k < 256; ++k) {
      const Complex a = std::polar(r, 2.0 * kPi * k / 256.0);
      peak = std::max(peak, w * std::exp(-r * r * (1.0 - 1.0 / w)) * b.husimi.polynomial(a));
    }
  b.envelope_m = 1.05 * peak;
  return b;
}

ShotSampler::ShotSampler(const DensityMatrix& rho, Axis basis, const DetectorConfig& config)
    : ShotSampler(apply_unitary(rho, tomography_rotation(basis, rho.space())), basis, config, 0) {}

ShotSampler::ShotSampler(const DensityMatrix& rotated, Axis basis, const DetectorConfig& config, int)
    : basis_(basis),
      config_(config),
      total_(partial_trace_qubit(rotated), config.noise_photons()),
      excited_(rotated.transmon_block(1, 1), config.noise_photons()) {
  config.validate();
  if (rotated.space().transmon_levels() != 2)
    throw std::invalid_argument("sampling needs a two-level qubit state");
  // Draw the projected qubit state first, then the field outcome from the
  // conditional field state: P(k, S) = tr(Pi_N(S) rho_kk) either way.
  for (int level : {0, 1}) {
    const Matrix block = rotated.transmon_block(level, level);
    const double weight = block.trace().real();
    if (weight > 1e-15) branches_.push_back(make_branch(level == 1, weight, block));
  }
  excited_weight_ = 0.0;
  for (const auto& b : branches_)
    if (b.excited) excited_weight_ = b.weight;
  if (branches_.size() == 2) excited_weight_ /= branches_[0].weight + branches_[1].weight;
  else if (!branches_.empty()) excited_weight_ = branches_[0].excited ? 1.0 : 0.0;
}

Complex ShotSampler::sample_field(const Branch& b, std::mt19937_64& rng) const {
  const double w = b.envelope_w;
  const double sd = std::sqrt(0.5 * w);
  const double damp = 1.0 - 1.0 / w;
  for (int attempt = 0; attempt < kMaxRejections; ++attempt) {
    const auto [u, v] = normal_pair(rng);
    const Complex a(sd * u, sd * v);
    const double ratio = w * std::exp(-std::norm(a) * damp) * b.husimi.polynomial(a);
    if (uniform(rng) * b.envelope_m < ratio) return a;
  }
  throw std::runtime_error("Husimi rejection sampler exceeded its attempt budget");
}

const ShotSampler::Branch& ShotSampler::pick_branch(std::mt19937_64& rng) const {
  if (branches_.size() == 1) return branches_[0];
  const bool excited = uniform(rng) < excited_weight_;
  return branches_[0].excited == excited ? branches_[0] : branches_[1];
}

Complex ShotSampler::sample_husimi(std::mt19937_64& rng) const {
  return sample_field(pick_branch(rng), rng);
}

double ShotSampler::excited_probability(Complex s) const {
  const double total = total_.polynomial(s);
  if (!(total > 0.0)) return 0.0;
  return std::clamp(excited_.polynomial(s) / total, 0.0, 1.0);
}

double ShotSampler::outcome_density(Complex s) const { return total_(s); }

double ShotSampler::sample_readout(bool excited, std::mt19937_64& rng) const {
  const auto [z, unused] = normal_pair(rng);
  (void)unused;
  double mu = config_.readout_mu_g;
  if (excited && uniform(rng) >= config_.readout_decay_mix) mu = config_.readout_mu_e;
  return mu + config_.readout_sigma * z;
}

Shot ShotSampler::sample(std::mt19937_64& rng) const {
  const Branch& branch = pick_branch(rng);
  const Complex alpha = sample_field(branch, rng);
  const double noise_sd = std::sqrt(0.5 * config_.noise_photons());
  const auto [u, v] = normal_pair(rng);
  const Complex s = alpha + Complex(noise_sd * u, noise_sd * v);
  return {basis_, s.real(), s.imag(), sample_readout(branch.excited, rng)};
}

ShotBatch sample_chunk(const ShotSampler& sampler, const DetectorConfig& config,
                       std::uint64_t stream_tag, std::uint64_t chunk, std::size_t count) {
  auto rng = stream_rng(config.seed, basis_code(sampler.basis()) + 16 * stream_tag, chunk);
  ShotBatch shots(count);
  for (auto& s : shots) s = sampler.sample(rng);
  return shots;
}

ShotBatch sample_shots(const DensityMatrix& rho, Axis basis, std::size_t n_shots,
                       const DetectorConfig& config, std::uint64_t stream_tag) {
  if (n_shots < 1) throw std::invalid_argument("n_shots must be >= 1");
  const ShotSampler sampler(rho, basis, config);
  ShotBatch shots;
  shots.reserve(n_shots);
  for (std::uint64_t c = 0; shots.size() < n_shots; ++c) {
    const auto batch =
        sample_chunk(sampler, config, stream_tag, c, std::min(kShotChunk, n_shots - shots.size()));
    shots.insert(shots.end(), batch.begin(), batch.end());
  }
  return shots;
}

Histogram3D simulate_histogram(const DensityMatrix& rho, Axis basis, std::size_t n_shots,
                               const DetectorConfig& config, int workers,
                               std::uint64_t first_chunk, std::uint64_t stream_tag) {
  if (n_shots < 1) throw std::invalid_argument("n_shots must be >= 1");
  const ShotSampler sampler(rho, basis, config);
  const std::size_t chunks = (n_shots + kShotChunk - 1) / kShotChunk;
  workers = std::max(1, std::min<int>(workers, static_cast<int>(chunks)));

  std::vector<Histogram3D> partial(workers, Histogram3D::for_config(basis, config));
  auto work = [&](int w) {
    for (std::size_t c = w; c < chunks; c += workers) {
      const std::size_t count = std::min(kShotChunk, n_shots - c * kShotChunk);
      partial[w].accumulate(sample_chunk(sampler, config, stream_tag, first_chunk + c, count));
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(workers);
    for (int w = 0; w < workers; ++w)
      threads.emplace_back([&, w] {
        try {
          work(w);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto& t : threads) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  for (int w = 1; w < workers; ++w) partial[0].merge(partial[w]);
  return std::move(partial[0]);
}

namespace {

// Probability that the readout of a projected qubit lands in each Q bin.
RealVector readout_bin_probabilities(const DetectorConfig& config, const BinAxis& axis, bool excited) {
  auto cdf = [&](double mu, double t) {
    return 0.5 * std::erfc(-(t - mu) / (config.readout_sigma * std::sqrt(2.0)));
  };
  auto mixture = [&](double t) {
    if (!excited) return cdf(config.readout_mu_g, t);
    return config.readout_decay_mix * cdf(config.readout_mu_g, t) +
           (1.0 - config.readout_decay_mix) * cdf(config.readout_mu_e, t);
  };
  RealVector p(axis.bins);
  for (int q = 0; q < axis.bins; ++q) p(q) = mixture(axis.edge(q + 1)) - mixture(axis.edge(q));
  return p;
}

// Multinomial draw by sequential conditional binomials; whatever is left
// after the last cell is overflow.
std::vector<std::uint64_t> multinomial(std::uint64_t n, std::span<const double> probs,
                                       std::mt19937_64& rng) {
  std::vector<std::uint64_t> counts(probs.size(), 0);
  double remaining_p = 1.0;
  std::uint64_t remaining = n;
  for (std::size_t i = 0; i < probs.size() && remaining > 0; ++i) {
    if (probs[i] <= 0.0) continue;
    const double p = std::clamp(probs[i] / remaining_p, 0.0, 1.0);
    std::binomial_distribution<std::uint64_t> draw(remaining, p);
    counts[i] = draw(rng);
    remaining -= counts[i];
    remaining_p = std::max(remaining_p - probs[i], 0.0);
  }
  return counts;
}

constexpr std::uint64_t kBinnedTag = 1u << 20;

}  // namespace

std::vector<double> cell_probabilities(const DensityMatrix& rho, Axis basis,
                                       const DetectorConfig& config) {
  config.validate();
  if (rho.space().transmon_levels() != 2)
    throw std::invalid_argument("sampling needs a two-level qubit state");
  const DensityMatrix rotated = apply_unitary(rho, tomography_rotation(basis, rho.space()));
  const Histogram3D layout = Histogram3D::for_config(basis, config);
  const BinAxis& xp = layout.x_axis();
  const BinAxis& qa = layout.q_axis();

  // Four-point Gauss-Legendre rule per axis inside each (X, P) bin.
  constexpr std::array<double, 4> node{-0.8611363115940526, -0.3399810435848563,
                                       0.3399810435848563, 0.8611363115940526};
  constexpr std::array<double, 4> weight{0.3478548451374638, 0.6521451548625461,
                                         0.6521451548625461, 0.3478548451374638};
  const double half = 0.5 * xp.width();

  std::vector<double> cells(layout.counts().size(), 0.0);
  for (int level : {0, 1}) {
    const Matrix block = rotated.transmon_block(level, level);
    if (!(block.trace().real() > 0.0)) continue;
    const PhaseSpacePolynomial density(block, config.noise_photons());
    const RealVector q_prob = readout_bin_probabilities(config, qa, level == 1);
    for (int ix = 0; ix < xp.bins; ++ix)
      for (int ip = 0; ip < xp.bins; ++ip) {
        double mass = 0.0;
        for (int i = 0; i < 4; ++i)
          for (int j = 0; j < 4; ++j)
            mass += weight[i] * weight[j] *
                    density(Complex(xp.center(ix) + half * node[i], xp.center(ip) + half * node[j]));
        mass *= half * half;
        double* out = &cells[(static_cast<std::size_t>(ix) * xp.bins + ip) * qa.bins];
        for (int q = 0; q < qa.bins; ++q) out[q] += std::max(mass, 0.0) * q_prob(q);
      }
  }
  return cells;
}

Histogram3D simulate_histogram_binned(const DensityMatrix& rho, Axis basis, std::uint64_t n_shots,
                                      const DetectorConfig& config, std::uint64_t stream_tag) {
  if (n_shots < 1) throw std::invalid_argument("n_shots must be >= 1");
  const std::vector<double> probs = cell_probabilities(rho, basis, config);
  auto rng = stream_rng(config.seed, kBinnedTag + basis_code(basis) + 16 * stream_tag, 0);
  const auto counts = multinomial(n_shots, probs, rng);
  return Histogram3D::from_counts(Histogram3D::for_config(basis, config), counts,
                                  n_shots - std::accumulate(counts.begin(), counts.end(), std::uint64_t{0}));
}

std::pair<QHistogram, QHistogram> readout_reference_histograms(const DetectorConfig& config,
                                                               std::size_t n_shots) {
  if (n_shots < 1) throw std::invalid_argument("n_shots must be >= 1");
  config.validate();
  const BinAxis axis{config.q_low(), config.q_high(), config.hist_bins_q};
  const HilbertSpec space = HilbertSpec::reconstruction();
  // The samplers only contribute their readout model here.
  const ShotSampler sampler(DensityMatrix::pure(KetState::basis(space, 0, 0)), Axis::Z, config);
  auto fill = [&](bool excited, std::uint64_t tag) {
    QHistogram h{axis, std::vector<std::uint64_t>(axis.bins, 0), 0};
    auto rng = stream_rng(config.seed, tag, 0);
    for (std::size_t i = 0; i < n_shots; ++i) {
      const int b = axis.locate(sampler.sample_readout(excited, rng));
      if (b < 0)
        ++h.overflow;
      else
        ++h.counts[b];
    }
    return h;
  };
  return {fill(false, 1000), fill(true, 1001)};
}

std::pair<QHistogram, QHistogram> readout_reference_histograms_binned(const DetectorConfig& config,
                                                                      std::uint64_t n_shots) {
  if (n_shots < 1) throw std::invalid_argument("n_shots must be >= 1");
  config.validate();
  const BinAxis axis{config.q_low(), config.q_high(), config.hist_bins_q};
  auto fill = [&](bool excited, std::uint64_t tag) {
    const RealVector p = readout_bin_probabilities(config, axis, excited);
    auto rng = stream_rng(config.seed, kBinnedTag + tag, 0);
    QHistogram h{axis, multinomial(n_shots, std::span<const double>(p.data(), p.size()), rng), 0};
    h.overflow = n_shots - h.total();
    return h;
  };
  return {fill(false, 1000), fill(true, 1001)};
}

double readout_assignment_fidelity(const DetectorConfig& config) {
  config.validate();
  auto cdf = [&](double mu, double t) {
    return 0.5 * std::erfc(-(t - mu) / (config.readout_sigma * std::sqrt(2.0)));
  };
  auto separation = [&](double t) {
    const double fg = cdf(config.readout_mu_g, t);
    const double fe = config.readout_decay_mix * cdf(config.readout_mu_g, t) +
                      (1.0 - config.readout_decay_mix) * cdf(config.readout_mu_e, t);
    return std::abs(fg - fe);
  };
  const double mid = 0.5 * (config.readout_mu_g + config.readout_mu_e);
  const double span = std::abs(config.readout_mu_e - config.readout_mu_g) + 5.0 * config.readout_sigma;
  // Map the threshold search window onto the phase scanner's [-pi, pi).
  const double best = maximize_phase([&](double u) { return separation(mid + span * u / kPi); });
  return separation(mid + span * best / kPi);
}

Complex matched_filter(std::span<const Complex> trace, double dt, double kappa) {
  if (!(kappa > 0.0)) throw std::invalid_argument("kappa must be positive");
  if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
  if (static_cast<double>(trace.size()) * dt < 5.0 / kappa * (1.0 - 1e-9))
    throw std::invalid_argument("trace shorter than 5/kappa");
  RealVector f(trace.size());
  for (std::size_t k = 0; k < trace.size(); ++k)
    f(k) = std::sqrt(kappa) * std::exp(-0.5 * kappa * dt * static_cast<double>(k));
  f /= std::sqrt(f.squaredNorm() * dt);
  Complex out = 0.0;
  for (std::size_t k = 0; k < trace.size(); ++k) out += f(k) * trace[k];
  return out * dt;
}

}  // namespace qphoton
