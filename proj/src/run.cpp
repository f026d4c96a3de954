#include "qphoton/run.hpp"

#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace qphoton {

namespace fs = std::filesystem;

namespace {

constexpr char kVacuumMagic[8] = {'Q', 'P', 'V', 'A', 'C', '0', '0', '1'};
// Vacuum batch k draws from stream kVacuumStream + k, far from the signal
// batch streams kFirstBatchStream + k.
constexpr std::uint64_t kVacuumStream = 1u << 16;
constexpr std::uint64_t kFirstBatchStream = 2;

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(std::string_view in, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(in[at + i]);
  return v;
}

DensityMatrix vacuum_state() {
  return DensityMatrix::pure(KetState::basis(HilbertSpec::reconstruction(), 0, 0));
}

Histogram3D simulate(const DensityMatrix& rho, Axis basis, std::uint64_t shots,
                     const DetectorConfig& det, SamplerMode mode, int workers, std::uint64_t tag) {
  if (mode == SamplerMode::Binned) return simulate_histogram_binned(rho, basis, shots, det, tag);
  return simulate_histogram(rho, basis, shots, det, workers, 0, tag);
}

std::ofstream open_out(const fs::path& file, bool binary = false) {
  std::ofstream out(file, binary ? std::ios::binary : std::ios::out);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  return out;
}

void write_rho(const fs::path& dir, const std::string& stem, const Matrix& m) {
  auto re = open_out(dir / (stem + "_real.csv"));
  write_matrix_csv(re, m, false);
  auto im = open_out(dir / (stem + "_imag.csv"));
  write_matrix_csv(im, m, true);
}

// Every off-diagonal entry of the target with a clearly negative real part.
std::vector<std::pair<int, int>> negative_elements(const KetState& target) {
  const Vector& v = target.amplitudes();
  std::vector<std::pair<int, int>> out;
  for (int i = 0; i < v.size(); ++i)
    for (int j = 0; j < v.size(); ++j)
      if (i != j && (v(i) * std::conj(v(j))).real() < -1e-9) out.emplace_back(i, j);
  return out;
}

bool uses_third_level(const PulseSequence& seq) {
  for (const auto& s : seq.segments) {
    Transition t = Transition::GE;
    if (const auto* c = std::get_if<CarrierPulse>(&s)) t = c->transition;
    if (const auto* w = std::get_if<ResonantSwap>(&s)) t = w->transition;
    if (t != Transition::GE) return true;
  }
  return false;
}

DensityMatrix prepare(const RunConfig& c) {
  const HilbertSpec recon = HilbertSpec::reconstruction();
  switch (c.experiment) {
    case Experiment::ReferenceG: return DensityMatrix::pure(KetState::basis(recon, 0, 0));
    case Experiment::ReferenceE: return DensityMatrix::pure(KetState::basis(recon, 1, 0));
    case Experiment::VacuumReference: return vacuum_state();
    case Experiment::Bell:
    case Experiment::TwoPhoton: break;
  }
  if (!c.sequence) {
    return c.experiment == Experiment::Bell ? prepare_bell(c.params, c.ideal)
                                            : prepare_two_photon(c.params, c.ideal);
  }
  const bool three = c.experiment == Experiment::TwoPhoton || uses_third_level(*c.sequence);
  const HilbertSpec prep(three ? 3 : 2, c.params.prep_fock_cutoff);
  return finish_preparation(run_sequence(*c.sequence, c.params, prep, c.ideal), c.params,
                            experiment_target(c.experiment), c.ideal);
}

// Standard deviation of the X marginal from bin centers.
double quadrature_std(const Histogram3D& h) {
  const BinAxis& x = h.x_axis();
  const int nq = h.q_axis().bins, nb = x.bins;
  double n = 0.0, s1 = 0.0, s2 = 0.0;
  for (int ix = 0; ix < nb; ++ix) {
    double c = 0.0;
    for (int ip = 0; ip < nb; ++ip)
      for (int iq = 0; iq < nq; ++iq) c += static_cast<double>(h.count(ix, ip, iq));
    n += c;
    s1 += c * x.center(ix);
    s2 += c * x.center(ix) * x.center(ix);
  }
  const double mean = s1 / n;
  return std::sqrt(std::max(0.0, s2 / n - mean * mean));
}

struct Manifest {
  std::vector<std::array<std::string, 3>> rows;
  void add(std::string file, std::string figure, std::string what) {
    rows.push_back({std::move(file), std::move(figure), std::move(what)});
  }
  void write(const fs::path& file) const {
    auto out = open_out(file);
    out << "# file\tfigure\tcontent\n";
    for (const auto& r : rows) out << r[0] << '\t' << r[1] << '\t' << r[2] << '\n';
  }
};

class MetricsWriter {
 public:
  template <class T>
  void add(const std::string& key, const T& value) {
    std::ostringstream s;
    s << std::setprecision(10) << value;
    lines_.push_back(key + "=" + s.str());
  }
  void write(const fs::path& file, const Metrics* metrics) const {
    auto out = open_out(file);
    for (const auto& l : lines_) out << l << '\n';
    if (metrics) write_metrics(out, *metrics);
  }

 private:
  std::vector<std::string> lines_;
};

}  // namespace

KetState experiment_target(Experiment e) {
  const HilbertSpec recon = HilbertSpec::reconstruction();
  switch (e) {
    case Experiment::Bell: return bell_target();
    case Experiment::TwoPhoton: return two_photon_target();
    case Experiment::ReferenceE: return KetState::basis(recon, 1, 0);
    case Experiment::ReferenceG:
    case Experiment::VacuumReference: break;
  }
  return KetState::basis(recon, 0, 0);
}

fs::path vacuum_cache_path(const DetectorConfig& config, std::uint64_t shots, SamplerMode mode,
                           const fs::path& cache_dir, int batches) {
  std::ostringstream name;
  name << "vacuum_" << std::hex << std::setw(16) << std::setfill('0')
       << fnv1a(detector_fingerprint(config, shots, mode) + ";batches=" + std::to_string(batches))
       << ".bin";
  return cache_dir / name.str();
}

// Cache layout: magic[8], fingerprint length u64, fingerprint, batch count
// u64, the histogram binaries, then the FNV-1a hash of everything before it.
std::vector<Histogram3D> read_vacuum_cache(const fs::path& file, std::string* fingerprint) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + file.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto corrupt = [&](const std::string& why) {
    return std::runtime_error("vacuum reference cache " + file.string() + " is corrupt (" + why +
                              "); delete it to regenerate");
  };
  if (bytes.size() < 32 || std::memcmp(bytes.data(), kVacuumMagic, 8) != 0) throw corrupt("bad header");
  const std::uint64_t stored = get_u64(bytes, bytes.size() - 8);
  if (fnv1a(std::string_view(bytes).substr(0, bytes.size() - 8)) != stored)
    throw corrupt("checksum mismatch");
  const std::uint64_t flen = get_u64(bytes, 8);
  if (flen > bytes.size() || 16 + flen + 16 > bytes.size()) throw corrupt("bad fingerprint length");
  if (fingerprint) *fingerprint = bytes.substr(16, flen);
  const std::uint64_t batches = get_u64(bytes, 16 + flen);
  std::istringstream hist(bytes.substr(24 + flen, bytes.size() - 8 - 24 - flen));
  std::vector<Histogram3D> out;
  try {
    for (std::uint64_t k = 0; k < batches; ++k) out.push_back(Histogram3D::read_binary(hist));
  } catch (const std::exception& e) {
    throw corrupt(e.what());
  }
  if (hist.peek() != std::char_traits<char>::eof()) throw corrupt("trailing bytes");
  return out;
}

std::vector<Histogram3D> vacuum_reference(const DetectorConfig& config, std::uint64_t shots,
                                          SamplerMode mode, int workers, const fs::path& cache_dir,
                                          int batches, bool* from_cache) {
  if (batches < 1) throw std::invalid_argument("batches must be >= 1");
  if (shots < static_cast<std::uint64_t>(batches)) throw std::invalid_argument("fewer shots than batches");
  const std::string fingerprint =
      detector_fingerprint(config, shots, mode) + ";batches=" + std::to_string(batches);
  const fs::path file = vacuum_cache_path(config, shots, mode, cache_dir, batches);
  if (fs::exists(file)) {
    std::string stored_fingerprint;
    std::vector<Histogram3D> out = read_vacuum_cache(file, &stored_fingerprint);
    if (stored_fingerprint != fingerprint || out.size() != static_cast<std::size_t>(batches))
      throw std::runtime_error("vacuum reference cache " + file.string() +
                               " is corrupt (fingerprint mismatch); delete it to regenerate");
    if (from_cache) *from_cache = true;
    return out;
  }

  std::vector<Histogram3D> out;
  const std::uint64_t per_batch = shots / batches;
  for (int k = 0; k < batches; ++k) {
    const std::uint64_t n = k + 1 == batches ? shots - per_batch * (batches - 1) : per_batch;
    out.push_back(simulate(vacuum_state(), Axis::Z, n, config, mode, workers, kVacuumStream + k));
  }
  std::string bytes(kVacuumMagic, 8);
  put_u64(bytes, fingerprint.size());
  bytes += fingerprint;
  put_u64(bytes, static_cast<std::uint64_t>(batches));
  std::ostringstream hist;
  for (const auto& h : out) h.write_binary(hist);
  bytes += hist.str();
  put_u64(bytes, fnv1a(bytes));
  fs::create_directories(cache_dir);
  const fs::path tmp = file.string() + ".tmp";
  {
    auto out_file = open_out(tmp, true);
    out_file.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  fs::rename(tmp, file);
  if (from_cache) *from_cache = false;
  return out;
}

void run_experiment(const RunConfig& config, const std::string& config_text, int workers,
                    std::ostream& log) {
  config.validate();
  const fs::path dir = config.output_dir;
  fs::create_directories(dir);
  const DetectorConfig& det = config.detector;
  Manifest manifest;
  MetricsWriter metrics;
  metrics.add("experiment", experiment_name(config.experiment));
  metrics.add("ideal", config.ideal ? "true" : "false");

  open_out(dir / "config.txt") << config_text;
  manifest.add("config.txt", "-", "verbatim copy of the run configuration");
  for (const auto& w : config.params.hierarchy_warnings()) log << "warning: " << w << '\n';

  // Readout references.
  const auto [ref_g, ref_e] =
      config.sampler == SamplerMode::Binned
          ? readout_reference_histograms_binned(det, config.readout_reference_shots)
          : readout_reference_histograms(det, config.readout_reference_shots);
  {
    auto out = open_out(dir / "fig1e_readout_reference.csv");
    out << "q_low,q_high,q_center,count_g,count_e,p_g,p_e\n" << std::setprecision(10);
    const RealVector pg = ref_g.probabilities(), pe = ref_e.probabilities();
    for (int q = 0; q < ref_g.axis.bins; ++q)
      out << ref_g.axis.edge(q) << ',' << ref_g.axis.edge(q + 1) << ',' << ref_g.axis.center(q)
          << ',' << ref_g.counts[q] << ',' << ref_e.counts[q] << ',' << pg(q) << ',' << pe(q) << '\n';
  }
  manifest.add("fig1e_readout_reference.csv", "1e", "Q histograms of the g and e readout references");
  metrics.add("readout_fidelity", readout_assignment_fidelity(det));

  // Vacuum reference (cached per detector settings).
  bool cached = false;
  const std::vector<Histogram3D> vacuum_batches = vacuum_reference(
      det, config.vacuum_shots(), config.sampler, workers, config.cache_dir, config.batches, &cached);
  Histogram3D vacuum = vacuum_batches.front();
  for (std::size_t k = 1; k < vacuum_batches.size(); ++k) vacuum.merge(vacuum_batches[k]);
  log << (cached ? "vacuum reference loaded from " : "vacuum reference written to ")
      << vacuum_cache_path(det, config.vacuum_shots(), config.sampler, config.cache_dir, config.batches)
             .string()
      << '\n';
  metrics.add("vacuum_delta_m", quadrature_std(vacuum));
  metrics.add("vacuum_shots", config.vacuum_shots());
  {
    auto out = open_out(dir / "vacuum_reference.bin", true);
    vacuum.write_binary(out);
  }
  manifest.add("vacuum_reference.bin", "-", "vacuum-input histogram used for deconvolution");

  if (config.experiment == Experiment::VacuumReference) {
    const MomentSet raw = raw_field_moments(vacuum, config.max_order);
    auto out = open_out(dir / "vacuum_moments.txt");
    raw.write_table(out);
    manifest.add("vacuum_moments.txt", "-", "raw moments <(S^dag)^n S^m> of the vacuum reference");
    metrics.add("raw_SdagS", raw.at(1, 1, Axis::Identity).value.real());
    metrics.add("noise_photons_estimate", raw.at(1, 1, Axis::Identity).value.real() - 1.0);
    auto csv = open_out(dir / "vacuum_reference.csv");
    vacuum.write_csv(csv);
    manifest.add("vacuum_reference.csv", "-", "non-empty bins of the vacuum histogram");
    metrics.write(dir / "metrics.txt", nullptr);
    manifest.add("metrics.txt", "-", "summary metrics");
    manifest.write(dir / "manifest.txt");
    return;
  }

  // State preparation.
  const DensityMatrix rho = prepare(config);
  const KetState target = experiment_target(config.experiment);
  write_rho(dir, "rho_prepared", rho.matrix());
  manifest.add("rho_prepared_real.csv", "-", "simulated joint state handed to the detector (real part)");
  manifest.add("rho_prepared_imag.csv", "-", "simulated joint state handed to the detector (imaginary part)");
  metrics.add("prepared_fidelity", fidelity_to_pure(rho, target));

  // Field measurement and qubit readout, batch by batch.
  const std::array<Axis, 3> bases{Axis::X, Axis::Y, Axis::Z};
  std::vector<TomographyData> batches;
  TomographyData full{{}, vacuum, ref_g, ref_e};
  for (Axis b : bases) full.signal.push_back(Histogram3D::for_config(b, det));
  const std::uint64_t per_batch = config.shots_per_basis / config.batches;
  for (int k = 0; k < config.batches; ++k) {
    const std::uint64_t n =
        k + 1 == config.batches ? config.shots_per_basis - per_batch * (config.batches - 1) : per_batch;
    TomographyData batch{{}, vacuum_batches[k], ref_g, ref_e};
    for (int bi = 0; bi < 3; ++bi) {
      const Axis b = bases[bi];
      if (config.write_shot_log) {
        const ShotSampler sampler(rho, b, det);
        Histogram3D h = Histogram3D::for_config(b, det);
        std::ofstream out(dir / ("shots_" + std::string(axis_name(b)) + ".log"),
                          std::ios::binary | (k == 0 ? std::ios::trunc : std::ios::app));
        for (std::uint64_t c = 0; c * kShotChunk < n; ++c) {
          const auto shots = sample_chunk(sampler, det, kFirstBatchStream + k, c,
                                          std::min<std::uint64_t>(kShotChunk, n - c * kShotChunk));
          write_shot_log(out, shots);
          h.accumulate(shots);
        }
        batch.signal.push_back(std::move(h));
      } else {
        batch.signal.push_back(simulate(rho, b, n, det, config.sampler, workers, kFirstBatchStream + k));
      }
      full.signal[bi].merge(batch.signal.back());
    }
    batches.push_back(std::move(batch));
  }
  if (config.write_shot_log)
    for (Axis b : bases)
      manifest.add("shots_" + std::string(axis_name(b)) + ".log", "-",
                   "raw shots: basis char + X, P, Q as little-endian f64");

  for (const auto& h : full.signal) {
    const std::string tag(axis_name(h.basis()));
    auto bin = open_out(dir / ("hist_" + tag + ".bin"), true);
    h.write_binary(bin);
    auto csv = open_out(dir / ("hist_" + tag + ".csv"));
    h.write_csv(csv);
    manifest.add("hist_" + tag + ".bin", "-", "3-D histogram (X, P, Q), basis " + tag);
    manifest.add("hist_" + tag + ".csv", "-", "non-empty bins of the basis-" + tag + " histogram");
    const BlochGrid grid = extract_populations(h, ref_g, ref_e, config.min_count);
    auto g = open_out(dir / ("fig2a_bloch_" + tag + ".csv"));
    grid.write_csv(g);
    manifest.add("fig2a_bloch_" + tag + ".csv", "2a",
                 "excited-state weight per (X, P) bin after the basis-" + tag + " rotation");
    metrics.add("overflow_" + tag, h.overflow());
  }

  // Moments.
  const PipelineOptions options{config.max_order, config.min_count};
  const MomentSet propagated = measure_moments(full, options);
  MomentSet table = propagated;
  if (config.batches >= 2) {
    const MomentSet boot = bootstrap_errors(batches, options);
    for (const auto& [k, v] : boot.entries()) {
      MomentValue row = propagated.at(k.n, k.m, k.axis);
      row.std_error = v.std_error;
      table.set(k.n, k.m, k.axis, row);
    }
  }
  {
    auto out = open_out(dir / "fig2b_moments.txt");
    table.write_table(out);
    auto prop = open_out(dir / "moments_propagated.txt");
    propagated.write_table(prop);
  }
  manifest.add("fig2b_moments.txt", "2b",
               config.batches >= 2 ? "deconvolved moments with batch std errors"
                                   : "deconvolved moments with propagated std errors");
  manifest.add("moments_propagated.txt", "2b", "deconvolved moments with propagated std errors");

  // Reconstruction.
  const HermitianEstimate linear = moments_to_rho_linear(propagated);
  const MleResult mle = mle_rho(propagated, HilbertSpec::reconstruction(), MleOptions{config.max_order});
  const std::string fig = config.experiment == Experiment::TwoPhoton ? "3" : "2c";
  write_rho(dir, "fig" + fig + "_rho_linear", linear.matrix());
  write_rho(dir, "fig" + fig + "_rho_mle", mle.rho.matrix());
  for (const char* kind : {"linear", "mle"})
    for (const char* part : {"real", "imag"})
      manifest.add("fig" + fig + "_rho_" + kind + "_" + part + ".csv", fig,
                   std::string(kind) + " density matrix, " + part +
                       " part; rows/cols index level*5 + n (g first, n = 0..4)");

  const Metrics m = report_metrics(mle.rho, target);
  metrics.add("linear_min_eigenvalue", linear.min_eigenvalue());
  metrics.add("mle_chi2_initial", mle.chi2_initial);
  metrics.add("mle_chi2_final", mle.chi2_final);
  metrics.add("mle_iterations", mle.iterations);
  metrics.add("mle_moments_used", mle.moments_used);
  metrics.add("mle_converged", mle.converged ? "true" : "false");
  metrics.add("mle_stop_reason", mle.stop_reason);
  const auto moment = [&](const std::string& key, int n, int k, Axis a) {
    const MomentValue v = propagated.at(n, k, a);
    metrics.add(key, v.value.real());
    metrics.add(key + "_std_error", v.std_error);
  };
  moment("moment_adag_a", 1, 1, Axis::Identity);
  moment("moment_adag2_a2", 2, 2, Axis::Identity);
  moment("moment_sigma_z", 0, 0, Axis::Z);
  moment("moment_adag_a_sigma_z", 1, 1, Axis::Z);
  const auto negatives = negative_elements(target);
  if (!negatives.empty()) {
    const Matrix rotated = rotate_field_phase(mle.rho, m.phase).matrix();
    int matched = 0;
    for (auto [i, j] : negatives) matched += rotated(i, j).real() < 0.0;
    metrics.add("target_negative_elements", negatives.size());
    metrics.add("negative_elements_matched", matched);
  }
  metrics.write(dir / "metrics.txt", &m);
  manifest.add("metrics.txt", "-", "fidelity, concurrence, purity, populations and fit diagnostics");
  manifest.add("summary.csv", "-", "written by `report`: metrics recomputed from the stored artifacts");
  manifest.write(dir / "manifest.txt");
  log << "fidelity " << m.fidelity << ", concurrence " << m.concurrence << '\n';
}

Matrix read_matrix_csv(const fs::path& real_part, const fs::path& imag_part) {
  auto read = [](const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw std::runtime_error("cannot read " + file.string());
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::vector<double> row;
      std::istringstream ls(line);
      std::string cell;
      while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
      rows.push_back(std::move(row));
    }
    RealMatrix m(rows.size(), rows.empty() ? 0 : rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != static_cast<std::size_t>(m.cols()))
        throw std::runtime_error("ragged matrix in " + file.string());
      for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
    }
    return m;
  };
  const RealMatrix re = read(real_part), im = read(imag_part);
  if (re.rows() != im.rows() || re.cols() != im.cols())
    throw std::runtime_error("real and imaginary parts differ in shape");
  Matrix out(re.rows(), re.cols());
  out.real() = re;
  out.imag() = im;
  return out;
}

void report_run(const fs::path& run_dir, std::ostream& out) {
  const RunConfig config = load_config(run_dir / "config.txt");
  std::vector<std::pair<std::string, std::string>> rows;
  auto add = [&](const std::string& k, double v) {
    std::ostringstream s;
    s << std::setprecision(10) << v;
    rows.emplace_back(k, s.str());
  };
  rows.emplace_back("experiment", std::string(experiment_name(config.experiment)));

  if (config.experiment != Experiment::VacuumReference) {
    const std::string fig = config.experiment == Experiment::TwoPhoton ? "3" : "2c";
    const HilbertSpec recon = HilbertSpec::reconstruction();
    const DensityMatrix rho(recon,
                            read_matrix_csv(run_dir / ("fig" + fig + "_rho_mle_real.csv"),
                                            run_dir / ("fig" + fig + "_rho_mle_imag.csv")),
                            1e-9, 1e-9);
    const Metrics m = report_metrics(rho, experiment_target(config.experiment));
    add("fidelity", m.fidelity);
    add("concurrence", m.concurrence);
    add("purity", m.purity);
    add("max_imaginary", m.max_imaginary);
    for (std::size_t n = 0; n < m.populations.size(); ++n) add("population_" + std::to_string(n), m.populations[n]);

    std::ifstream table(run_dir / "fig2b_moments.txt");
    if (!table) throw std::runtime_error("missing fig2b_moments.txt");
    const MomentSet moments = MomentSet::read_table(table);
    for (auto [n, k] : {std::pair{1, 1}, std::pair{2, 2}}) {
      const MomentValue v = moments.at(n, k, Axis::Identity);
      const std::string key = "moment_" + std::to_string(n) + "_" + std::to_string(k);
      add(key, v.value.real());
      add(key + "_std_error", v.std_error);
    }
  } else {
    std::ifstream in(run_dir / "vacuum_reference.bin", std::ios::binary);
    if (!in) throw std::runtime_error("missing vacuum_reference.bin");
    add("vacuum_delta_m", quadrature_std(Histogram3D::read_binary(in)));
  }

  auto csv = open_out(run_dir / "summary.csv");
  csv << "key,value\n";
  for (const auto& [k, v] : rows) {
    csv << k << ',' << v << '\n';
    out << std::left << std::setw(22) << k << v << '\n';
  }
}

}  // namespace qphoton
