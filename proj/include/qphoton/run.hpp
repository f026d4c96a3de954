#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "qphoton/detection.hpp"
#include "qphoton/dynamics.hpp"
#include "qphoton/tomography.hpp"

namespace qphoton {

/// Raised for malformed or inconsistent configuration files.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Experiment { Bell, TwoPhoton, ReferenceG, ReferenceE, VacuumReference };

Experiment parse_experiment(std::string_view label);
std::string_view experiment_name(Experiment e);

enum class SamplerMode { Shots, Binned };

struct RunConfig {
  Experiment experiment = Experiment::Bell;
  bool ideal = false;
  ExperimentParams params;
  DetectorConfig detector;
  std::uint64_t shots_per_basis = 1'000'000;
  int batches = 10;
  std::uint64_t reference_shots = 0;          // 0: three times shots_per_basis
  std::uint64_t readout_reference_shots = 10'000'000;
  SamplerMode sampler = SamplerMode::Shots;
  int max_order = 8;
  std::uint64_t min_count = kDefaultMinCount;
  bool write_shot_log = false;
  std::filesystem::path output_dir = "qphoton_run";
  std::filesystem::path cache_dir = ".qphoton_cache";
  std::optional<PulseSequence> sequence;      // replaces the built-in sequence

  std::uint64_t vacuum_shots() const {
    return reference_shots ? reference_shots : 3 * shots_per_basis;
  }
  /// Throws ConfigError when an invariant fails.
  void validate() const;
};

/// Parses the flat "key = value" format; '#' starts a comment. Unknown or
/// repeated keys are errors. Relative paths resolve against `base_dir`.
RunConfig parse_config(std::istream& in, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& file);

/// Canonical text of every detector field, the input of the cache key.
std::string detector_fingerprint(const DetectorConfig& config, std::uint64_t shots, SamplerMode mode);
std::uint64_t fnv1a(std::string_view bytes);

/// Vacuum-input histograms for the given detector settings, split into
/// `batches` histograms from independent streams and stored under cache_dir
/// keyed by the fingerprint hash. A file whose checksum or fingerprint does
/// not match throws std::runtime_error.
std::vector<Histogram3D> vacuum_reference(const DetectorConfig& config, std::uint64_t shots,
                                          SamplerMode mode, int workers,
                                          const std::filesystem::path& cache_dir, int batches = 1,
                                          bool* from_cache = nullptr);
/// Reads and validates one cache file; throws std::runtime_error when it is
/// corrupt. The stored fingerprint is returned through `fingerprint`.
std::vector<Histogram3D> read_vacuum_cache(const std::filesystem::path& file,
                                           std::string* fingerprint = nullptr);
std::filesystem::path vacuum_cache_path(const DetectorConfig& config, std::uint64_t shots,
                                        SamplerMode mode, const std::filesystem::path& cache_dir,
                                        int batches = 1);

/// Worker count from QPHOTON_WORKERS, else the hardware concurrency.
int worker_count();

/// Full pipeline; writes every artifact into config.output_dir. `config_text`
/// is copied verbatim as the provenance record.
void run_experiment(const RunConfig& config, const std::string& config_text, int workers,
                    std::ostream& log);

/// Re-renders summary.csv (and prints it) from the artifacts of a run.
void report_run(const std::filesystem::path& run_dir, std::ostream& out);

/// Reads a matrix written by write_matrix_csv (real and imaginary files).
Matrix read_matrix_csv(const std::filesystem::path& real_part, const std::filesystem::path& imag_part);

KetState experiment_target(Experiment e);

}  // namespace qphoton
