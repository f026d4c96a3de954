#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <thread>

#include "qphoton/run.hpp"

namespace qphoton {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out))
    throw ConfigError("key '" + key + "': '" + v + "' is not a number");
  return out;
}

// Integers may be written in floating notation ("1e6") as long as they are exact.
std::uint64_t to_count(const std::string& key, const std::string& v) {
  const double d = to_double(key, v);
  if (d < 0.0 || d != std::floor(d) || d > 9.0e18)
    throw ConfigError("key '" + key + "': '" + v + "' is not a non-negative integer");
  return static_cast<std::uint64_t>(d);
}

int to_int(const std::string& key, const std::string& v) {
  const std::uint64_t n = to_count(key, v);
  if (n > 1'000'000'000) throw ConfigError("key '" + key + "': value too large");
  return static_cast<int>(n);
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("key '" + key + "': '" + v + "' is not a boolean");
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value,
                                  const std::filesystem::path& base)>;

template <class T>
Setter real_field(T RunConfig::*group, double T::*field) {
  return [group, field](RunConfig& c, const std::string& k, const std::string& v, const auto&) {
    (c.*group).*field = to_double(k, v);
  };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    t["experiment"] = [](RunConfig& c, const std::string& k, const std::string& v, const auto&) {
      try {
        c.experiment = parse_experiment(v);
      } catch (const std::invalid_argument&) {
        throw ConfigError("key '" + k + "': unknown experiment '" + v + "'");
      }
    };
    t["ideal"] = [](RunConfig& c, const std::string& k, const std::string& v, const auto&) {
      c.ideal = to_bool(k, v);
    };
    t["g_coupling"] = real_field(&RunConfig::params, &ExperimentParams::g_coupling);
    t["kappa"] = real_field(&RunConfig::params, &ExperimentParams::kappa);
    t["T1"] = real_field(&RunConfig::params, &ExperimentParams::T1);
    t["T2_star"] = real_field(&RunConfig::params, &ExperimentParams::T2_star);
    t["qubit_wait"] = real_field(&RunConfig::params, &ExperimentParams::qubit_wait);
    t["pi_pulse_len"] = real_field(&RunConfig::params, &ExperimentParams::pi_pulse_len);
    t["chi"] = real_field(&RunConfig::params, &ExperimentParams::chi);
    t["dt"] = real_field(&RunConfig::params, &ExperimentParams::dt);
    t["prep_fock_cutoff"] = [](RunConfig& c, const std::string& k, const std::string& v, const auto&) {
      c.params.prep_fock_cutoff = to_int(k, v);
    };
    // One efficiency drives both the preparation record and the detector.
    t["eta"] = [](RunConfig& c, const std::string& k, const std::string& v, const auto&) {
      c.params.eta = c.detector.eta = to_double(k, v);
    };
    t["readout_mu_g"] = real_field(&RunConfig::detector, &DetectorConfig::readout_mu_g);
    t["readout_mu_e"] = real_field(&RunConfig::detector, &DetectorConfig::readout_mu_e);
    t["readout_sigma"] = real_field(&RunConfig::detector, &DetectorConfig::readout_sigma);
    t["readout_decay_mix"] = real_field(&RunConfig::detector, &DetectorConfig::readout_decay_mix);
    t["hist_range_xp"] = real_field(&RunConfig::detector, &DetectorConfig::hist_range_xp);
    t["hist_range_q"] = [](RunConfig& c, const std::string& k, const std::string& v, const auto&) {
      c.detector.hist_range_q = to_double(k, v);
    };
    t["hist_bins_xp"] = [](RunConfig& c, const std::string& k, const std::string& v, const auto&) {
      c.detector.hist_bins_xp = to_int(k, v);
    };
    t["hist_bins_q"] = [](RunConfig& c, const std::string& k, const std::string& v, const auto&) {
      c.detector.hist_bins_q = to_int(k, v);
    };
    t["seed"] = [](RunConfig& c, const std::string& k, const std::string& v, const auto&) {
      std::uint64_t s = 0;
      const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), s);
      if (ec != std::errc() || ptr != v.data() + v.size())
        throw ConfigError("key '" + k + "': '" + v + "' is not a 64-bit unsigned integer");
      c.detector.seed = s;
    };
    t["shots_per_basis"] = [](RunConfig& c, const std::string& k, const std::string& v, const auto&) {
      c.shots_per_basis = to_count(k, v);
    };
    t["batches"] = [](RunConfig& c, const std::string& k, const std::string& v, const auto&) {
      c.batches = to_int(k, v);
    };
    t["reference_shots"] = [](RunConfig& c, const std::string& k, const std::string& v, const auto&) {
      c.reference_shots = to_count(k, v);
    };
    t["readout_reference_shots"] = [](RunConfig& c, const std::string& k, const std::string& v,
                                      const auto&) { c.readout_reference_shots = to_count(k, v); };
    t["sampler"] = [](RunConfig& c, const std::string& k, const std::string& v, const auto&) {
      if (v == "shots")
        c.sampler = SamplerMode::Shots;
      else if (v == "binned")
        c.sampler = SamplerMode::Binned;
      else
        throw ConfigError("key '" + k + "': expected shots or binned, got '" + v + "'");
    };
    t["max_order"] = [](RunConfig& c, const std::string& k, const std::string& v, const auto&) {
      c.max_order = to_int(k, v);
    };
    t["min_count"] = [](RunConfig& c, const std::string& k, const std::string& v, const auto&) {
      c.min_count = to_count(k, v);
    };
    t["write_shot_log"] = [](RunConfig& c, const std::string& k, const std::string& v, const auto&) {
      c.write_shot_log = to_bool(k, v);
    };
    t["output_dir"] = [](RunConfig& c, const std::string&, const std::string& v,
                         const std::filesystem::path& base) { c.output_dir = base / v; };
    t["cache_dir"] = [](RunConfig& c, const std::string&, const std::string& v,
                        const std::filesystem::path& base) { c.cache_dir = base / v; };
    return t;
  }();
  return table;
}

}  // namespace

Experiment parse_experiment(std::string_view label) {
  if (label == "bell") return Experiment::Bell;
  if (label == "two_photon") return Experiment::TwoPhoton;
  if (label == "reference_g") return Experiment::ReferenceG;
  if (label == "reference_e") return Experiment::ReferenceE;
  if (label == "vacuum_reference") return Experiment::VacuumReference;
  throw std::invalid_argument("unknown experiment: " + std::string(label));
}

std::string_view experiment_name(Experiment e) {
  switch (e) {
    case Experiment::Bell: return "bell";
    case Experiment::TwoPhoton: return "two_photon";
    case Experiment::ReferenceG: return "reference_g";
    case Experiment::ReferenceE: return "reference_e";
    case Experiment::VacuumReference: return "vacuum_reference";
  }
  return "?";
}

void RunConfig::validate() const {
  try {
    params.validate();
    detector.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (batches < 1) throw ConfigError("batches must be >= 1");
  if (shots_per_basis < static_cast<std::uint64_t>(batches) * 100)
    throw ConfigError("shots_per_basis must be at least 100 per batch");
  if (max_order < 0 || max_order > 8) throw ConfigError("max_order must lie in [0, 8]");
  if (readout_reference_shots < 1) throw ConfigError("readout_reference_shots must be >= 1");
  if (write_shot_log && sampler != SamplerMode::Shots)
    throw ConfigError("write_shot_log needs sampler = shots");
  if (sequence && experiment != Experiment::Bell && experiment != Experiment::TwoPhoton)
    throw ConfigError("sequence records apply only to bell and two_photon");
}

RunConfig parse_config(std::istream& in, const std::filesystem::path& base_dir) {
  RunConfig config;
  std::map<std::string, std::string> seen;
  std::map<int, Segment> segments;
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw ConfigError("line " + std::to_string(line_no) + ": empty key or value");
    if (!seen.emplace(key, value).second) throw ConfigError("repeated key '" + key + "'");

    if (key.starts_with("sequence.")) {
      const std::string index = key.substr(9);
      int n = 0;
      const auto [ptr, ec] = std::from_chars(index.data(), index.data() + index.size(), n);
      if (ec != std::errc() || ptr != index.data() + index.size() || n < 0)
        throw ConfigError("bad sequence index in '" + key + "'");
      try {
        segments.emplace(n, parse_segment(value));
      } catch (const std::invalid_argument& e) {
        throw ConfigError("key '" + key + "': " + e.what());
      }
      continue;
    }
    const auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError("unknown key '" + key + "'");
    it->second(config, key, value, base_dir);
  }
  if (!segments.empty()) {
    PulseSequence seq;
    for (auto& [n, s] : segments) seq.segments.push_back(s);
    config.sequence = seq;
  }
  if (!seen.contains("output_dir")) config.output_dir = base_dir / config.output_dir;
  if (!seen.contains("cache_dir")) config.cache_dir = base_dir / config.cache_dir;
  config.validate();
  return config;
}

RunConfig load_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config file " + file.string());
  return parse_config(in, file.parent_path());
}

std::string detector_fingerprint(const DetectorConfig& c, std::uint64_t shots, SamplerMode mode) {
  std::ostringstream s;
  s << std::setprecision(17) << "eta=" << c.eta << ";mu_g=" << c.readout_mu_g
    << ";mu_e=" << c.readout_mu_e << ";sigma=" << c.readout_sigma
    << ";decay_mix=" << c.readout_decay_mix << ";range_xp=" << c.hist_range_xp
    << ";bins_xp=" << c.hist_bins_xp << ";bins_q=" << c.hist_bins_q << ";q_low=" << c.q_low()
    << ";q_high=" << c.q_high() << ";seed=" << c.seed << ";shots=" << shots
    << ";sampler=" << (mode == SamplerMode::Shots ? "shots" : "binned");
  return s.str();
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

int worker_count() {
  if (const char* env = std::getenv("QPHOTON_WORKERS"); env && *env) {
    const std::string v = env;
    int n = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), n);
    if (ec != std::errc() || ptr != v.data() + v.size() || n < 1)
      throw ConfigError("QPHOTON_WORKERS must be a positive integer");
    return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace qphoton
