#pragma once

#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "qphoton/hilbert.hpp"

namespace qphoton {

/// Physical rates and timings of a run, in SI units (rad/s, 1/s, s).
struct ExperimentParams {
  double g_coupling = 2.0 * kPi * 65e6;
  double kappa = 1.0 / 25e-9;
  double T1 = 1.0e-6;
  double T2_star = 220e-9;
  double eta = 0.15;
  double qubit_wait = 60e-9;
  double pi_pulse_len = 10e-9;
  double chi = 2.0 * kPi * 2.1e6;  // not used by the Gaussian readout model
  int prep_fock_cutoff = 6;
  double dt = 0.01e-9;

  /// Throws std::invalid_argument for non-positive rates or eta outside (0, 1].
  void validate() const;
  /// Human-readable notes when 1/g < 1/kappa < min(T1, T2*) does not hold.
  std::vector<std::string> hierarchy_warnings() const;
  /// 1/T_phi = 1/T2* - 1/(2 T1).
  double dephasing_rate() const;
};

enum class Transition { GE, GF, EF };

Transition parse_transition(std::string_view label);
std::string_view transition_name(Transition t);

struct CarrierPulse {
  Transition transition;
  double angle;  // radians
  Axis axis;     // X or Y
  double duration;
};

struct ResonantSwap {
  Transition transition;  // GE or EF
  double duration;
};

struct Idle {
  double duration;
};

using Segment = std::variant<CarrierPulse, ResonantSwap, Idle>;

struct PulseSequence {
  std::vector<Segment> segments;
};

/// Parses one segment record, e.g. "carrier g-e pi x 10e-9",
/// "swap g-e 1.923e-9" or "idle 20e-9". Angles accept plain radians or
/// multiples of pi ("pi", "-0.5pi").
Segment parse_segment(std::string_view record);
std::string format_segment(const Segment& segment);

/// Resonant Jaynes-Cummings coupling g (a^dag L + a L^dag) on the selected
/// transmon transition.
Operator jc_hamiltonian(const HilbertSpec& space, Transition transition, double g);

/// Rabi drive (Omega/2)(sigma+ e^{i phi} + h.c.) on one transition, sigma+
/// of weight 1; phi = 0 for x and pi/2 for y.
Operator carrier_hamiltonian(const HilbertSpec& space, Transition transition, Axis axis,
                             double omega);

/// Qubit T1 and pure dephasing; cavity decay is appended when `with_cavity`.
std::vector<Collapse> decoherence_ops(const HilbertSpec& space, const ExperimentParams& params,
                                      bool with_cavity);

/// Runs a sequence from |0,g>. Cavity decay acts only during idle segments;
/// `ideal` disables every collapse operator.
DensityMatrix run_sequence(const PulseSequence& sequence, const ExperimentParams& params,
                           const HilbertSpec& space, bool ideal = false);

/// Relabels the cavity as the propagating mode and truncates to the
/// reconstruction space (2 levels, photons 0..4). Throws std::runtime_error
/// when the f level holds more than 1e-3 population.
DensityMatrix emit_snapshot(const DensityMatrix& prepared);

/// Unitary on the reconstruction space that maps the chosen Bloch axis onto
/// +z (a +x or +y Bloch vector ends with sigma_z = +1).
Operator tomography_rotation(Axis basis, const HilbertSpec& space = HilbertSpec::reconstruction());

KetState bell_target();
KetState two_photon_target();

PulseSequence bell_sequence(const ExperimentParams& params);
PulseSequence two_photon_sequence(const ExperimentParams& params);

/// Field phase phi maximizing <target| e^{i phi n} rho e^{-i phi n} |target>.
double best_field_phase(const DensityMatrix& rho, const KetState& target);

/// Emission snapshot, qubit-only decoherence over `qubit_wait`, then the
/// local-oscillator phase that makes the target overlap real and maximal.
DensityMatrix finish_preparation(const DensityMatrix& prepared, const ExperimentParams& params,
                                 const KetState& target, bool ideal);

DensityMatrix prepare_bell(const ExperimentParams& params, bool ideal);
DensityMatrix prepare_two_photon(const ExperimentParams& params, bool ideal);

}  // namespace qphoton
