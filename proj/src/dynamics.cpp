#include "qphoton/dynamics.hpp"

#include <charconv>
#include <sstream>
#include <stdexcept>

#include "qphoton/phase_scan.hpp"

namespace qphoton {

void ExperimentParams::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0)) throw std::invalid_argument(std::string(name) + " must be positive");
  };
  positive(g_coupling, "g_coupling");
  positive(kappa, "kappa");
  positive(T1, "T1");
  positive(T2_star, "T2_star");
  positive(pi_pulse_len, "pi_pulse_len");
  positive(dt, "dt");
  if (qubit_wait < 0.0) throw std::invalid_argument("qubit_wait must be non-negative");
  if (!(eta > 0.0 && eta <= 1.0)) throw std::invalid_argument("eta must lie in (0, 1]");
  if (T2_star > 2.0 * T1) throw std::invalid_argument("T2_star cannot exceed 2 T1");
  if (prep_fock_cutoff < 4) throw std::invalid_argument("prep_fock_cutoff must be >= 4");
}

std::vector<std::string> ExperimentParams::hierarchy_warnings() const {
  std::vector<std::string> notes;
  if (!(1.0 / g_coupling < 1.0 / kappa))
    notes.emplace_back("1/g is not shorter than 1/kappa: preparation is not coherent");
  if (!(1.0 / kappa < std::min(T1, T2_star)))
    notes.emplace_back("1/kappa is not shorter than min(T1, T2*): qubit decays during emission");
  return notes;
}

double ExperimentParams::dephasing_rate() const { return 1.0 / T2_star - 0.5 / T1; }

Transition parse_transition(std::string_view label) {
  if (label == "g-e" || label == "ge") return Transition::GE;
  if (label == "g-f" || label == "gf") return Transition::GF;
  if (label == "e-f" || label == "ef") return Transition::EF;
  throw std::invalid_argument("unknown transmon transition '" + std::string(label) + "'");
}

std::string_view transition_name(Transition t) {
  switch (t) {
    case Transition::GE: return "g-e";
    case Transition::GF: return "g-f";
    case Transition::EF: return "e-f";
  }
  return "?";
}

namespace {

double parse_number(std::string_view token) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
  if (ec != std::errc() || ptr != token.data() + token.size())
    throw std::invalid_argument("malformed number '" + std::string(token) + "'");
  return v;
}

double parse_angle(std::string_view token) {
  if (token.size() >= 2 && token.substr(token.size() - 2) == "pi") {
    auto factor = token.substr(0, token.size() - 2);
    if (factor.empty()) return kPi;
    if (factor == "-") return -kPi;
    return parse_number(factor) * kPi;
  }
  return parse_number(token);
}

std::pair<int, int> transition_levels(Transition t) {
  switch (t) {
    case Transition::GE: return {0, 1};
    case Transition::GF: return {0, 2};
    case Transition::EF: return {1, 2};
  }
  return {0, 1};
}

void require_levels(const HilbertSpec& space, Transition t) {
  if (t != Transition::GE && space.transmon_levels() < 3)
    throw std::invalid_argument("transition " + std::string(transition_name(t)) +
                                " needs three transmon levels");
}

}  // namespace

Segment parse_segment(std::string_view record) {
  std::istringstream in{std::string(record)};
  std::vector<std::string> tok;
  for (std::string t; in >> t;) tok.push_back(t);
  if (tok.empty()) throw std::invalid_argument("empty pulse segment");
  if (tok[0] == "carrier" && tok.size() == 5) {
    const Axis axis = parse_axis(tok[3]);
    if (axis != Axis::X && axis != Axis::Y)
      throw std::invalid_argument("carrier pulse axis must be x or y");
    return CarrierPulse{parse_transition(tok[1]), parse_angle(tok[2]), axis, parse_number(tok[4])};
  }
  if (tok[0] == "swap" && tok.size() == 3) {
    const Transition t = parse_transition(tok[1]);
    if (t == Transition::GF) throw std::invalid_argument("no resonant swap on the g-f transition");
    return ResonantSwap{t, parse_number(tok[2])};
  }
  if (tok[0] == "idle" && tok.size() == 2) return Idle{parse_number(tok[1])};
  throw std::invalid_argument("malformed pulse segment '" + std::string(record) + "'");
}

std::string format_segment(const Segment& segment) {
  std::ostringstream out;
  out.precision(17);
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, CarrierPulse>)
          out << "carrier " << transition_name(s.transition) << ' ' << s.angle << ' '
              << axis_name(s.axis) << ' ' << s.duration;
        else if constexpr (std::is_same_v<T, ResonantSwap>)
          out << "swap " << transition_name(s.transition) << ' ' << s.duration;
        else
          out << "idle " << s.duration;
      },
      segment);
  return out.str();
}

Operator jc_hamiltonian(const HilbertSpec& space, Transition transition, double g) {
  if (transition == Transition::GF) throw std::invalid_argument("no JC coupling on g-f");
  require_levels(space, transition);
  Matrix l = Matrix::Zero(space.transmon_levels(), space.transmon_levels());
  if (transition == Transition::GE)
    l(0, 1) = 1.0;
  else
    l(1, 2) = std::sqrt(2.0);
  const Matrix a = fock_annihilation(space.fock_cutoff());
  const Matrix coupling = kron(l, a.adjoint());
  return {space, g * (coupling + coupling.adjoint())};
}

Operator carrier_hamiltonian(const HilbertSpec& space, Transition transition, Axis axis,
                             double omega) {
  require_levels(space, transition);
  const auto [lower, upper] = transition_levels(transition);
  const double phi = axis == Axis::Y ? 0.5 * kPi : 0.0;
  Matrix raise = Matrix::Zero(space.transmon_levels(), space.transmon_levels());
  raise(upper, lower) = std::polar(1.0, phi);
  const Matrix drive = kron(raise, Matrix::Identity(space.fock_dim(), space.fock_dim()));
  return {space, 0.5 * omega * (drive + drive.adjoint())};
}

std::vector<Collapse> decoherence_ops(const HilbertSpec& space, const ExperimentParams& params,
                                      bool with_cavity) {
  std::vector<Collapse> ops;
  ops.push_back({transmon_lowering(space), 1.0 / params.T1});
  ops.push_back({Complex(1.0 / std::sqrt(2.0)) * pauli(space, Axis::Z), params.dephasing_rate()});
  if (with_cavity) ops.push_back({annihilation(space), params.kappa});
  return ops;
}

DensityMatrix run_sequence(const PulseSequence& sequence, const ExperimentParams& params,
                           const HilbertSpec& space, bool ideal) {
  params.validate();
  DensityMatrix rho = DensityMatrix::pure(KetState::basis(space, 0, 0));
  const std::vector<Collapse> none;
  const auto qubit_only = ideal ? none : decoherence_ops(space, params, false);
  const auto with_cavity = ideal ? none : decoherence_ops(space, params, true);
  const Operator zero(space, Matrix::Zero(space.dim(), space.dim()));

  for (const auto& segment : sequence.segments) {
    std::visit(
        [&](const auto& s) {
          using T = std::decay_t<decltype(s)>;
          if (s.duration < 0.0) throw std::invalid_argument("negative segment duration");
          if (s.duration == 0.0) return;
          if constexpr (std::is_same_v<T, CarrierPulse>) {
            const Operator h =
                carrier_hamiltonian(space, s.transition, s.axis, s.angle / s.duration);
            rho = lindblad_evolve(rho, h, qubit_only, s.duration, params.dt);
          } else if constexpr (std::is_same_v<T, ResonantSwap>) {
            const Operator h = jc_hamiltonian(space, s.transition, params.g_coupling);
            rho = lindblad_evolve(rho, h, qubit_only, s.duration, params.dt);
          } else {
            rho = lindblad_evolve(rho, zero, with_cavity, s.duration, params.dt);
          }
        },
        segment);
  }
  return rho;
}

DensityMatrix emit_snapshot(const DensityMatrix& prepared) {
  const HilbertSpec& in = prepared.space();
  const HilbertSpec out = HilbertSpec::reconstruction();
  if (in.transmon_levels() == 3) {
    const double f_population = prepared.transmon_block(2, 2).trace().real();
    if (f_population > 1e-3)
      throw std::runtime_error("f-level population " + std::to_string(f_population) +
                               " left after preparation");
  }
  if (in.fock_cutoff() < out.fock_cutoff())
    throw std::invalid_argument("preparation space has fewer photon levels than reconstruction");
  Matrix m(out.dim(), out.dim());
  for (int li = 0; li < 2; ++li)
    for (int lj = 0; lj < 2; ++lj)
      m.block(li * out.fock_dim(), lj * out.fock_dim(), out.fock_dim(), out.fock_dim()) =
          prepared.transmon_block(li, lj).topLeftCorner(out.fock_dim(), out.fock_dim());
  return {out, hermitize_normalize(m), kStateTolerance, kIntegratorPositivityTolerance};
}

Operator tomography_rotation(Axis basis, const HilbertSpec& space) {
  const int levels = space.transmon_levels();
  Matrix r = Matrix::Identity(levels, levels);
  const Matrix id2 = Matrix::Identity(2, 2);
  const double s = 1.0 / std::sqrt(2.0);
  switch (basis) {
    case Axis::X:  // exp(+i pi sigma_y / 4)
      r.topLeftCorner(2, 2) = s * (id2 + kI * pauli_factor(Axis::Y, 2));
      break;
    case Axis::Y:  // exp(-i pi sigma_x / 4)
      r.topLeftCorner(2, 2) = s * (id2 - kI * pauli_factor(Axis::X, 2));
      break;
    case Axis::Z:
      break;
    case Axis::Identity:
      throw std::invalid_argument("tomography basis must be x, y or z");
  }
  return {space, kron(r, Matrix::Identity(space.fock_dim(), space.fock_dim()))};
}

KetState bell_target() {
  const HilbertSpec s = HilbertSpec::reconstruction();
  Vector v = Vector::Zero(s.dim());
  v(s.index(1, 0)) = 1.0;
  v(s.index(0, 1)) = 1.0;
  return KetState::normalized(s, v);
}

KetState two_photon_target() {
  const HilbertSpec s = HilbertSpec::reconstruction();
  Vector v = Vector::Zero(s.dim());
  v(s.index(0, 1)) = 0.5;
  v(s.index(0, 2)) = 0.5;
  v(s.index(1, 1)) = 0.5;
  v(s.index(1, 2)) = -0.5;
  return {s, v};
}

PulseSequence bell_sequence(const ExperimentParams& params) {
  const double g = params.g_coupling;
  return {{CarrierPulse{Transition::GE, kPi, Axis::X, params.pi_pulse_len},
           ResonantSwap{Transition::GE, kPi / (4.0 * g)}}};
}

PulseSequence two_photon_sequence(const ExperimentParams& params) {
  const double g = params.g_coupling;
  const double root2 = std::sqrt(2.0);
  // |0g> -> |0f> -> |1e> -> |1e> + |2g> ; the final pulse about -y puts the
  // qubit phases into the target convention.
  return {{CarrierPulse{Transition::GF, kPi, Axis::X, params.pi_pulse_len},
           ResonantSwap{Transition::EF, kPi / (2.0 * root2 * g)},
           ResonantSwap{Transition::GE, kPi / (4.0 * root2 * g)},
           CarrierPulse{Transition::GE, -0.5 * kPi, Axis::Y, params.pi_pulse_len}}};
}

double best_field_phase(const DensityMatrix& rho, const KetState& target) {
  const Vector& psi = target.amplitudes();
  const HilbertSpec& s = rho.space();
  return maximize_phase([&](double phi) {
    Vector rotated = psi;
    // <psi| U rho U^dag |psi> = <U^dag psi| rho |U^dag psi>
    for (int l = 0; l < s.transmon_levels(); ++l)
      for (int n = 0; n < s.fock_dim(); ++n) rotated(s.index(l, n)) *= std::polar(1.0, -phi * n);
    return rotated.dot(rho.matrix() * rotated).real();
  });
}

DensityMatrix finish_preparation(const DensityMatrix& prepared, const ExperimentParams& params,
                                 const KetState& target, bool ideal) {
  DensityMatrix rho = emit_snapshot(prepared);
  if (!ideal && params.qubit_wait > 0.0) {
    const Operator zero(rho.space(), Matrix::Zero(rho.space().dim(), rho.space().dim()));
    rho = lindblad_evolve(rho, zero, decoherence_ops(rho.space(), params, false),
                          params.qubit_wait, params.dt);
  }
  const double phi = best_field_phase(rho, target);
  return apply_unitary(rho, field_phase(rho.space(), phi));
}

DensityMatrix prepare_bell(const ExperimentParams& params, bool ideal) {
  const HilbertSpec prep(2, params.prep_fock_cutoff);
  return finish_preparation(run_sequence(bell_sequence(params), params, prep, ideal), params,
                            bell_target(), ideal);
}

DensityMatrix prepare_two_photon(const ExperimentParams& params, bool ideal) {
  const HilbertSpec prep(3, params.prep_fock_cutoff);
  return finish_preparation(run_sequence(two_photon_sequence(params), params, prep, ideal),
                            params, two_photon_target(), ideal);
}

}  // namespace qphoton
