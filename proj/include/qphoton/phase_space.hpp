#pragma once

#include <vector>

#include "qphoton/types.hpp"

namespace qphoton {

/// Fock-basis matrix of the noisy heterodyne POVM element
///   Pi(S) = (1/pi) Int d^2a  exp(-|S-a|^2/N)/(pi N) |a><a|,
/// a displaced thermal state with N added noise photons, divided by pi.
/// N = 0 gives the coherent-state projector |S><S|/pi.
Matrix povm_element(Complex s, double noise_photons, int cutoff);

/// Husimi Q function <a|rho_f|a>/pi of a Fock-basis field state.
double husimi(Complex alpha, const Matrix& field_state);

/// S -> tr(Pi_N(S) A) for a fixed Hermitian Fock-basis operator A, stored
/// as the polynomial sum_jl c_jl S^j conj(S)^l times the Gaussian factor
/// exp(-|S|^2/(1+N)) / (pi (1+N)). Evaluating the polynomial part alone is
/// what the sampler's inner loop needs.
class PhaseSpacePolynomial {
 public:
  PhaseSpacePolynomial(const Matrix& op, double noise_photons);

  /// Polynomial part only.
  double polynomial(Complex s) const;
  /// Full value of tr(Pi_N(S) A).
  double operator()(Complex s) const;
  double gaussian_scale() const { return 1.0 + noise_photons_; }
  int degree() const { return degree_; }

 private:
  int degree_;
  double noise_photons_;
  // Since c_lj = conj(c_jl) the value is real:
  //   sum_k [A_k(|S|^2) Re S^k - B_k(|S|^2) Im S^k] * (k > 0 ? 2 : 1)
  // with A_k + i B_k = sum_l c_{l+k,l} |S|^2l. radial_ holds interleaved
  // (A_k, B_k) coefficients, lowest power first, starting at offsets_[k].
  std::vector<double> radial_;
  std::vector<int> offsets_;
};

}  // namespace qphoton
