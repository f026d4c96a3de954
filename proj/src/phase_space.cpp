#include "qphoton/phase_space.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace qphoton {

namespace {

double factorial(int n) { return std::tgamma(n + 1.0); }

double binomial(int n, int k) { return factorial(n) / (factorial(k) * factorial(n - k)); }

}  // namespace

// With t = N/(1+N) and mu = S/(1+N):
//   <n|Pi(S)|m> = exp(-|S|^2/(1+N)) / (pi (1+N)) / sqrt(n! m!)
//                 * sum_k k! C(n,k) C(m,k) t^k mu^(n-k) conj(mu)^(m-k)
Matrix povm_element(Complex s, double noise_photons, int cutoff) {
  if (noise_photons < 0.0) throw std::invalid_argument("negative noise photon number");
  const double scale = 1.0 + noise_photons;
  const double t = noise_photons / scale;
  const Complex mu = s / scale;
  const double pref = std::exp(-std::norm(s) / scale) / (kPi * scale);
  Matrix pi(cutoff + 1, cutoff + 1);
  for (int n = 0; n <= cutoff; ++n) {
    for (int m = 0; m <= cutoff; ++m) {
      Complex sum = 0.0;
      for (int k = 0; k <= std::min(n, m); ++k) {
        const double tk = k == 0 ? 1.0 : std::pow(t, k);
        sum += factorial(k) * binomial(n, k) * binomial(m, k) * tk * std::pow(mu, n - k) *
               std::pow(std::conj(mu), m - k);
      }
      pi(n, m) = pref * sum / std::sqrt(factorial(n) * factorial(m));
    }
  }
  return pi;
}

double husimi(Complex alpha, const Matrix& field_state) {
  const int cutoff = static_cast<int>(field_state.rows()) - 1;
  // <a|n> = exp(-|a|^2/2) conj(a)^n / sqrt(n!)
  Vector bra(cutoff + 1);
  for (int n = 0; n <= cutoff; ++n)
    bra(n) = std::exp(-0.5 * std::norm(alpha)) * std::pow(std::conj(alpha), n) /
             std::sqrt(factorial(n));
  return (bra.transpose() * field_state * bra.conjugate())(0, 0).real() / kPi;
}

PhaseSpacePolynomial::PhaseSpacePolynomial(const Matrix& op, double noise_photons)
    : degree_(static_cast<int>(op.rows()) - 1), noise_photons_(noise_photons) {
  if (op.rows() != op.cols()) throw std::invalid_argument("operator must be square");
  if (noise_photons < 0.0) throw std::invalid_argument("negative noise photon number");
  if (degree_ > 15) throw std::invalid_argument("phase-space polynomial degree above 15");
  const double scale = 1.0 + noise_photons;
  const double t = noise_photons / scale;
  Matrix coeff = Matrix::Zero(degree_ + 1, degree_ + 1);
  for (int n = 0; n <= degree_; ++n)
    for (int m = 0; m <= degree_; ++m)
      for (int k = 0; k <= std::min(n, m); ++k) {
        const int j = n - k, l = m - k;
        const double tk = k == 0 ? 1.0 : std::pow(t, k);
        coeff(j, l) += op(m, n) * factorial(k) * binomial(n, k) * binomial(m, k) * tk /
                       (std::sqrt(factorial(n) * factorial(m)) * std::pow(scale, j + l));
      }
  for (int k = 0; k <= degree_; ++k) {
    const double weight = k == 0 ? 1.0 : 2.0;
    offsets_.push_back(static_cast<int>(radial_.size()));
    for (int l = 0; l + k <= degree_; ++l) {
      radial_.push_back(weight * coeff(l + k, l).real());
      radial_.push_back(weight * coeff(l + k, l).imag());
    }
  }
}

double PhaseSpacePolynomial::polynomial(Complex s) const {
  const double x = s.real(), y = s.imag(), r2 = x * x + y * y;
  const double* c = radial_.data();
  double value = 0.0;
  double pr = 1.0, pi = 0.0;  // S^k
  for (int k = 0; k <= degree_; ++k) {
    const double* ck = c + offsets_[k];
    double a = 0.0, b = 0.0;
    for (int l = degree_ - k; l >= 0; --l) {
      a = a * r2 + ck[2 * l];
      b = b * r2 + ck[2 * l + 1];
    }
    value += a * pr - b * pi;
    const double nr = pr * x - pi * y;
    pi = pr * y + pi * x;
    pr = nr;
  }
  return value;
}

double PhaseSpacePolynomial::operator()(Complex s) const {
  const double scale = 1.0 + noise_photons_;
  return std::exp(-std::norm(s) / scale) / (kPi * scale) * polynomial(s);
}

}  // namespace qphoton
