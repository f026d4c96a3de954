#pragma once

#include <cmath>

#include "qphoton/types.hpp"

namespace qphoton {

/// Maximizes a 2 pi-periodic function: grid scan over [-pi, pi) followed by
/// golden-section refinement inside the bracketing grid cell pair.
template <typename F>
double maximize_phase(F&& f, int samples = 721, double tolerance = 1e-12) {
  const double step = 2.0 * kPi / (samples - 1);
  double best = -kPi;
  double best_value = f(best);
  for (int k = 1; k < samples; ++k) {
    const double phi = -kPi + k * step;
    const double v = f(phi);
    if (v > best_value) {
      best_value = v;
      best = phi;
    }
  }
  const double ratio = 0.5 * (std::sqrt(5.0) - 1.0);
  double lo = best - step, hi = best + step;
  double x1 = hi - ratio * (hi - lo), x2 = lo + ratio * (hi - lo);
  double f1 = f(x1), f2 = f(x2);
  while (hi - lo > tolerance) {
    if (f1 < f2) {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + ratio * (hi - lo);
      f2 = f(x2);
    } else {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - ratio * (hi - lo);
      f1 = f(x1);
    }
  }
  const double refined = 0.5 * (lo + hi);
  return f(refined) >= best_value ? refined : best;
}

}  // namespace qphoton
