#include "qphoton/moments.hpp"

#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace qphoton {

MomentSet::MomentSet(int max_order) : max_order_(max_order) {
  if (max_order < 0) throw std::invalid_argument("negative moment order");
}

void MomentSet::set(int n, int m, Axis axis, MomentValue v) {
  if (n < 0 || m < 0 || n + m > max_order_)
    throw std::out_of_range("moment order outside the set");
  entries_[{n, m, axis}] = v;
}

bool MomentSet::contains(int n, int m, Axis axis) const {
  return entries_.contains({n, m, axis});
}

const MomentValue& MomentSet::at(int n, int m, Axis axis) const {
  auto it = entries_.find({n, m, axis});
  if (it == entries_.end())
    throw std::out_of_range("moment (" + std::to_string(n) + "," + std::to_string(m) + "," +
                            std::string(axis_name(axis)) + ") missing");
  return it->second;
}

std::optional<MomentValue> MomentSet::find(int n, int m, Axis axis) const {
  auto it = entries_.find({n, m, axis});
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void MomentSet::take_axis(const MomentSet& other, Axis axis) {
  for (const auto& [k, v] : other.entries_)
    if (k.axis == axis && k.n + k.m <= max_order_) entries_[k] = v;
}

void MomentSet::fill_conjugates() {
  std::map<MomentKey, MomentValue> added;
  for (const auto& [k, v] : entries_) {
    MomentKey c{k.m, k.n, k.axis};
    if (!entries_.contains(c)) added[c] = {std::conj(v.value), v.std_error};
  }
  entries_.merge(added);
}

bool MomentSet::conjugates_consistent(double sigmas) const {
  for (const auto& [k, v] : entries_) {
    if (k.n <= k.m) continue;
    auto c = find(k.m, k.n, k.axis);
    if (!c) continue;
    const double tol = sigmas * std::hypot(v.std_error, c->std_error) + 1e-12;
    if (std::abs(v.value - std::conj(c->value)) > tol) return false;
  }
  return true;
}

void MomentSet::write_table(std::ostream& out) const {
  out << "# n m sigma real imag std_error\n";
  std::ostringstream line;
  for (const auto& [k, v] : entries_) {
    out << k.n << ' ' << k.m << ' ' << axis_name(k.axis) << ' ' << std::setprecision(17)
        << v.value.real() << ' ' << v.value.imag() << ' ' << v.std_error << '\n';
  }
}

MomentSet MomentSet::read_table(std::istream& in) {
  std::map<MomentKey, MomentValue> rows;
  int order = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    int n = 0, m = 0;
    std::string axis;
    double re = 0, im = 0, se = 0;
    if (!(ls >> n >> m >> axis >> re >> im >> se))
      throw std::runtime_error("malformed moment table line: " + line);
    rows[{n, m, parse_axis(axis)}] = {{re, im}, se};
    order = std::max(order, n + m);
  }
  MomentSet set(order);
  set.entries_ = std::move(rows);
  return set;
}

Matrix normal_ordered(int n, int m, int cutoff) {
  const Matrix a = fock_annihilation(cutoff);
  const Matrix ad = a.adjoint();
  Matrix out = Matrix::Identity(cutoff + 1, cutoff + 1);
  for (int k = 0; k < n; ++k) out = out * ad;
  for (int k = 0; k < m; ++k) out = out * a;
  return out;
}

MomentSet exact_moments(const DensityMatrix& rho, int max_order) {
  const HilbertSpec& s = rho.space();
  MomentSet set(max_order);
  for (int n = 0; n <= max_order; ++n)
    for (int m = 0; n + m <= max_order; ++m) {
      const Matrix field = normal_ordered(n, m, s.fock_cutoff());
      for (Axis axis : kAllAxes) {
        const Operator op(s, kron(pauli_factor(axis, s.transmon_levels()), field));
        set.set(n, m, axis, {expectation(rho, op), 0.0});
      }
    }
  return set;
}

MomentSet analytic_noise_moments(double noise_photons, int max_order) {
  MomentSet set(max_order);
  double value = 1.0;
  for (int n = 0; n <= max_order; ++n) {
    if (n > 0) value *= n * (1.0 + noise_photons);
    for (int m = 0; n + m <= max_order; ++m) set.set(n, m, Axis::Identity, {n == m ? value : 0.0, 0.0});
  }
  return set;
}

MomentSet convolve_moments(const MomentSet& signal, const MomentSet& noise, int max_order) {
  auto choose = [](int n, int k) {
    double c = 1.0;
    for (int i = 1; i <= k; ++i) c = c * (n - k + i) / i;
    return c;
  };
  MomentSet out(max_order);
  for (Axis axis : kAllAxes) {
    if (!signal.contains(0, 0, axis)) continue;
    for (int n = 0; n <= max_order; ++n)
      for (int m = 0; n + m <= max_order; ++m) {
        std::complex<long double> sum = 0.0;
        for (int j = 0; j <= n; ++j)
          for (int k = 0; k <= m; ++k) {
            const Complex a = signal.at(j, k, axis).value;
            const Complex h = noise.at(n - j, m - k, Axis::Identity).value;
            sum += static_cast<long double>(choose(n, j) * choose(m, k)) *
                   std::complex<long double>(a.real(), a.imag()) *
                   std::complex<long double>(h.real(), h.imag());
          }
        out.set(n, m, axis, {Complex(static_cast<double>(sum.real()), static_cast<double>(sum.imag())), 0.0});
      }
  }
  return out;
}

}  // namespace qphoton
