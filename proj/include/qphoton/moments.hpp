#pragma once

#include <compare>
#include <iosfwd>
#include <map>
#include <optional>

#include "qphoton/hilbert.hpp"

namespace qphoton {

/// Index of <(a^dag)^n a^m sigma_axis>.
struct MomentKey {
  int n = 0;
  int m = 0;
  Axis axis = Axis::Identity;

  auto operator<=>(const MomentKey&) const = default;
};

struct MomentValue {
  Complex value;
  double std_error = 0.0;
};

inline constexpr std::array<Axis, 4> kAllAxes{Axis::Identity, Axis::X, Axis::Y, Axis::Z};

class MomentSet {
 public:
  explicit MomentSet(int max_order);

  int max_order() const { return max_order_; }
  void set(int n, int m, Axis axis, MomentValue v);
  bool contains(int n, int m, Axis axis) const;
  /// Throws std::out_of_range when missing.
  const MomentValue& at(int n, int m, Axis axis) const;
  std::optional<MomentValue> find(int n, int m, Axis axis) const;
  const std::map<MomentKey, MomentValue>& entries() const { return entries_; }

  /// Copies every entry of `other` with the given axis into this set.
  void take_axis(const MomentSet& other, Axis axis);
  /// Fills (m, n) from (n, m) by complex conjugation where (m, n) is absent.
  void fill_conjugates();
  /// True when every stored conjugate pair agrees within `sigmas` combined
  /// standard errors (plus 1e-12 absolute slack).
  bool conjugates_consistent(double sigmas = 3.0) const;

  /// Text table "n m sigma real imag std_error", one moment per line.
  void write_table(std::ostream& out) const;
  static MomentSet read_table(std::istream& in);

 private:
  int max_order_;
  std::map<MomentKey, MomentValue> entries_;
};

/// (a^dag)^n a^m on the Fock factor of `cutoff`, as products of truncated
/// ladder matrices.
Matrix normal_ordered(int n, int m, int cutoff);

/// Exact tr(rho (a^dag)^n a^m sigma_i) for every n + m <= max_order and all
/// four sigma indices, with zero standard errors.
MomentSet exact_moments(const DensityMatrix& rho, int max_order);

/// Moments <h^p (h^dag)^q> = delta_pq p! (1 + N)^p of the total detection
/// noise (vacuum half-quantum plus N added photons), as identity entries.
MomentSet analytic_noise_moments(double noise_photons, int max_order);

/// Forward model of the detector on moments: for S = a + h^dag,
///   <(S^dag)^n S^m s> = sum_{j<=n, k<=m} C(n,j) C(m,k) <(a^dag)^j a^k s> <h^(n-j) (h^dag)^(m-k)>.
/// Standard errors are not propagated.
MomentSet convolve_moments(const MomentSet& signal, const MomentSet& noise, int max_order);

}  // namespace qphoton
