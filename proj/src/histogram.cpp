#include <array>
#include <cstring>
#include <istream>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "qphoton/detection.hpp"

namespace qphoton {

namespace {

constexpr char kHistogramMagic[8] = {'Q', 'P', 'H', 'I', 'S', 'T', '0', '1'};

// Explicit little-endian encoding, independent of the host byte order.
void put_u64(std::ostream& out, std::uint64_t v) {
  std::array<char, 8> b{};
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b.data(), 8);
}

void put_u32(std::ostream& out, std::uint32_t v) {
  std::array<char, 4> b{};
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b.data(), 4);
}

void put_f64(std::ostream& out, double v) {
  std::uint64_t bits = 0;
  std::memcpy(&bits, &v, sizeof bits);
  put_u64(out, bits);
}

std::uint64_t get_u64(std::istream& in) {
  std::array<unsigned char, 8> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 8))
    throw std::runtime_error("truncated binary stream");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

std::uint32_t get_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4))
    throw std::runtime_error("truncated binary stream");
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

double get_f64(std::istream& in) {
  const std::uint64_t bits = get_u64(in);
  double v = 0.0;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

char basis_tag(Axis basis) {
  switch (basis) {
    case Axis::X: return 'x';
    case Axis::Y: return 'y';
    case Axis::Z: return 'z';
    case Axis::Identity: return 'i';
  }
  return '?';
}

Axis basis_from_tag(char tag) { return parse_axis(std::string_view(&tag, 1)); }

void write_edges(std::ostream& out, const BinAxis& axis) {
  for (int i = 0; i <= axis.bins; ++i) put_f64(out, axis.edge(i));
}

BinAxis read_edges(std::istream& in, std::uint32_t bins) {
  if (bins < 1) throw std::runtime_error("histogram axis without bins");
  std::vector<double> edges(bins + 1);
  for (auto& e : edges) e = get_f64(in);
  BinAxis axis{edges.front(), edges.back(), static_cast<int>(bins)};
  for (std::uint32_t i = 0; i <= bins; ++i)
    if (std::abs(edges[i] - axis.edge(static_cast<int>(i))) > 1e-9 * (1.0 + std::abs(edges[i])))
      throw std::runtime_error("histogram edges are not uniform");
  return axis;
}

}  // namespace

Histogram3D::Histogram3D(Axis basis, BinAxis xp, BinAxis q)
    : basis_(basis), x_(xp), p_(xp), q_(q) {
  if (x_.bins < 2 || q_.bins < 2) throw std::invalid_argument("histograms need >= 2 bins per axis");
  if (!(x_.hi > x_.lo) || !(q_.hi > q_.lo)) throw std::invalid_argument("empty histogram range");
  counts_.assign(static_cast<std::size_t>(x_.bins) * p_.bins * q_.bins, 0);
}

Histogram3D Histogram3D::for_config(Axis basis, const DetectorConfig& config) {
  config.validate();
  return {basis, BinAxis{-config.hist_range_xp, config.hist_range_xp, config.hist_bins_xp},
          BinAxis{config.q_low(), config.q_high(), config.hist_bins_q}};
}

Histogram3D Histogram3D::from_counts(const Histogram3D& layout, std::vector<std::uint64_t> counts,
                                     std::uint64_t overflow) {
  if (counts.size() != layout.counts_.size()) throw std::invalid_argument("cell count mismatch");
  Histogram3D h(layout.basis_, layout.x_, layout.q_);
  h.counts_ = std::move(counts);
  h.overflow_ = overflow;
  return h;
}

std::uint64_t Histogram3D::in_range() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

void Histogram3D::add(double x, double p, double q) {
  const int ix = x_.locate(x), ip = p_.locate(p), iq = q_.locate(q);
  if (ix < 0 || ip < 0 || iq < 0) {
    ++overflow_;
    return;
  }
  ++counts_[flat(ix, ip, iq)];
}

void Histogram3D::accumulate(std::span<const Shot> shots) {
  for (const Shot& s : shots)
    if (s.basis != basis_) throw std::invalid_argument("shot basis does not match histogram");
  // Hoisted bin geometry; identical arithmetic to BinAxis::locate.
  const double xlo = x_.lo, xhi = x_.hi, xs = x_.bins / (x_.hi - x_.lo);
  const double qlo = q_.lo, qhi = q_.hi, qs = q_.bins / (q_.hi - q_.lo);
  const int nx = x_.bins, nq = q_.bins;
  for (const Shot& s : shots) {
    if (!(s.X >= xlo && s.X < xhi && s.P >= xlo && s.P < xhi && s.Q >= qlo && s.Q < qhi)) {
      ++overflow_;
      continue;
    }
    const int ix = std::min(static_cast<int>((s.X - xlo) * xs), nx - 1);
    const int ip = std::min(static_cast<int>((s.P - xlo) * xs), nx - 1);
    const int iq = std::min(static_cast<int>((s.Q - qlo) * qs), nq - 1);
    ++counts_[(static_cast<std::size_t>(ix) * nx + ip) * nq + iq];
  }
}

bool Histogram3D::same_edges(const Histogram3D& other) const {
  return x_ == other.x_ && p_ == other.p_ && q_ == other.q_;
}

void Histogram3D::merge(const Histogram3D& other) {
  if (basis_ != other.basis_) throw std::invalid_argument("cannot merge histograms of different bases");
  if (!same_edges(other)) throw std::invalid_argument("cannot merge histograms with different edges");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  overflow_ += other.overflow_;
}

// Layout: magic[8], basis u8, bins_x u32, bins_p u32, bins_q u32,
// overflow u64, edges x/p/q as f64, counts as u64 with Q fastest.
void Histogram3D::write_binary(std::ostream& out) const {
  out.write(kHistogramMagic, 8);
  out.put(basis_tag(basis_));
  put_u32(out, static_cast<std::uint32_t>(x_.bins));
  put_u32(out, static_cast<std::uint32_t>(p_.bins));
  put_u32(out, static_cast<std::uint32_t>(q_.bins));
  put_u64(out, overflow_);
  write_edges(out, x_);
  write_edges(out, p_);
  write_edges(out, q_);
  for (std::uint64_t c : counts_) put_u64(out, c);
}

Histogram3D Histogram3D::read_binary(std::istream& in) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kHistogramMagic, 8) != 0)
    throw std::runtime_error("not a histogram file");
  char tag = 0;
  if (!in.get(tag)) throw std::runtime_error("truncated binary stream");
  const Axis basis = basis_from_tag(tag);
  const std::uint32_t bx = get_u32(in), bp = get_u32(in), bq = get_u32(in);
  const std::uint64_t overflow = get_u64(in);
  const BinAxis x = read_edges(in, bx), p = read_edges(in, bp), q = read_edges(in, bq);
  if (!(x == p)) throw std::runtime_error("X and P axes differ");
  Histogram3D h(basis, x, q);
  h.overflow_ = overflow;
  for (auto& c : h.counts_) c = get_u64(in);
  return h;
}

void Histogram3D::write_csv(std::ostream& out) const {
  out << "ix,ip,iq,x,p,q,count\n";
  for (int ix = 0; ix < x_.bins; ++ix)
    for (int ip = 0; ip < p_.bins; ++ip)
      for (int iq = 0; iq < q_.bins; ++iq) {
        const auto c = count(ix, ip, iq);
        if (c == 0) continue;
        out << ix << ',' << ip << ',' << iq << ',' << x_.center(ix) << ',' << p_.center(ip) << ','
            << q_.center(iq) << ',' << c << '\n';
      }
}

Histogram3D accumulate(Histogram3D hist, std::span<const Shot> shots) {
  hist.accumulate(shots);
  return hist;
}

Histogram3D merge(const Histogram3D& a, const Histogram3D& b) {
  Histogram3D out = a;
  out.merge(b);
  return out;
}

std::uint64_t QHistogram::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
}

RealVector QHistogram::probabilities() const {
  const double n = static_cast<double>(total());
  if (n == 0.0) throw std::invalid_argument("empty reference histogram");
  RealVector p(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) p(i) = counts[i] / n;
  return p;
}

void write_shot_log(std::ostream& out, std::span<const Shot> shots) {
  for (const Shot& s : shots) {
    out.put(basis_tag(s.basis));
    put_f64(out, s.X);
    put_f64(out, s.P);
    put_f64(out, s.Q);
  }
}

ShotBatch read_shot_log(std::istream& in) {
  ShotBatch shots;
  char tag = 0;
  while (in.get(tag)) {
    Shot s;
    s.basis = basis_from_tag(tag);
    s.X = get_f64(in);
    s.P = get_f64(in);
    s.Q = get_f64(in);
    shots.push_back(s);
  }
  return shots;
}

}  // namespace qphoton
