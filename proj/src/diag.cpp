#include "glabc/diag.hpp"

#include <spdlog/spdlog.h>
#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace glabc {

// ---------------------------------------------------------------- ESS

double ess(const std::vector<double>& trace) {
  const std::size_t n = trace.size();
  if (n < 10) throw std::invalid_argument("ess: need at least 10 values");
  double mean = 0.0;
  for (double v : trace) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : trace) var += (v - mean) * (v - mean);
  if (!(var > 0.0)) return 1.0;

  std::size_t m = 1;
  while (m < 2 * n) m <<= 1;
  std::vector<double> x(m, 0.0);
  for (std::size_t i = 0; i < n; ++i) x[i] = trace[i] - mean;
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> f;
  fft.fwd(f, x);
  for (auto& c : f) c = std::complex<double>(std::norm(c), 0.0);
  std::vector<double> acov;
  fft.inv(acov, f);
  const double c0 = acov[0];

  double tau = -1.0;
  for (std::size_t k = 0; k + 1 < n; k += 2) {
    const double pair = (acov[k] + acov[k + 1]) / c0;
    if (!(pair > 0.0)) break;
    tau += 2.0 * pair;
  }
  const double e = static_cast<double>(n) / std::max(tau, 1e-12);
  return std::min(e, static_cast<double>(n));
}

// ---------------------------------------------------------------- grids

std::vector<double> GridDensity::mass() const {
  std::vector<double> out;
  if (kind == DensityKind::joint) {
    double cell = 1.0;
    for (const auto& a : axes) cell *= a.spacing();
    double s = 0.0;
    for (double v : values) s += v;
    out.push_back(s * cell);
  } else {
    for (std::size_t k = 0; k < axes.size(); ++k) {
      const std::size_t off = marginal_offset(k);
      double s = 0.0;
      for (std::size_t i = 0; i < axes[k].n; ++i) s += values[off + i];
      out.push_back(s * axes[k].spacing());
    }
  }
  return out;
}

std::size_t GridDensity::marginal_offset(std::size_t axis) const {
  std::size_t off = 0;
  for (std::size_t k = 0; k < axis; ++k) off += axes[k].n;
  return off;
}

std::vector<Axis> axes_from_box(const std::vector<std::pair<double, double>>& box, std::size_t n) {
  std::vector<Axis> out;
  for (const auto& [lo, hi] : box) out.push_back({lo, hi, n});
  return out;
}

// ---------------------------------------------------------------- KDE

std::vector<double> normal_reference_bandwidth(const std::vector<Vector>& samples) {
  if (samples.size() < 2) throw std::invalid_argument("bandwidth: need at least two samples");
  const Eigen::Index p = samples.front().size();
  const double n = static_cast<double>(samples.size());
  std::vector<double> bw(static_cast<std::size_t>(p));
  for (Eigen::Index j = 0; j < p; ++j) {
    double m = 0.0, m2 = 0.0;
    for (const auto& s : samples) {
      m += s[j];
      m2 += s[j] * s[j];
    }
    m /= n;
    const double sd = std::sqrt(std::max(0.0, (m2 / n - m * m) * n / (n - 1.0)));
    bw[static_cast<std::size_t>(j)] = 1.06 * sd * std::pow(n, -0.2);
  }
  return bw;
}

std::vector<double> kde_bandwidth(const std::vector<Vector>& samples, const KdeSpec& spec, std::size_t p) {
  std::vector<double> bw = spec.bandwidth.empty() ? normal_reference_bandwidth(samples) : spec.bandwidth;
  if (bw.size() == 1 && p > 1) bw.assign(p, bw[0]);
  if (bw.size() != p) throw std::invalid_argument("kde: bandwidth has wrong length");
  for (auto& b : bw) {
    if (!(b >= 0.0)) throw std::invalid_argument("kde: bandwidth must be positive");
    // Zero spread (all samples equal) would give a delta; use a small floor.
    if (b == 0.0) b = 1e-12;
  }
  return bw;
}

namespace {

void check_axes(const std::vector<Axis>& axes) {
  for (const auto& a : axes)
    if (a.n < 2 || !(a.upper > a.lower)) throw std::invalid_argument("kde: each axis needs n >= 2 and upper > lower");
}

std::vector<double> gaussian_taps(double bw, double h, std::size_t n) {
  const double r = bw / h;
  const auto half = static_cast<std::size_t>(std::min<double>(static_cast<double>(n - 1), std::ceil(4.0 * r)));
  std::vector<double> taps(2 * half + 1);
  if (r < 1e-9) {
    std::fill(taps.begin(), taps.end(), 0.0);
    taps[half] = 1.0;
    return taps;
  }
  for (std::size_t k = 0; k <= 2 * half; ++k) {
    const double d = (static_cast<double>(k) - static_cast<double>(half)) / r;
    taps[k] = std::exp(-0.5 * d * d);
  }
  return taps;
}

/// Convolves `data` (row-major over `shape`) along one axis in place.
void convolve_axis(std::vector<double>& data, const std::vector<std::size_t>& shape, std::size_t axis,
                   const std::vector<double>& taps) {
  if (taps.size() == 1) return;
  const std::size_t n = shape[axis];
  std::size_t stride = 1;
  for (std::size_t k = axis + 1; k < shape.size(); ++k) stride *= shape[k];
  const std::size_t outer = data.size() / (n * stride);
  const auto half = static_cast<std::ptrdiff_t>(taps.size() / 2);
  std::vector<double> line(n), out(n);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t s = 0; s < stride; ++s) {
      const std::size_t base = o * n * stride + s;
      for (std::size_t i = 0; i < n; ++i) line[i] = data[base + i * stride];
      std::fill(out.begin(), out.end(), 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        if (line[i] == 0.0) continue;
        const auto ii = static_cast<std::ptrdiff_t>(i);
        const std::ptrdiff_t a = std::max<std::ptrdiff_t>(0, ii - half);
        const std::ptrdiff_t b = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(n) - 1, ii + half);
        for (std::ptrdiff_t j = a; j <= b; ++j) out[static_cast<std::size_t>(j)] += line[i] * taps[static_cast<std::size_t>(j - ii + half)];
      }
      for (std::size_t i = 0; i < n; ++i) data[base + i * stride] = out[i];
    }
  }
}

/// Linear binning of the chosen coordinates onto a joint grid, then
/// separable smoothing. The result integrates to the fraction of samples
/// inside the box.
std::vector<double> binned_kde(const std::vector<Vector>& samples, const std::vector<Eigen::Index>& coords,
                               const std::vector<Axis>& axes, const std::vector<double>& bw) {
  const std::size_t d = axes.size();
  std::vector<std::size_t> shape(d);
  std::size_t total = 1;
  for (std::size_t k = 0; k < d; ++k) {
    shape[k] = axes[k].n;
    total *= axes[k].n;
  }
  std::vector<double> grid(total, 0.0);
  std::size_t inside = 0;
  std::vector<std::size_t> lo(d);
  std::vector<double> frac(d);
  for (const auto& s : samples) {
    bool ok = true;
    for (std::size_t k = 0; k < d && ok; ++k) {
      const double x = s[coords[k]];
      const Axis& a = axes[k];
      if (!(x >= a.lower && x <= a.upper)) {
        ok = false;
        break;
      }
      const double f = (x - a.lower) / a.spacing();
      auto i = static_cast<std::size_t>(std::floor(f));
      if (i >= a.n - 1) i = a.n - 2;
      lo[k] = i;
      frac[k] = std::clamp(f - static_cast<double>(i), 0.0, 1.0);
    }
    if (!ok) continue;
    ++inside;
    for (std::size_t corner = 0; corner < (std::size_t{1} << d); ++corner) {
      double w = 1.0;
      std::size_t idx = 0;
      for (std::size_t k = 0; k < d; ++k) {
        const bool up = (corner >> k) & 1U;
        w *= up ? frac[k] : 1.0 - frac[k];
        idx = idx * shape[k] + lo[k] + (up ? 1 : 0);
      }
      grid[idx] += w;
    }
  }
  if (inside == 0) return grid;
  for (std::size_t k = 0; k < d; ++k) convolve_axis(grid, shape, k, gaussian_taps(bw[k], axes[k].spacing(), axes[k].n));
  // The smoothed grid is rescaled to the binned in-box mass, then divided by
  // the total count so mass outside the box stays missing.
  double cell = 1.0;
  for (const auto& a : axes) cell *= a.spacing();
  double s = 0.0;
  for (double v : grid) s += v;
  const double scale = static_cast<double>(inside) / (static_cast<double>(samples.size()) * s * cell);
  for (double& v : grid) v *= scale;
  return grid;
}

}  // namespace

GridDensity kde_2d(const std::vector<Vector>& samples, const KdeSpec& spec) {
  if (samples.size() < 100) throw std::invalid_argument("kde: need at least 100 samples");
  check_axes(spec.axes);
  const std::size_t p = spec.axes.size();
  if (static_cast<std::size_t>(samples.front().size()) != p) throw std::invalid_argument("kde: sample dimension does not match the grid");
  const auto bw = kde_bandwidth(samples, spec, p);
  std::vector<Eigen::Index> coords(p);
  for (std::size_t k = 0; k < p; ++k) coords[k] = static_cast<Eigen::Index>(k);
  GridDensity g;
  g.kind = DensityKind::joint;
  g.axes = spec.axes;
  g.values = binned_kde(samples, coords, spec.axes, bw);
  return g;
}

GridDensity kde_marginals(const std::vector<Vector>& samples, const KdeSpec& spec) {
  if (samples.size() < 100) throw std::invalid_argument("kde: need at least 100 samples");
  check_axes(spec.axes);
  const std::size_t p = spec.axes.size();
  if (static_cast<std::size_t>(samples.front().size()) != p) throw std::invalid_argument("kde: sample dimension does not match the grid");
  const auto bw = kde_bandwidth(samples, spec, p);
  GridDensity g;
  g.kind = DensityKind::marginals;
  g.axes = spec.axes;
  for (std::size_t k = 0; k < p; ++k) {
    auto v = binned_kde(samples, {static_cast<Eigen::Index>(k)}, {spec.axes[k]}, {bw[k]});
    g.values.insert(g.values.end(), v.begin(), v.end());
  }
  return g;
}

GridDensity kde(const std::vector<Vector>& samples, const KdeSpec& spec, DensityKind kind) {
  return kind == DensityKind::joint ? kde_2d(samples, spec) : kde_marginals(samples, spec);
}

// ---------------------------------------------------------------- KL

namespace {

void check_same_grid(const GridDensity& a, const GridDensity& b) {
  if (a.kind != b.kind || a.axes != b.axes || a.values.size() != b.values.size())
    throw std::invalid_argument("grid_kl: reference and estimate grids differ");
}

double kl_sum(const double* p, const double* q, std::size_t n, double floor) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (p[i] > floor) s += p[i] * std::log(p[i] / std::max(q[i], floor));
  return s;
}

}  // namespace

std::vector<double> marginal_kl(const GridDensity& reference, const GridDensity& estimate, double floor) {
  check_same_grid(reference, estimate);
  if (reference.kind != DensityKind::marginals) throw std::invalid_argument("marginal_kl: densities are joint");
  std::vector<double> out;
  for (std::size_t k = 0; k < reference.axes.size(); ++k) {
    const Axis& a = reference.axes[k];
    const std::size_t off = reference.marginal_offset(k);
    const double len = a.upper - a.lower;
    out.push_back(len / static_cast<double>(a.n) * kl_sum(&reference.values[off], &estimate.values[off], a.n, floor));
  }
  return out;
}

double grid_kl(const GridDensity& reference, const GridDensity& estimate, double floor) {
  check_same_grid(reference, estimate);
  if (reference.kind == DensityKind::joint)
    return kl_sum(reference.values.data(), estimate.values.data(), reference.values.size(), floor) /
           static_cast<double>(reference.values.size());
  const auto per = marginal_kl(reference, estimate, floor);
  double s = 0.0;
  for (double v : per) s += v;
  return s / static_cast<double>(per.size());
}

// ---------------------------------------------------------------- reference

ReferencePosterior reference_by_is(const AbcTarget& target, std::size_t n_prior, std::size_t n_keep,
                                   const KdeSpec& spec, SeedStream& stream, DensityKind kind, IsReferenceInfo* info,
                                   std::vector<Vector>* kept) {
  if (n_keep == 0 || n_prior < n_keep) throw std::invalid_argument("reference: need n_prior >= n_keep >= 1");
  constexpr std::size_t kChunk = 1 << 16;
  const std::uint64_t epoch = stream();
  std::vector<Vector> thetas(n_prior);
  std::vector<double> lw(n_prior);
  for (std::size_t c = 0; c * kChunk < n_prior; ++c) {
    SeedStream cs = stream.substream(epoch, c);
    const std::size_t end = std::min(n_prior, (c + 1) * kChunk);
    for (std::size_t i = c * kChunk; i < end; ++i) {
      thetas[i] = target.prior_sample(cs);
      auto x = target.simulate(thetas[i], cs);
      lw[i] = x ? target.log_kernel(*x) : kNegInf;
    }
  }

  const double lse = log_sum_exp(lw);
  if (!std::isfinite(lse)) throw std::runtime_error("reference: every importance weight is zero");
  double sum_w2 = 0.0;
  for (double v : lw) sum_w2 += std::exp(2.0 * (v - lse));
  const double wess = 1.0 / sum_w2;
  if (wess < 100.0) spdlog::warn("reference: importance weight ESS {:.1f} < 100, reference is unreliable", wess);

  std::vector<double> u(n_keep);
  for (auto& x : u) x = stream.uniform();
  std::sort(u.begin(), u.end());
  std::vector<Vector> keep;
  keep.reserve(n_keep);
  double cum = 0.0;
  std::size_t j = 0;
  for (std::size_t i = 0; i < n_prior && j < n_keep; ++i) {
    cum += std::exp(lw[i] - lse);
    while (j < n_keep && (u[j] <= cum || i + 1 == n_prior)) {
      keep.push_back(thetas[i]);
      ++j;
    }
  }
  thetas.clear();
  thetas.shrink_to_fit();

  ReferencePosterior ref;
  ref.density = kde(keep, spec, kind);
  ref.bandwidth = kde_bandwidth(keep, spec, target.dim());
  ref.provenance = "importance sampling from the prior of " + target.name() + ": n_prior=" + std::to_string(n_prior) +
                   ", n_keep=" + std::to_string(n_keep) + ", weight ESS=" + std::to_string(wess) +
                   ", root seed=" + std::to_string(stream.root_seed());
  if (info) *info = {wess, n_prior, n_keep};
  if (kept) *kept = std::move(keep);
  return ref;
}

std::size_t mode_switches(const std::vector<Vector>& trace, const std::vector<Vector>& centers, double radius) {
  if (!(radius > 0.0)) throw std::invalid_argument("mode_switches: radius must be positive");
  if (centers.empty()) throw std::invalid_argument("mode_switches: need at least one centre");
  long label = -1;
  std::size_t switches = 0;
  for (const auto& t : trace) {
    long nearest = -1;
    double best = radius;
    for (std::size_t c = 0; c < centers.size(); ++c) {
      const double d = (t - centers[c]).norm();
      if (d <= best) {
        best = d;
        nearest = static_cast<long>(c);
      }
    }
    if (nearest < 0) continue;
    if (label >= 0 && nearest != label) ++switches;
    label = nearest;
  }
  return switches;
}

// ---------------------------------------------------------------- file IO

namespace {

constexpr char kMagic[8] = {'G', 'L', 'A', 'B', 'C', 'R', 'E', 'F'};
constexpr std::uint32_t kVersion = 2;

template <class U>
void put_le(std::ostream& out, U v) {
  unsigned char b[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), sizeof(U));
}

template <class U>
U get_le(std::istream& in) {
  unsigned char b[sizeof(U)];
  in.read(reinterpret_cast<char*>(b), sizeof(U));
  if (!in) throw std::runtime_error("reference file is truncated");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b[i]) << (8 * i);
  return v;
}

void put_f64(std::ostream& out, double d) { put_le(out, std::bit_cast<std::uint64_t>(d)); }
double get_f64(std::istream& in) { return std::bit_cast<double>(get_le<std::uint64_t>(in)); }

}  // namespace

void save_reference(const ReferencePosterior& ref, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write reference file " + path);
  out.write(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, kVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ref.density.kind));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ref.density.axes.size()));
  for (const auto& a : ref.density.axes) {
    put_f64(out, a.lower);
    put_f64(out, a.upper);
    put_le<std::uint64_t>(out, a.n);
  }
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ref.bandwidth.size()));
  for (double b : ref.bandwidth) put_f64(out, b);
  for (double v : ref.density.values) put_f64(out, v);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ref.provenance.size()));
  out.write(ref.provenance.data(), static_cast<std::streamsize>(ref.provenance.size()));
  if (!out) throw std::runtime_error("error writing reference file " + path);
}

ReferencePosterior load_reference(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open reference file " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw std::runtime_error(path + " is not a reference file");
  const auto version = get_le<std::uint32_t>(in);
  if (version < 1 || version > kVersion) throw std::runtime_error(path + ": unsupported reference version");
  ReferencePosterior ref;
  const auto kind = get_le<std::uint32_t>(in);
  if (kind > 1) throw std::runtime_error(path + ": unknown density kind");
  ref.density.kind = static_cast<DensityKind>(kind);
  const auto ndim = get_le<std::uint32_t>(in);
  std::size_t count = ref.density.kind == DensityKind::joint ? 1 : 0;
  for (std::uint32_t k = 0; k < ndim; ++k) {
    Axis a;
    a.lower = get_f64(in);
    a.upper = get_f64(in);
    a.n = get_le<std::uint64_t>(in);
    if (a.n < 2) throw std::runtime_error(path + ": axis with fewer than two points");
    if (ref.density.kind == DensityKind::joint) count *= a.n;
    else count += a.n;
    ref.density.axes.push_back(a);
  }
  if (version >= 2) {
    const auto nbw = get_le<std::uint32_t>(in);
    if (nbw > ndim) throw std::runtime_error(path + ": corrupt bandwidth block");
    ref.bandwidth.resize(nbw);
    for (auto& b : ref.bandwidth) b = get_f64(in);
  }
  ref.density.values.resize(count);
  for (auto& v : ref.density.values) v = get_f64(in);
  const auto len = get_le<std::uint32_t>(in);
  ref.provenance.resize(len);
  in.read(ref.provenance.data(), len);
  if (!in) throw std::runtime_error(path + ": truncated provenance");
  return ref;
}

}  // namespace glabc
