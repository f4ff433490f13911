#include "glabc/tune.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numeric>
#include <stdexcept>

namespace glabc {

double esjd_d(const std::vector<Vector>& trace) {
  if (trace.size() < 2) throw std::invalid_argument("esjd: need at least two states");
  const Eigen::Index p = trace.front().size();
  if (p == 0) throw std::invalid_argument("esjd: empty parameter vector");
  Matrix M = Matrix::Zero(p, p);
  for (std::size_t t = 1; t < trace.size(); ++t) {
    const Vector d = trace[t] - trace[t - 1];
    M.noalias() += d * d.transpose();
  }
  M /= static_cast<double>(trace.size() - 1);
  if (p == 1) return M(0, 0);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(M, Eigen::EigenvaluesOnly);
  const Vector& ev = eig.eigenvalues();
  const double top = ev.maxCoeff();
  if (!(top > 0.0) || ev.minCoeff() <= 1e-12 * top) {
    if (top > 0.0) spdlog::warn("esjd: jump matrix is singular (chain moves in a subspace)");
    return 0.0;
  }
  return std::exp(ev.array().log().mean());
}

double esjd_1d(const std::vector<double>& trace) {
  if (trace.size() < 2) throw std::invalid_argument("esjd: need at least two states");
  double s = 0.0;
  for (std::size_t t = 1; t < trace.size(); ++t) s += (trace[t] - trace[t - 1]) * (trace[t] - trace[t - 1]);
  return s / static_cast<double>(trace.size() - 1);
}

EsjdEstimate cesjd(const std::vector<Vector>& trace, double cost_per_iter) {
  if (!(cost_per_iter > 0.0)) throw std::invalid_argument("cesjd: cost must be positive");
  EsjdEstimate e;
  e.esjd = esjd_d(trace);
  e.cost_per_iter = cost_per_iter;
  e.cesjd = e.esjd / cost_per_iter;
  e.n_iters = trace.size();
  e.p = static_cast<std::size_t>(trace.front().size());
  return e;
}

// ---------------------------------------------------------------- design

namespace {

Matrix lattice(std::size_t n, std::size_t d, std::uint64_t a) {
  Matrix u(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  std::uint64_t h = 1;
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t i = 0; i < n; ++i)
      u(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          (static_cast<double>((i * h) % n) + 0.5) / static_cast<double>(n);
    h = (h * a) % n;
  }
  return u;
}

/// Hickernell's centred L2 discrepancy (squared).
double centered_l2(const Matrix& x) {
  const Eigen::Index n = x.rows(), d = x.cols();
  double s1 = 0.0, s2 = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double prod = 1.0;
    for (Eigen::Index k = 0; k < d; ++k) {
      const double z = std::abs(x(i, k) - 0.5);
      prod *= 1.0 + 0.5 * z - 0.5 * z * z;
    }
    s1 += prod;
    for (Eigen::Index j = 0; j < n; ++j) {
      double q = 1.0;
      for (Eigen::Index k = 0; k < d; ++k)
        q *= 1.0 + 0.5 * std::abs(x(i, k) - 0.5) + 0.5 * std::abs(x(j, k) - 0.5) - 0.5 * std::abs(x(i, k) - x(j, k));
      s2 += q;
    }
  }
  const double nn = static_cast<double>(n);
  return std::pow(13.0 / 12.0, static_cast<double>(d)) - 2.0 / nn * s1 + s2 / (nn * nn);
}

std::uint64_t best_generator(std::size_t n, std::size_t d) {
  static std::mutex mu;
  static std::map<std::pair<std::size_t, std::size_t>, std::uint64_t> cache;
  std::lock_guard lock(mu);
  auto key = std::make_pair(n, d);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  std::uint64_t best = 1;
  double best_cd = std::numeric_limits<double>::infinity();
  if (d > 1) {
    for (std::uint64_t a = 1; a < n; ++a) {
      if (std::gcd(a, static_cast<std::uint64_t>(n)) != 1) continue;
      const double cd = centered_l2(lattice(n, d, a));
      if (cd < best_cd - 1e-15) {
        best_cd = cd;
        best = a;
      }
    }
  }
  cache[key] = best;
  return best;
}

}  // namespace

Matrix uniform_design(std::size_t n, std::size_t d, SeedStream& stream) {
  if (n == 0 || d == 0) throw std::invalid_argument("uniform_design: n and d must be positive");
  const std::uint64_t a = best_generator(n, d);
  Matrix u(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  std::uint64_t h = 1;
  for (std::size_t j = 0; j < d; ++j) {
    const std::uint64_t shift = stream.below(n);
    for (std::size_t i = 0; i < n; ++i)
      u(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          (static_cast<double>((i * h + shift) % n) + 0.5) / static_cast<double>(n);
    h = (h * a) % n;
  }
  return u;
}

// ---------------------------------------------------------------- tuner

void TuneSpace::validate() const {
  if (dims.empty()) throw std::invalid_argument("tune space has no dimensions");
  if (budget < 2) throw std::invalid_argument("tune budget must be >= 2 per round");
  if (rounds < 1) throw std::invalid_argument("tune rounds must be >= 1");
  if (!(shrink > 0.0 && shrink < 1.0)) throw std::invalid_argument("tune shrink must lie in (0, 1)");
  for (const auto& d : dims) {
    if (!std::isfinite(d.lower) || !std::isfinite(d.upper) || !(d.lower < d.upper))
      throw std::invalid_argument("tune dimension '" + d.name + "' needs finite bounds with lower < upper");
    if (d.log_scale && !(d.lower > 0.0))
      throw std::invalid_argument("log-scaled tune dimension '" + d.name + "' needs a positive lower bound");
  }
  if (constraint) {
    if (!(constraint->target_cost >= 1.0)) throw std::invalid_argument("cost constraint needs target_cost >= 1");
    auto has = [&](const std::string& n) {
      return std::any_of(dims.begin(), dims.end(), [&](const TuneDim& d) { return d.name == n; });
    };
    if (!has(constraint->gamma_dim) || !has(constraint->batch_dim))
      throw std::invalid_argument("cost constraint refers to unknown dimensions");
  }
}

TunePoint project_point(const TuneSpace& space, TunePoint point) {
  for (const auto& d : space.dims) {
    auto it = point.find(d.name);
    if (it == point.end()) continue;
    double v = std::clamp(it->second, d.lower, d.upper);
    if (d.integer) v = std::clamp(std::round(v), std::ceil(d.lower), std::floor(d.upper));
    it->second = v;
  }
  if (space.constraint) {
    const auto& c = *space.constraint;
    const auto bdim = std::find_if(space.dims.begin(), space.dims.end(), [&](const TuneDim& d) { return d.name == c.batch_dim; });
    const double C = c.target_cost;
    double& gamma = point[c.gamma_dim];
    double& nb = point[c.batch_dim];
    if (C == 1.0) {
      nb = 1.0;
    } else {
      // gamma <= 1 forces N_b >= C.
      const double lo = std::max(std::ceil(C - 1e-12), std::ceil(bdim->lower));
      const double hi = std::max(lo, std::floor(bdim->upper));
      const double raw = gamma > 0.0 ? (C - 1.0) / gamma + 1.0 : hi;
      nb = std::clamp(std::round(raw), lo, hi);
      gamma = (C - 1.0) / (nb - 1.0);
    }
  }
  return point;
}

namespace {

double to_unit_coord(const TuneDim& d, double v) { return d.log_scale ? std::log(v) : v; }
double from_unit_coord(const TuneDim& d, double v) { return d.log_scale ? std::exp(v) : v; }

bool better(const TuneEvaluation& a, const TuneEvaluation& b) {
  if (a.cesjd != b.cesjd) return a.cesjd > b.cesjd;
  return a.cost < b.cost;
}

}  // namespace

TuneReport sequential_tune(const TuneSpace& space, const TuneRunner& runner, SeedStream& stream) {
  space.validate();
  // With a cost constraint the batch size is derived, not designed.
  std::vector<const TuneDim*> designed;
  for (const auto& d : space.dims)
    if (!space.constraint || d.name != space.constraint->batch_dim) designed.push_back(&d);

  std::vector<double> lo, hi;
  for (const auto* d : designed) {
    lo.push_back(to_unit_coord(*d, d->lower));
    hi.push_back(to_unit_coord(*d, d->upper));
  }
  const std::vector<double> full_lo = lo, full_hi = hi;

  TuneReport report;
  for (std::size_t r = 0; r < space.rounds; ++r) {
    const std::uint64_t epoch = stream();
    const Matrix u = uniform_design(space.budget, designed.size(), stream);
    for (std::size_t i = 0; i < space.budget; ++i) {
      TunePoint pt;
      for (std::size_t j = 0; j < designed.size(); ++j) {
        const double x = lo[j] + u(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * (hi[j] - lo[j]);
        pt[designed[j]->name] = from_unit_coord(*designed[j], x);
      }
      pt = project_point(space, std::move(pt));
      SeedStream es = stream.substream(epoch, i);
      const EsjdEstimate e = runner(pt, es);
      report.evaluations.push_back({pt, r, e.esjd, e.cost_per_iter, e.cesjd});
    }

    std::size_t best = 0;
    bool any = false;
    for (std::size_t k = 0; k < report.evaluations.size(); ++k) {
      if (report.evaluations[k].cesjd > 0.0) any = true;
      if (better(report.evaluations[k], report.evaluations[best])) best = k;
    }
    if (!any) throw std::runtime_error("tune: every candidate produced zero cESJD; the chain never moved");
    report.best_index = best;
    report.best = report.evaluations[best].point;
    spdlog::info("tune round {}: best cESJD {:.6g}", r + 1, report.evaluations[best].cesjd);

    for (std::size_t j = 0; j < designed.size(); ++j) {
      const double width = space.shrink * (hi[j] - lo[j]);
      const double centre = to_unit_coord(*designed[j], report.best.at(designed[j]->name));
      double a = centre - 0.5 * width, b = centre + 0.5 * width;
      if (a < full_lo[j]) {
        b += full_lo[j] - a;
        a = full_lo[j];
      }
      if (b > full_hi[j]) {
        a -= b - full_hi[j];
        b = full_hi[j];
      }
      lo[j] = std::max(a, full_lo[j]);
      hi[j] = b;
    }
  }
  return report;
}

}  // namespace glabc
