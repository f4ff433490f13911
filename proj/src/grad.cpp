#include "glabc/grad.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace glabc {

std::string to_string(GradMethod m) {
  switch (m) {
    case GradMethod::mc_random: return "mc_random";
    case GradMethod::crn_max: return "crn_max";
    case GradMethod::crn_mean: return "crn_mean";
    case GradMethod::gaussian_crn: return "gaussian_crn";
    case GradMethod::analytic: return "analytic";
  }
  return "unknown";
}

GradMethod parse_grad_method(const std::string& name) {
  for (auto m : {GradMethod::mc_random, GradMethod::crn_max, GradMethod::crn_mean, GradMethod::gaussian_crn,
                 GradMethod::analytic})
    if (to_string(m) == name) return m;
  throw std::invalid_argument("unknown gradient estimator '" + name + "'");
}

void GradEstimator::validate() const {
  if (method == GradMethod::analytic) return;
  if (S < 1) throw std::invalid_argument("gradient estimator: S must be >= 1");
  if (method == GradMethod::gaussian_crn && S < 2) throw std::invalid_argument("gaussian_crn needs S >= 2");
  if (d_theta.size() == 0) throw std::invalid_argument("gradient estimator: d_theta is empty");
  for (Eigen::Index j = 0; j < d_theta.size(); ++j)
    if (!(d_theta[j] > 0.0)) throw std::invalid_argument("gradient estimator: d_theta must be positive");
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double log_kernel_at(const AbcTarget& target, const Vector& theta, SeedStream stream) {
  auto x = target.simulate(theta, stream);
  return x ? target.log_kernel(*x) : kNegInf;
}

void check_dims(const AbcTarget& target, const Vector& theta, const GradEstimator& est) {
  est.validate();
  if (static_cast<std::size_t>(theta.size()) != target.dim())
    throw std::invalid_argument("gradient: theta has wrong dimension");
  if (est.d_theta.size() != 1 && est.d_theta.size() != theta.size())
    throw std::invalid_argument("gradient: d_theta must have 1 or p entries");
}

GradResult make_result(Eigen::Index p) {
  GradResult r;
  r.grad = Vector::Zero(p);
  r.loglik_plus = Vector::Zero(p);
  r.loglik_minus = Vector::Zero(p);
  return r;
}

void finish_coordinate(GradResult& r, Eigen::Index j, double plus, double minus, double d) {
  r.loglik_plus[j] = plus;
  r.loglik_minus[j] = minus;
  if (std::isfinite(plus) && std::isfinite(minus)) {
    r.grad[j] = (plus - minus) / (2.0 * d);
  } else {
    r.grad[j] = kNaN;
    r.degenerate = true;
  }
}

enum class PanelMode { shared, independent };

template <class SideFn>
GradResult central_difference(const AbcTarget& target, const Vector& theta, const GradEstimator& est,
                              SeedStream& stream, PanelMode mode, SideFn side) {
  check_dims(target, theta, est);
  const Eigen::Index p = theta.size();
  GradResult r = make_result(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const double d = est.step(j);
    Vector tp = theta, tm = theta;
    tp[j] += d;
    tm[j] -= d;
    const CrnPanel panel_plus = fresh_panel(stream, est.S);
    const CrnPanel panel_minus = mode == PanelMode::shared ? panel_plus : fresh_panel(stream, est.S);
    finish_coordinate(r, j, side(tp, panel_plus), side(tm, panel_minus), d);
    r.sims_used += 2 * est.S;
  }
  return r;
}

}  // namespace

double loglik_crn(const AbcTarget& target, const Vector& theta, const CrnPanel& panel, bool* degenerate) {
  std::vector<double> lk;
  lk.reserve(panel.size());
  for (const auto& s : panel.seeds()) lk.push_back(log_kernel_at(target, theta, s));
  const double v = log_sum_exp(lk);
  if (degenerate) *degenerate = !std::isfinite(v);
  return v;
}

GradResult grad_crn_mean(const AbcTarget& target, const Vector& theta, const GradEstimator& est, SeedStream& stream) {
  return central_difference(target, theta, est, stream, PanelMode::shared,
                            [&](const Vector& t, const CrnPanel& panel) { return loglik_crn(target, t, panel); });
}

GradResult grad_mc_random(const AbcTarget& target, const Vector& theta, const GradEstimator& est, SeedStream& stream) {
  return central_difference(target, theta, est, stream, PanelMode::independent,
                            [&](const Vector& t, const CrnPanel& panel) { return loglik_crn(target, t, panel); });
}

GradResult grad_crn_max(const AbcTarget& target, const Vector& theta, const GradEstimator& est, SeedStream& stream) {
  return central_difference(target, theta, est, stream, PanelMode::shared, [&](const Vector& t, const CrnPanel& panel) {
    double best = kNegInf;
    for (const auto& s : panel.seeds()) best = std::max(best, log_kernel_at(target, t, s));
    return best;
  });
}

GradResult grad_gaussian_crn(const AbcTarget& target, const Vector& theta, const GradEstimator& est,
                             SeedStream& stream) {
  const auto bw = target.kernel().gaussian_bandwidth();
  if (!bw) throw std::invalid_argument("gaussian_crn requires a Gaussian kernel");
  const double eps2 = *bw * *bw;
  const Vector& y = target.observed();
  return central_difference(target, theta, est, stream, PanelMode::shared, [&](const Vector& t, const CrnPanel& panel) {
    const auto S = static_cast<double>(panel.size());
    Vector sum = Vector::Zero(y.size());
    Vector sum_sq = Vector::Zero(y.size());
    for (const auto& seed : panel.seeds()) {
      SeedStream s = seed;
      auto x = target.simulate(t, s);
      if (!x || x->size() != y.size()) return kNegInf;
      sum += *x;
      sum_sq += x->cwiseProduct(*x);
    }
    const Vector mean = sum / S;
    double ll = 0.0;
    for (Eigen::Index c = 0; c < y.size(); ++c) {
      const double var = std::max(0.0, (sum_sq[c] - S * mean[c] * mean[c]) / (S - 1.0));
      if (!std::isfinite(var)) return kNegInf;
      const double v = var + eps2;
      const double r = y[c] - mean[c];
      ll += -0.5 * std::log(v) - r * r / (2.0 * v);
    }
    return ll;
  });
}

GradResult grad_analytic(const AbcTarget& target, const Vector& theta) {
  const auto& g = target.analytic_loglik_gradient();
  if (!g) throw std::logic_error("target " + target.name() + " has no analytic likelihood gradient");
  GradResult r = make_result(theta.size());
  r.grad = g(theta);
  r.loglik_plus.setConstant(kNaN);
  r.loglik_minus.setConstant(kNaN);
  r.degenerate = !r.grad.allFinite();
  return r;
}

GradResult estimate_gradient(const AbcTarget& target, const Vector& theta, const GradEstimator& est,
                             SeedStream& stream) {
  switch (est.method) {
    case GradMethod::mc_random: return grad_mc_random(target, theta, est, stream);
    case GradMethod::crn_max: return grad_crn_max(target, theta, est, stream);
    case GradMethod::crn_mean: return grad_crn_mean(target, theta, est, stream);
    case GradMethod::gaussian_crn: return grad_gaussian_crn(target, theta, est, stream);
    case GradMethod::analytic: return grad_analytic(target, theta);
  }
  throw std::logic_error("unreachable gradient method");
}

}  // namespace glabc
