#include "glabc/model.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace glabc {

double log_normal_density(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -0.5 * z * z - std::log(sd) - 0.5 * std::log(2.0 * std::numbers::pi);
}

double log_sum_exp(const std::vector<double>& values) {
  double m = kNegInf;
  for (double v : values) m = std::max(m, v);
  if (m == kNegInf) return kNegInf;
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : values) s += std::exp(v - m);
  return m + std::log(s);
}

// ---------------------------------------------------------------- Distribution

Vector Distribution::grad_log_density(const Vector& theta) const {
  Vector g(theta.size());
  Vector t = theta;
  for (Eigen::Index j = 0; j < theta.size(); ++j) {
    const double h = 1e-5 * std::max(1.0, std::abs(theta[j]));
    t[j] = theta[j] + h;
    const double up = log_density(t);
    t[j] = theta[j] - h;
    const double dn = log_density(t);
    t[j] = theta[j];
    g[j] = (up - dn) / (2.0 * h);
  }
  return g;
}

namespace {
constexpr std::size_t kMomentDraws = 20000;
}

Vector Distribution::mean() const {
  SeedStream s(0x5eed0f0u, 0);
  Vector m = Vector::Zero(static_cast<Eigen::Index>(dim()));
  for (std::size_t i = 0; i < kMomentDraws; ++i) m += sample(s);
  return m / static_cast<double>(kMomentDraws);
}

Matrix Distribution::covariance() const {
  SeedStream s(0x5eed0f0u, 1);
  const auto p = static_cast<Eigen::Index>(dim());
  std::vector<Vector> draws;
  draws.reserve(kMomentDraws);
  Vector m = Vector::Zero(p);
  for (std::size_t i = 0; i < kMomentDraws; ++i) {
    draws.push_back(sample(s));
    m += draws.back();
  }
  m /= static_cast<double>(kMomentDraws);
  Matrix c = Matrix::Zero(p, p);
  for (const auto& d : draws) c += (d - m) * (d - m).transpose();
  return c / static_cast<double>(kMomentDraws - 1);
}

DiagonalGaussian::DiagonalGaussian(Vector mean, Vector sd) : mean_(std::move(mean)), sd_(std::move(sd)) {
  if (mean_.size() != sd_.size() || mean_.size() == 0)
    throw std::invalid_argument("DiagonalGaussian: mean/sd size mismatch");
  if ((sd_.array() <= 0.0).any()) throw std::invalid_argument("DiagonalGaussian: sd must be positive");
}

double DiagonalGaussian::log_density(const Vector& theta) const {
  double lp = 0.0;
  for (Eigen::Index j = 0; j < mean_.size(); ++j) lp += log_normal_density(theta[j], mean_[j], sd_[j]);
  return lp;
}

Vector DiagonalGaussian::sample(SeedStream& stream) const {
  Vector v(mean_.size());
  for (Eigen::Index j = 0; j < mean_.size(); ++j) v[j] = mean_[j] + sd_[j] * stream.normal();
  return v;
}

Vector DiagonalGaussian::grad_log_density(const Vector& theta) const {
  return ((mean_ - theta).array() / sd_.array().square()).matrix();
}

Matrix DiagonalGaussian::covariance() const { return sd_.array().square().matrix().asDiagonal(); }

UniformBox::UniformBox(Vector lower, Vector upper) : lower_(std::move(lower)), upper_(std::move(upper)) {
  if (lower_.size() != upper_.size() || lower_.size() == 0)
    throw std::invalid_argument("UniformBox: bound size mismatch");
  if ((upper_.array() <= lower_.array()).any()) throw std::invalid_argument("UniformBox: empty box");
  log_volume_ = (upper_ - lower_).array().log().sum();
}

double UniformBox::log_density(const Vector& theta) const {
  for (Eigen::Index j = 0; j < lower_.size(); ++j)
    if (theta[j] < lower_[j] || theta[j] > upper_[j]) return kNegInf;
  return -log_volume_;
}

Vector UniformBox::sample(SeedStream& stream) const {
  Vector v(lower_.size());
  for (Eigen::Index j = 0; j < lower_.size(); ++j) v[j] = lower_[j] + (upper_[j] - lower_[j]) * stream.uniform();
  return v;
}

Vector UniformBox::grad_log_density(const Vector& theta) const { return Vector::Zero(theta.size()); }

Vector UniformBox::mean() const { return 0.5 * (lower_ + upper_); }

Matrix UniformBox::covariance() const {
  return ((upper_ - lower_).array().square() / 12.0).matrix().asDiagonal();
}

IsotropicGaussianMixture::IsotropicGaussianMixture(std::vector<Vector> centers, double sd)
    : centers_(std::move(centers)), sd_(sd) {
  if (centers_.empty()) throw std::invalid_argument("mixture needs at least one component");
  if (!(sd_ > 0.0)) throw std::invalid_argument("mixture sd must be positive");
}

double IsotropicGaussianMixture::log_density(const Vector& theta) const {
  std::vector<double> terms;
  terms.reserve(centers_.size());
  for (const auto& c : centers_) {
    double lp = 0.0;
    for (Eigen::Index j = 0; j < c.size(); ++j) lp += log_normal_density(theta[j], c[j], sd_);
    terms.push_back(lp);
  }
  return log_sum_exp(terms) - std::log(static_cast<double>(centers_.size()));
}

Vector IsotropicGaussianMixture::sample(SeedStream& stream) const {
  const auto& c = centers_[stream.below(centers_.size())];
  Vector v(c.size());
  for (Eigen::Index j = 0; j < c.size(); ++j) v[j] = c[j] + sd_ * stream.normal();
  return v;
}

Vector IsotropicGaussianMixture::mean() const {
  Vector m = Vector::Zero(centers_.front().size());
  for (const auto& c : centers_) m += c;
  return m / static_cast<double>(centers_.size());
}

Matrix IsotropicGaussianMixture::covariance() const {
  const Vector m = mean();
  const auto p = m.size();
  Matrix c = sd_ * sd_ * Matrix::Identity(p, p);
  for (const auto& ctr : centers_) c += (ctr - m) * (ctr - m).transpose() / static_cast<double>(centers_.size());
  return c;
}

ProductGamma::ProductGamma(Vector shape, Vector rate) : shape_(std::move(shape)), rate_(std::move(rate)) {
  if (shape_.size() != rate_.size() || shape_.size() == 0)
    throw std::invalid_argument("ProductGamma: size mismatch");
  if ((shape_.array() <= 0.0).any() || (rate_.array() <= 0.0).any())
    throw std::invalid_argument("ProductGamma: shape and rate must be positive");
  log_norm_.resize(shape_.size());
  for (Eigen::Index j = 0; j < shape_.size(); ++j)
    log_norm_[j] = shape_[j] * std::log(rate_[j]) - std::lgamma(shape_[j]);
}

double ProductGamma::log_density(const Vector& theta) const {
  double lp = 0.0;
  for (Eigen::Index j = 0; j < shape_.size(); ++j) {
    if (!(theta[j] > 0.0)) return kNegInf;
    lp += log_norm_[j] + (shape_[j] - 1.0) * std::log(theta[j]) - rate_[j] * theta[j];
  }
  return lp;
}

Vector ProductGamma::sample(SeedStream& stream) const {
  Vector v(shape_.size());
  for (Eigen::Index j = 0; j < shape_.size(); ++j) v[j] = stream.gamma(shape_[j]) / rate_[j];
  return v;
}

Vector ProductGamma::grad_log_density(const Vector& theta) const {
  Vector g(theta.size());
  for (Eigen::Index j = 0; j < shape_.size(); ++j)
    g[j] = theta[j] > 0.0 ? (shape_[j] - 1.0) / theta[j] - rate_[j] : 0.0;
  return g;
}

Vector ProductGamma::mean() const { return (shape_.array() / rate_.array()).matrix(); }

Matrix ProductGamma::covariance() const {
  return (shape_.array() / rate_.array().square()).matrix().asDiagonal();
}

Categorical::Categorical(std::vector<Vector> support, std::vector<double> probs)
    : support_(std::move(support)), probs_(std::move(probs)) {
  if (support_.empty() || support_.size() != probs_.size())
    throw std::invalid_argument("Categorical: support/probs mismatch");
  const double total = std::accumulate(probs_.begin(), probs_.end(), 0.0);
  if (!(total > 0.0)) throw std::invalid_argument("Categorical: probabilities must sum to > 0");
  for (auto& p : probs_) {
    if (p < 0.0) throw std::invalid_argument("Categorical: negative probability");
    p /= total;
  }
}

double Categorical::log_density(const Vector& theta) const {
  for (std::size_t i = 0; i < support_.size(); ++i)
    if (support_[i].isApprox(theta, 1e-12) || (support_[i] - theta).norm() < 1e-12)
      return probs_[i] > 0.0 ? std::log(probs_[i]) : kNegInf;
  return kNegInf;
}

Vector Categorical::sample(SeedStream& stream) const {
  double u = stream.uniform();
  for (std::size_t i = 0; i < probs_.size(); ++i) {
    if (u < probs_[i]) return support_[i];
    u -= probs_[i];
  }
  return support_.back();
}

Vector Categorical::mean() const {
  Vector m = Vector::Zero(support_.front().size());
  for (std::size_t i = 0; i < support_.size(); ++i) m += probs_[i] * support_[i];
  return m;
}

Matrix Categorical::covariance() const {
  const Vector m = mean();
  Matrix c = Matrix::Zero(m.size(), m.size());
  for (std::size_t i = 0; i < support_.size(); ++i) c += probs_[i] * (support_[i] - m) * (support_[i] - m).transpose();
  return c;
}

// ---------------------------------------------------------------- kernels

GaussianKernel::GaussianKernel(double eps) : eps_(eps) {
  if (!(eps_ > 0.0)) throw std::invalid_argument("kernel bandwidth must be positive");
}

double GaussianKernel::log_value(const Vector& x, const Vector& y) const {
  if (x.size() != y.size()) throw std::invalid_argument("GaussianKernel: x/y size mismatch");
  double lk = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i])) return kNegInf;
    lk += log_normal_density(x[i], y[i], eps_);
  }
  return lk;
}

MeanAbsDiscrepancyKernel::MeanAbsDiscrepancyKernel(double eps) : eps_(eps) {
  if (!(eps_ > 0.0)) throw std::invalid_argument("kernel bandwidth must be positive");
}

double MeanAbsDiscrepancyKernel::log_value(const Vector& x, const Vector& y) const {
  if (x.size() != y.size() || x.size() == 0) throw std::invalid_argument("discrepancy kernel: size mismatch");
  if (!x.allFinite()) return kNegInf;
  const double delta = (x - y).cwiseAbs().mean();
  return log_normal_density(delta, 0.0, eps_);
}

FunctionKernel::FunctionKernel(LogKernelFn fn, double bandwidth) : fn_(std::move(fn)), bandwidth_(bandwidth) {}

double FunctionKernel::log_value(const Vector& x, const Vector& y) const {
  if (!x.allFinite()) return kNegInf;
  return fn_(x, y);
}

// ---------------------------------------------------------------- points

double ParamPoint::kernel_value() const { return std::exp(log_kernel); }

double ParamPoint::log_numerator() const {
  if (log_prior == kNegInf || log_kernel == kNegInf) return kNegInf;
  return log_prior + log_kernel;
}

double WeightedCandidate::raw_weight() const { return std::exp(log_weight); }

// ---------------------------------------------------------------- target

AbcTarget::AbcTarget(std::string name, std::shared_ptr<const Distribution> prior, Simulator simulator,
                     std::shared_ptr<const Kernel> kernel, Vector observed)
    : name_(std::move(name)),
      prior_(std::move(prior)),
      simulator_(std::move(simulator)),
      kernel_(std::move(kernel)),
      observed_(std::move(observed)) {
  if (!prior_ || !simulator_ || !kernel_) throw std::invalid_argument("AbcTarget: missing component");
  if (!(kernel_->bandwidth() > 0.0)) throw std::invalid_argument("AbcTarget: eps must be positive");
}

std::optional<Vector> AbcTarget::simulate(const Vector& theta, SeedStream& stream) const {
  calls_.fetch_add(1, std::memory_order_relaxed);
  try {
    Vector x = simulator_(theta, stream);
    if (!x.allFinite()) {
      failures_.fetch_add(1, std::memory_order_relaxed);
      spdlog::debug("simulator returned non-finite output for model {}", name_);
      return std::nullopt;
    }
    return x;
  } catch (const SimulationFailure& e) {
    failures_.fetch_add(1, std::memory_order_relaxed);
    spdlog::debug("simulation failure in model {}: {}", name_, e.what());
    return std::nullopt;
  }
}

double AbcTarget::log_kernel(const Vector& sim_data) const {
  if (sim_data.size() == 0 || !sim_data.allFinite()) return kNegInf;
  return kernel_->log_value(sim_data, observed_);
}

double AbcTarget::kernel_weight(const Vector& sim_data) const { return std::exp(log_kernel(sim_data)); }

double AbcTarget::kernel_weight(const Vector& sim_data, const Vector& observed) const {
  if (sim_data.size() == 0 || !sim_data.allFinite()) return 0.0;
  return std::exp(kernel_->log_value(sim_data, observed));
}

double AbcTarget::log_unnorm_posterior(const ParamPoint& point) const { return point.log_numerator(); }

Vector AbcTarget::prior_sample(SeedStream& stream) const { return prior_->sample(stream); }

ParamPoint AbcTarget::evaluate(const Vector& theta, SeedStream& stream) const {
  ParamPoint pt;
  pt.theta = theta;
  pt.log_prior = prior_->log_density(theta);
  auto x = simulate(theta, stream);
  if (x) {
    pt.log_kernel = log_kernel(*x);
    pt.sim_data = std::move(*x);
  } else {
    pt.sim_failed = true;
    pt.log_kernel = kNegInf;
  }
  return pt;
}

}  // namespace glabc
