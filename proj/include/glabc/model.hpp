#pragma once

#include <Eigen/Dense>

#include <atomic>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "glabc/rng.hpp"

namespace glabc {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Density plus sampler over R^p. Used for priors and independent proposals.
class Distribution {
 public:
  virtual ~Distribution() = default;

  virtual std::size_t dim() const = 0;
  /// log density, possibly unnormalized but with a constant that is fixed
  /// for the object's lifetime. Returns -inf outside the support.
  virtual double log_density(const Vector& theta) const = 0;
  virtual Vector sample(SeedStream& stream) const = 0;

  /// Central finite differences unless overridden.
  virtual Vector grad_log_density(const Vector& theta) const;
  /// Monte Carlo estimates from a fixed stream unless overridden.
  virtual Vector mean() const;
  virtual Matrix covariance() const;
};

class DiagonalGaussian final : public Distribution {
 public:
  DiagonalGaussian(Vector mean, Vector sd);
  std::size_t dim() const override { return static_cast<std::size_t>(mean_.size()); }
  double log_density(const Vector& theta) const override;
  Vector sample(SeedStream& stream) const override;
  Vector grad_log_density(const Vector& theta) const override;
  Vector mean() const override { return mean_; }
  Matrix covariance() const override;

 private:
  Vector mean_;
  Vector sd_;
};

class UniformBox final : public Distribution {
 public:
  UniformBox(Vector lower, Vector upper);
  std::size_t dim() const override { return static_cast<std::size_t>(lower_.size()); }
  double log_density(const Vector& theta) const override;
  Vector sample(SeedStream& stream) const override;
  Vector grad_log_density(const Vector& theta) const override;
  Vector mean() const override;
  Matrix covariance() const override;

 private:
  Vector lower_;
  Vector upper_;
  double log_volume_;
};

/// Equal-weight mixture of isotropic Gaussians.
class IsotropicGaussianMixture final : public Distribution {
 public:
  IsotropicGaussianMixture(std::vector<Vector> centers, double sd);
  std::size_t dim() const override { return static_cast<std::size_t>(centers_.front().size()); }
  double log_density(const Vector& theta) const override;
  Vector sample(SeedStream& stream) const override;
  Vector mean() const override;
  Matrix covariance() const override;

 private:
  std::vector<Vector> centers_;
  double sd_;
};

/// Independent Gamma(shape, rate) coordinates.
class ProductGamma final : public Distribution {
 public:
  ProductGamma(Vector shape, Vector rate);
  std::size_t dim() const override { return static_cast<std::size_t>(shape_.size()); }
  double log_density(const Vector& theta) const override;
  Vector sample(SeedStream& stream) const override;
  Vector grad_log_density(const Vector& theta) const override;
  Vector mean() const override;
  Matrix covariance() const override;

 private:
  Vector shape_;
  Vector rate_;
  Vector log_norm_;
};

/// Discrete distribution over a finite set of points in R^p.
class Categorical final : public Distribution {
 public:
  Categorical(std::vector<Vector> support, std::vector<double> probs);
  std::size_t dim() const override { return static_cast<std::size_t>(support_.front().size()); }
  double log_density(const Vector& theta) const override;
  Vector sample(SeedStream& stream) const override;
  Vector mean() const override;
  Matrix covariance() const override;

  const std::vector<Vector>& support() const { return support_; }
  const std::vector<double>& probs() const { return probs_; }

 private:
  std::vector<Vector> support_;
  std::vector<double> probs_;
};

/// Discrepancy kernel K_eps(x, y), evaluated in log space.
class Kernel {
 public:
  virtual ~Kernel() = default;
  /// log K(x, y); -inf for zero kernel mass or non-finite x.
  virtual double log_value(const Vector& x, const Vector& y) const = 0;
  /// Bandwidth of a per-component Gaussian kernel, if this is one.
  virtual std::optional<double> gaussian_bandwidth() const { return std::nullopt; }
  virtual double bandwidth() const = 0;
};

/// Product of N(x_i; y_i, eps^2) over components.
class GaussianKernel final : public Kernel {
 public:
  explicit GaussianKernel(double eps);
  double log_value(const Vector& x, const Vector& y) const override;
  std::optional<double> gaussian_bandwidth() const override { return eps_; }
  double bandwidth() const override { return eps_; }

 private:
  double eps_;
};

/// N(Delta(x, y); 0, eps^2) with Delta the mean absolute discrepancy.
class MeanAbsDiscrepancyKernel final : public Kernel {
 public:
  explicit MeanAbsDiscrepancyKernel(double eps);
  double log_value(const Vector& x, const Vector& y) const override;
  double bandwidth() const override { return eps_; }

 private:
  double eps_;
};

/// Arbitrary kernel from a callable; the callable returns log K.
class FunctionKernel final : public Kernel {
 public:
  using LogKernelFn = std::function<double(const Vector&, const Vector&)>;
  FunctionKernel(LogKernelFn fn, double bandwidth);
  double log_value(const Vector& x, const Vector& y) const override;
  double bandwidth() const override { return bandwidth_; }

 private:
  LogKernelFn fn_;
  double bandwidth_;
};

/// Thrown by simulators that cannot produce output for a parameter.
class SimulationFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ParamPoint {
  Vector theta;
  double log_prior = kNegInf;
  Vector sim_data;
  double log_kernel = kNegInf;
  bool sim_failed = false;

  double kernel_value() const;
  double log_numerator() const;
};

struct WeightedCandidate {
  ParamPoint point;
  double log_proposal = 0.0;
  /// log(prior * kernel / proposal); -inf for zero weight.
  double log_weight = kNegInf;

  double raw_weight() const;
};

/// The ABC target pi_eps(theta, x | y). Immutable once built and safe to
/// share between workers that each own a SeedStream.
class AbcTarget {
 public:
  using Simulator = std::function<Vector(const Vector& theta, SeedStream& stream)>;
  using LoglikGradient = std::function<Vector(const Vector& theta)>;

  AbcTarget(std::string name, std::shared_ptr<const Distribution> prior, Simulator simulator,
            std::shared_ptr<const Kernel> kernel, Vector observed);

  const std::string& name() const { return name_; }
  std::size_t dim() const { return prior_->dim(); }
  const Distribution& prior() const { return *prior_; }
  std::shared_ptr<const Distribution> prior_ptr() const { return prior_; }
  const Kernel& kernel() const { return *kernel_; }
  const Vector& observed() const { return observed_; }

  /// Draws x ~ P_theta. Returns nullopt when the simulator fails or emits
  /// non-finite output; the caller treats that as zero kernel weight.
  std::optional<Vector> simulate(const Vector& theta, SeedStream& stream) const;

  double log_kernel(const Vector& sim_data) const;
  double kernel_weight(const Vector& sim_data) const;
  double kernel_weight(const Vector& sim_data, const Vector& observed) const;

  /// log pi(theta) + log K(x, y); -inf when either factor vanishes.
  double log_unnorm_posterior(const ParamPoint& point) const;

  Vector prior_sample(SeedStream& stream) const;

  /// Prior, one simulation and the kernel value at theta.
  ParamPoint evaluate(const Vector& theta, SeedStream& stream) const;

  void set_analytic_loglik_gradient(LoglikGradient grad) { analytic_grad_ = std::move(grad); }
  const LoglikGradient& analytic_loglik_gradient() const { return analytic_grad_; }

  /// Running totals over every simulate() call on this target, from all threads.
  std::size_t simulation_calls() const { return calls_.load(std::memory_order_relaxed); }
  std::size_t simulation_failures() const { return failures_.load(std::memory_order_relaxed); }

 private:
  std::string name_;
  std::shared_ptr<const Distribution> prior_;
  Simulator simulator_;
  std::shared_ptr<const Kernel> kernel_;
  Vector observed_;
  LoglikGradient analytic_grad_;
  mutable std::atomic<std::size_t> calls_{0};
  mutable std::atomic<std::size_t> failures_{0};
};

double log_normal_density(double x, double mean, double sd);
double log_sum_exp(const std::vector<double>& values);

}  // namespace glabc
