#pragma once

#include <string>

#include "glabc/model.hpp"

namespace glabc {

enum class GradMethod { mc_random, crn_max, crn_mean, gaussian_crn, analytic };

std::string to_string(GradMethod m);
/// Throws std::invalid_argument for unknown names.
GradMethod parse_grad_method(const std::string& name);

/// Finite-difference estimator of grad log p_eps(y | theta).
///
/// d_theta holds one perturbation per coordinate; a single value is
/// broadcast to every coordinate.
struct GradEstimator {
  GradMethod method = GradMethod::crn_mean;
  std::size_t S = 100;
  Vector d_theta = Vector::Constant(1, 0.05);

  /// Throws std::invalid_argument when the fields are inconsistent.
  void validate() const;
  double step(Eigen::Index j) const { return d_theta.size() == 1 ? d_theta[0] : d_theta[j]; }
};

struct GradResult {
  Vector grad;
  /// Per-coordinate log-likelihood estimates at theta + d_j e_j and theta - d_j e_j.
  Vector loglik_plus;
  Vector loglik_minus;
  bool degenerate = false;
  std::size_t sims_used = 0;
};

/// log sum_s K(f(theta, w_s), y). Returns -inf when every seed gives zero
/// kernel mass and sets *degenerate if given.
double loglik_crn(const AbcTarget& target, const Vector& theta, const CrnPanel& panel, bool* degenerate = nullptr);

GradResult grad_crn_mean(const AbcTarget& target, const Vector& theta, const GradEstimator& est, SeedStream& stream);
GradResult grad_crn_max(const AbcTarget& target, const Vector& theta, const GradEstimator& est, SeedStream& stream);
/// Requires a Gaussian kernel and S >= 2. Channels are treated as independent
/// Gaussians whose log-likelihoods add; for vector data this is experimental.
GradResult grad_gaussian_crn(const AbcTarget& target, const Vector& theta, const GradEstimator& est, SeedStream& stream);
GradResult grad_mc_random(const AbcTarget& target, const Vector& theta, const GradEstimator& est, SeedStream& stream);
/// Uses target.analytic_loglik_gradient(); throws std::logic_error if absent.
GradResult grad_analytic(const AbcTarget& target, const Vector& theta);

/// Dispatches on est.method.
GradResult estimate_gradient(const AbcTarget& target, const Vector& theta, const GradEstimator& est, SeedStream& stream);

}  // namespace glabc
