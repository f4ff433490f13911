#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "glabc/model.hpp"

namespace glabc {

/// det(mean of jump outer products)^(1/p). Returns 0 (with a warning) when
/// the jump matrix is singular. Needs at least two states.
double esjd_d(const std::vector<Vector>& trace);
/// Mean squared jump of a scalar trace.
double esjd_1d(const std::vector<double>& trace);

struct EsjdEstimate {
  double esjd = 0.0;
  double cost_per_iter = 1.0;
  double cesjd = 0.0;
  std::size_t n_iters = 0;
  std::size_t p = 0;
};

/// Throws std::invalid_argument unless cost_per_iter > 0.
EsjdEstimate cesjd(const std::vector<Vector>& trace, double cost_per_iter);

struct TuneDim {
  std::string name;
  double lower = 0.0;
  double upper = 1.0;
  bool log_scale = false;
  bool integer = false;
};

/// gamma * N_b + (1 - gamma) = target_cost. The design samples gamma; N_b
/// is derived, rounded, and gamma re-solved so the identity holds exactly.
struct CostConstraint {
  double target_cost = 3.0;
  std::string gamma_dim = "gamma";
  std::string batch_dim = "n_b";
};

struct TuneSpace {
  std::vector<TuneDim> dims;
  std::size_t budget = 10;
  std::size_t rounds = 3;
  double shrink = 0.5;
  std::optional<CostConstraint> constraint;

  void validate() const;
};

using TunePoint = std::map<std::string, double>;

struct TuneEvaluation {
  TunePoint point;
  std::size_t round = 0;
  double esjd = 0.0;
  double cost = 0.0;
  double cesjd = 0.0;
};

struct TuneReport {
  std::vector<TuneEvaluation> evaluations;
  TunePoint best;
  std::size_t best_index = 0;
};

/// Evaluates one candidate; the stream is private to that evaluation.
using TuneRunner = std::function<EsjdEstimate(const TunePoint&, SeedStream&)>;

/// n points in [0,1)^d from a good-lattice-point set, cyclically shifted by
/// a random offset drawn from `stream`. Points sit at cell centres.
Matrix uniform_design(std::size_t n, std::size_t d, SeedStream& stream);

/// Applies integer rounding and the cost constraint.
TunePoint project_point(const TuneSpace& space, TunePoint point);

/// Sequential uniform-design search maximizing cESJD. Ties prefer the lower
/// cost. Throws std::runtime_error if every evaluation is zero.
TuneReport sequential_tune(const TuneSpace& space, const TuneRunner& runner, SeedStream& stream);

}  // namespace glabc
