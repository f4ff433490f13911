#pragma once

#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "glabc/grad.hpp"
#include "glabc/model.hpp"

namespace glabc {

enum class MoveType { local, global };

std::string to_string(MoveType m);

struct ChainState {
  ParamPoint point;
  std::size_t iter = 0;
  MoveType last_move = MoveType::local;
  bool accepted = false;
  /// Simulator calls made by the transition that produced this state.
  std::size_t sims_used = 0;
  /// Estimated grad log posterior attached to `point` by the Langevin kernel.
  /// Carrying it with the state keeps the noisy-gradient chain exact: the
  /// estimate is an auxiliary variable drawn once per accepted point.
  std::optional<Vector> log_post_grad;
};

/// Simulates once at theta.
ChainState init_chain(const AbcTarget& target, const Vector& theta, SeedStream& stream);

/// min{1, exp[(num(prop) + log_q_rev) - (num(cur) + log_q_fwd)]} with
/// num = log prior + log kernel, log_q_fwd = log q(prop | cur) and
/// log_q_rev = log q(cur | prop). Returns 1 when only the current numerator
/// vanishes and 0 when the proposed one does.
double mh_accept_prob(const ParamPoint& current, const ParamPoint& proposed, double log_q_fwd, double log_q_rev);

ChainState local_rw_step(const ChainState& state, const AbcTarget& target, const Vector& scale, SeedStream& stream);

/// Langevin proposal theta + eta^2 g / 2 + eta z with g the prior gradient
/// plus the estimated likelihood gradient. A state whose gradient estimate
/// is degenerate proposes with zero drift.
ChainState mala_step(const ChainState& state, const AbcTarget& target, double eta, const GradEstimator& est,
                     SeedStream& stream);

/// Independent-proposal MH. Throws std::domain_error if the proposal draws a
/// point where its own density is zero.
ChainState global_imh_step(const ChainState& state, const AbcTarget& target, const Distribution& proposal,
                           SeedStream& stream);

struct IsirResult {
  ChainState state;
  /// The N_b fresh candidates (the current state is not included).
  std::vector<WeightedCandidate> candidates;
};

IsirResult isir_step(const ChainState& state, const AbcTarget& target, const Distribution& proposal, std::size_t n_b,
                     SeedStream& stream);

struct RandomWalkSpec {
  Vector scale;
};

struct MalaSpec {
  double eta = 0.1;
  GradEstimator estimator;
};

using LocalKernelSpec = std::variant<RandomWalkSpec, MalaSpec>;

enum class GlobalKind { isir, imh };

struct GlobalLocalConfig {
  double gamma = 0.0;
  std::size_t batch_size = 1;
  LocalKernelSpec local = RandomWalkSpec{};
  std::shared_ptr<const Distribution> global_proposal;
  GlobalKind global_kind = GlobalKind::isir;

  /// Throws std::invalid_argument on out-of-range settings.
  void validate(std::size_t dim) const;
};

ChainState local_step(const ChainState& state, const LocalKernelSpec& spec, const AbcTarget& target,
                      SeedStream& stream);

struct GlStepResult {
  ChainState state;
  /// Fresh i-SIR candidates; empty after a local or IMH move.
  std::vector<WeightedCandidate> candidates;
};

/// Global move with probability gamma, otherwise the local kernel.
GlStepResult gl_step(const ChainState& state, const GlobalLocalConfig& cfg, const AbcTarget& target,
                     SeedStream& stream);

}  // namespace glabc
