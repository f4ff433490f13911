#include "glabc/kernels.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <limits>
#include <stdexcept>

namespace glabc {

std::string to_string(MoveType m) { return m == MoveType::local ? "local" : "global"; }

ChainState init_chain(const AbcTarget& target, const Vector& theta, SeedStream& stream) {
  if (static_cast<std::size_t>(theta.size()) != target.dim())
    throw std::invalid_argument("init_chain: theta has wrong dimension");
  ChainState s;
  s.point = target.evaluate(theta, stream);
  s.sims_used = 1;
  return s;
}

double mh_accept_prob(const ParamPoint& current, const ParamPoint& proposed, double log_q_fwd, double log_q_rev) {
  const double num_c = current.log_numerator();
  const double num_p = proposed.log_numerator();
  if (num_p == kNegInf) {
    if (num_c == kNegInf) spdlog::debug("mh: current and proposed weights are both zero");
    return 0.0;
  }
  if (num_c == kNegInf) return 1.0;
  const double log_a = (num_p + log_q_rev) - (num_c + log_q_fwd);
  if (std::isnan(log_a)) return 0.0;
  return log_a >= 0.0 ? 1.0 : std::exp(log_a);
}

namespace {

ChainState next_from(const ChainState& state, MoveType move) {
  ChainState out = state;
  out.iter = state.iter + 1;
  out.last_move = move;
  out.accepted = false;
  out.sims_used = 0;
  return out;
}

double broadcast(const Vector& v, Eigen::Index j) { return v.size() == 1 ? v[0] : v[j]; }

double log_isotropic_normal(const Vector& x, const Vector& mean, double sd) {
  double s = 0.0;
  for (Eigen::Index j = 0; j < x.size(); ++j) s += log_normal_density(x[j], mean[j], sd);
  return s;
}

Vector log_post_gradient(const AbcTarget& target, const Vector& theta, const GradEstimator& est, SeedStream& stream,
                         std::size_t& sims) {
  GradResult r = estimate_gradient(target, theta, est, stream);
  sims += r.sims_used;
  Vector g = target.prior().grad_log_density(theta) + r.grad;
  if (r.degenerate || !g.allFinite()) spdlog::debug("mala: degenerate gradient, using a zero-drift proposal");
  return g;
}

Vector langevin_mean(const Vector& theta, const Vector& grad, double eta) {
  if (!grad.allFinite()) return theta;
  return theta + 0.5 * eta * eta * grad;
}

}  // namespace

ChainState local_rw_step(const ChainState& state, const AbcTarget& target, const Vector& scale, SeedStream& stream) {
  const Eigen::Index p = state.point.theta.size();
  if (scale.size() != 1 && scale.size() != p) throw std::invalid_argument("random walk: scale has wrong dimension");
  ChainState out = next_from(state, MoveType::local);
  Vector prop = state.point.theta;
  for (Eigen::Index j = 0; j < p; ++j) prop[j] += broadcast(scale, j) * stream.normal();
  ParamPoint proposed = target.evaluate(prop, stream);
  out.sims_used = 1;
  if (stream.uniform() < mh_accept_prob(state.point, proposed, 0.0, 0.0)) {
    out.point = std::move(proposed);
    out.accepted = true;
    out.log_post_grad.reset();
  }
  return out;
}

ChainState mala_step(const ChainState& state, const AbcTarget& target, double eta, const GradEstimator& est,
                     SeedStream& stream) {
  if (!(eta > 0.0)) throw std::invalid_argument("mala: eta must be positive");
  ChainState out = next_from(state, MoveType::local);
  std::size_t sims = 0;
  const Vector& theta = state.point.theta;
  const Vector g_cur = state.log_post_grad ? *state.log_post_grad : log_post_gradient(target, theta, est, stream, sims);
  out.log_post_grad = g_cur;

  const Vector mean_f = langevin_mean(theta, g_cur, eta);
  Vector prop = mean_f;
  for (Eigen::Index j = 0; j < prop.size(); ++j) prop[j] += eta * stream.normal();
  ParamPoint proposed = target.evaluate(prop, stream);
  sims += 1;

  if (proposed.log_numerator() != kNegInf) {
    Vector g_prop = log_post_gradient(target, prop, est, stream, sims);
    const Vector mean_r = langevin_mean(prop, g_prop, eta);
    const double lq_fwd = log_isotropic_normal(prop, mean_f, eta);
    const double lq_rev = log_isotropic_normal(theta, mean_r, eta);
    if (stream.uniform() < mh_accept_prob(state.point, proposed, lq_fwd, lq_rev)) {
      out.point = std::move(proposed);
      out.log_post_grad = std::move(g_prop);
      out.accepted = true;
    }
  }
  out.sims_used = sims;
  return out;
}

ChainState global_imh_step(const ChainState& state, const AbcTarget& target, const Distribution& proposal,
                           SeedStream& stream) {
  ChainState out = next_from(state, MoveType::global);
  Vector prop = proposal.sample(stream);
  const double lq_prop = proposal.log_density(prop);
  if (lq_prop == kNegInf) throw std::domain_error("imh: proposal sampled a point of zero proposal density");
  ParamPoint proposed = target.evaluate(prop, stream);
  out.sims_used = 1;
  const double lq_cur = proposal.log_density(state.point.theta);
  if (stream.uniform() < mh_accept_prob(state.point, proposed, lq_prop, lq_cur)) {
    out.point = std::move(proposed);
    out.accepted = true;
    out.log_post_grad.reset();
  }
  return out;
}

IsirResult isir_step(const ChainState& state, const AbcTarget& target, const Distribution& proposal, std::size_t n_b,
                     SeedStream& stream) {
  if (n_b == 0) throw std::invalid_argument("isir: batch size must be >= 1");
  IsirResult res;
  res.state = next_from(state, MoveType::global);
  res.candidates.reserve(n_b);

  // Every candidate gets its own substream so the batch could be simulated
  // in any order (or in parallel) with identical results.
  const std::uint64_t epoch = stream();
  for (std::size_t i = 0; i < n_b; ++i) {
    SeedStream cs = stream.substream(epoch, i);
    WeightedCandidate c;
    Vector theta = proposal.sample(cs);
    c.log_proposal = proposal.log_density(theta);
    if (c.log_proposal == kNegInf) throw std::domain_error("isir: proposal sampled a point of zero proposal density");
    c.point = target.evaluate(theta, cs);
    c.log_weight = c.point.log_numerator() - c.log_proposal;
    if (std::isnan(c.log_weight)) c.log_weight = kNegInf;
    res.candidates.push_back(std::move(c));
  }
  res.state.sims_used = n_b;

  std::vector<double> lw(n_b + 1);
  const double lq_cur = proposal.log_density(state.point.theta);
  const double num_cur = state.point.log_numerator();
  if (num_cur == kNegInf) {
    lw[0] = kNegInf;
  } else if (lq_cur == kNegInf) {
    spdlog::warn("isir: current state has zero proposal density; it will be kept");
    lw[0] = std::numeric_limits<double>::infinity();
  } else {
    lw[0] = num_cur - lq_cur;
  }
  for (std::size_t i = 0; i < n_b; ++i) lw[i + 1] = res.candidates[i].log_weight;

  double m = kNegInf;
  for (double v : lw) m = std::max(m, v);
  const double u = stream.uniform();
  // -inf: nothing has weight, stay. +inf: the current state is forced.
  if (std::isinf(m)) return res;

  double total = 0.0;
  std::vector<double> cum(lw.size());
  for (std::size_t i = 0; i < lw.size(); ++i) {
    total += std::exp(lw[i] - m);
    cum[i] = total;
  }
  const double target_mass = u * total;
  std::size_t pick = 0;
  while (pick + 1 < cum.size() && cum[pick] <= target_mass) ++pick;

  if (pick != 0) {
    res.state.point = res.candidates[pick - 1].point;
    res.state.accepted = true;
    res.state.log_post_grad.reset();
  }
  return res;
}

void GlobalLocalConfig::validate(std::size_t dim) const {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must lie in [0, 1]");
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (gamma > 0.0) {
    if (!global_proposal) throw std::invalid_argument("gamma > 0 needs a global proposal");
    if (global_proposal->dim() != dim) throw std::invalid_argument("global proposal has wrong dimension");
  }
  if (gamma < 1.0) {
    if (const auto* rw = std::get_if<RandomWalkSpec>(&local)) {
      const auto n = static_cast<std::size_t>(rw->scale.size());
      if (n != 1 && n != dim) throw std::invalid_argument("random walk scale must have 1 or p entries");
      for (Eigen::Index j = 0; j < rw->scale.size(); ++j)
        if (!(rw->scale[j] > 0.0)) throw std::invalid_argument("random walk scale must be positive");
    } else {
      const auto& m = std::get<MalaSpec>(local);
      if (!(m.eta > 0.0)) throw std::invalid_argument("mala eta must be positive");
      m.estimator.validate();
    }
  }
}

ChainState local_step(const ChainState& state, const LocalKernelSpec& spec, const AbcTarget& target,
                      SeedStream& stream) {
  if (const auto* rw = std::get_if<RandomWalkSpec>(&spec)) return local_rw_step(state, target, rw->scale, stream);
  const auto& m = std::get<MalaSpec>(spec);
  return mala_step(state, target, m.eta, m.estimator, stream);
}

GlStepResult gl_step(const ChainState& state, const GlobalLocalConfig& cfg, const AbcTarget& target,
                     SeedStream& stream) {
  if (!(cfg.gamma >= 0.0 && cfg.gamma <= 1.0)) throw std::invalid_argument("gamma must lie in [0, 1]");
  GlStepResult r;
  if (stream.uniform() < cfg.gamma) {
    if (cfg.global_kind == GlobalKind::imh) {
      r.state = global_imh_step(state, target, *cfg.global_proposal, stream);
    } else {
      auto is = isir_step(state, target, *cfg.global_proposal, cfg.batch_size, stream);
      r.state = std::move(is.state);
      r.candidates = std::move(is.candidates);
    }
  } else {
    r.state = local_step(state, cfg.local, target, stream);
  }
  return r;
}

}  // namespace glabc
