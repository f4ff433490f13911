#pragma once

#include "json.hpp"

#include <string>
#include <utility>
#include <vector>

#include "glabc/kernels.hpp"
#include "glabc/model.hpp"

namespace glabc {

struct FlowSpec {
  std::size_t layers = 4;
  std::size_t hidden = 32;
  /// Scale outputs are squashed to (-clamp, clamp).
  double clamp = 2.0;
};

/// RealNVP-style affine coupling flow behind a fixed affine whitening map.
///
/// theta = shift + L v, v = T_K(...T_1(u)), u ~ N(0, I). Each coupling layer
/// keeps one half of the coordinates and moves the other half by
/// x_t * exp(s(x_c)) + t(x_c), with (s, t) produced by a two-hidden-layer
/// tanh network. Output weights start at zero, so a fresh flow is exactly the
/// whitened base. One-dimensional problems are padded with an auxiliary
/// coordinate fixed at zero that only ever conditions.
class FlowModel final : public Distribution {
 public:
  FlowModel(std::size_t dim, FlowSpec spec, Vector shift, Matrix chol);
  FlowModel(std::size_t dim, FlowSpec spec = {});
  /// Whitening taken from the prior's mean and covariance.
  static FlowModel matched_to(const Distribution& prior, FlowSpec spec = {});

  std::size_t dim() const override { return dim_; }
  double log_density(const Vector& theta) const override;
  Vector sample(SeedStream& stream) const override;
  Vector grad_log_density(const Vector& theta) const override;

  /// Draw plus its log density, computed on the forward pass.
  std::pair<Vector, double> sample_with_density(SeedStream& stream) const;

  /// Base point to parameter space, and back.
  Vector transform(const Vector& u) const;
  Vector inverse(const Vector& theta) const;
  /// Sum of log|det| over the coupling layers at theta (whitening excluded).
  double coupling_log_det(const Vector& theta) const;

  const FlowSpec& spec() const { return spec_; }
  std::size_t num_parameters() const { return params_.size(); }
  const Vector& parameters() const { return params_; }
  void set_parameters(const Vector& params);

  /// -sum_i W_i log p_T(theta_i) with W normalized from log weights, and its
  /// gradient with respect to the parameters. Returns nullopt when every
  /// weight is zero.
  std::optional<double> weighted_nll(const std::vector<Vector>& thetas, const std::vector<double>& log_weights,
                                     Vector* grad) const;

  nlohmann::json to_json() const;
  static FlowModel from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static FlowModel load(const std::string& path);

 private:
  struct Layer {
    std::vector<Eigen::Index> cond;
    std::vector<Eigen::Index> moved;
    std::size_t offset = 0;  // start of this layer's block in params_
  };
  struct NetShape {
    Eigen::Index in, hidden, out;
  };

  void build_layers();
  NetShape net_shape(const Layer& l) const;
  std::size_t net_size(const NetShape& s) const;
  Vector whiten(const Vector& theta) const;
  Vector pad(const Vector& v) const;
  double log_density_and_grad(const Vector& theta, Vector* param_grad, double weight, Vector* theta_grad) const;

  std::size_t dim_;
  std::size_t inner_;  // dim_, or 2 when padded
  FlowSpec spec_;
  Vector shift_;
  Matrix chol_;
  double log_det_chol_ = 0.0;
  std::vector<Layer> layers_;
  Vector params_;
};

/// Weighted candidates awaiting the next flow update.
class TrainBuffer {
 public:
  explicit TrainBuffer(std::size_t capacity) : capacity_(capacity) {}

  void add(const std::vector<WeightedCandidate>& candidates);
  void add(const Vector& theta, double log_weight);
  bool full() const { return thetas_.size() >= capacity_; }
  void clear();
  std::size_t size() const { return thetas_.size(); }
  std::size_t capacity() const { return capacity_; }
  const std::vector<Vector>& thetas() const { return thetas_; }
  const std::vector<double>& log_weights() const { return log_weights_; }

 private:
  std::size_t capacity_;
  std::vector<Vector> thetas_;
  std::vector<double> log_weights_;
};

enum class FlowOptimizer { sgd, adam };

std::string to_string(FlowOptimizer o);
FlowOptimizer parse_flow_optimizer(const std::string& name);

/// Algorithm-level training step: plain gradient descent with rate r.
/// Returns the model unchanged (with a warning) when all weights are zero.
FlowModel flow_train_step(const FlowModel& model, const TrainBuffer& buffer, double r, double* loss = nullptr);

/// Stateful optimizer wrapper; sgd is identical to flow_train_step.
class FlowTrainer {
 public:
  FlowTrainer(FlowOptimizer kind, double lr) : kind_(kind), lr_(lr) {}
  /// Returns the loss before the update, or nullopt if skipped.
  std::optional<double> step(FlowModel& model, const TrainBuffer& buffer);

 private:
  FlowOptimizer kind_;
  double lr_;
  Vector m_, v_;
  std::size_t t_ = 0;
};

/// i-SIR with a normalizing-flow proposal refitted every `collect_stages`
/// stages on the candidates gathered since the previous refit.
class FlowAdaptiveIsir {
 public:
  FlowAdaptiveIsir(FlowModel model, std::size_t n_b, std::size_t collect_stages, FlowOptimizer optimizer, double lr);

  IsirResult step(const ChainState& state, const AbcTarget& target, SeedStream& stream);

  const FlowModel& model() const { return model_; }
  const std::vector<double>& loss_history() const { return losses_; }
  std::size_t updates() const { return losses_.size(); }
  std::size_t batch_size() const { return n_b_; }
  /// Stop training after this many updates (0 = unlimited).
  void set_max_updates(std::size_t n) { max_updates_ = n; }

 private:
  FlowModel model_;
  TrainBuffer buffer_;
  FlowTrainer trainer_;
  std::size_t n_b_;
  std::size_t collect_stages_;
  std::size_t stage_ = 0;
  std::size_t max_updates_ = 0;
  std::vector<double> losses_;
};

}  // namespace glabc
