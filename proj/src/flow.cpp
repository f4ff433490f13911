#include "glabc/flow.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace glabc {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
constexpr std::uint64_t kInitSeed = 0x6e6f726d666c6f77ULL;

struct NetCache {
  Vector in, h1, h2, s, t, x_moved;
};

}  // namespace

FlowModel::FlowModel(std::size_t dim, FlowSpec spec, Vector shift, Matrix chol)
    : dim_(dim), inner_(dim == 1 ? 2 : dim), spec_(spec), shift_(std::move(shift)), chol_(std::move(chol)) {
  if (dim == 0) throw std::invalid_argument("flow: dimension must be >= 1");
  if (spec_.layers == 0 || spec_.hidden == 0) throw std::invalid_argument("flow: layers and hidden must be >= 1");
  if (!(spec_.clamp > 0.0)) throw std::invalid_argument("flow: clamp must be positive");
  if (static_cast<std::size_t>(shift_.size()) != dim || static_cast<std::size_t>(chol_.rows()) != dim ||
      static_cast<std::size_t>(chol_.cols()) != dim)
    throw std::invalid_argument("flow: whitening has wrong shape");
  chol_ = chol_.triangularView<Eigen::Lower>();
  for (std::size_t j = 0; j < dim; ++j) {
    const double d = chol_(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j));
    if (!(d > 0.0)) throw std::invalid_argument("flow: whitening factor must have a positive diagonal");
    log_det_chol_ += std::log(d);
  }
  build_layers();
}

FlowModel::FlowModel(std::size_t dim, FlowSpec spec)
    : FlowModel(dim, spec, Vector::Zero(static_cast<Eigen::Index>(dim)),
                Matrix::Identity(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim))) {}

FlowModel FlowModel::matched_to(const Distribution& prior, FlowSpec spec) {
  Eigen::LLT<Matrix> llt(prior.covariance());
  if (llt.info() != Eigen::Success) throw std::invalid_argument("flow: prior covariance is not positive definite");
  return FlowModel(prior.dim(), spec, prior.mean(), llt.matrixL());
}

void FlowModel::build_layers() {
  layers_.clear();
  std::size_t offset = 0;
  for (std::size_t k = 0; k < spec_.layers; ++k) {
    Layer l;
    if (dim_ == 1) {
      l.moved = {0};
      l.cond = {1};
    } else {
      for (std::size_t j = 0; j < inner_; ++j) {
        const bool moved = (j % 2) != (k % 2);
        (moved ? l.moved : l.cond).push_back(static_cast<Eigen::Index>(j));
      }
    }
    l.offset = offset;
    offset += net_size(net_shape(l));
    layers_.push_back(std::move(l));
  }
  params_ = Vector::Zero(static_cast<Eigen::Index>(offset));

  // Hidden weights get a scaled uniform draw; the output layer stays zero.
  SeedStream init(kInitSeed, 0);
  for (const auto& l : layers_) {
    const NetShape s = net_shape(l);
    double* p = params_.data() + l.offset;
    const double a1 = std::sqrt(6.0 / static_cast<double>(s.in + s.hidden));
    for (Eigen::Index i = 0; i < s.hidden * s.in; ++i) p[i] = a1 * (2.0 * init.uniform() - 1.0);
    p += s.hidden * s.in + s.hidden;
    const double a2 = std::sqrt(3.0 / static_cast<double>(s.hidden));
    for (Eigen::Index i = 0; i < s.hidden * s.hidden; ++i) p[i] = a2 * (2.0 * init.uniform() - 1.0);
  }
}

FlowModel::NetShape FlowModel::net_shape(const Layer& l) const {
  return {static_cast<Eigen::Index>(l.cond.size()), static_cast<Eigen::Index>(spec_.hidden),
          static_cast<Eigen::Index>(2 * l.moved.size())};
}

std::size_t FlowModel::net_size(const NetShape& s) const {
  return static_cast<std::size_t>(s.hidden * s.in + s.hidden + s.hidden * s.hidden + s.hidden + s.out * s.hidden + s.out);
}

void FlowModel::set_parameters(const Vector& params) {
  if (params.size() != params_.size()) throw std::invalid_argument("flow: parameter vector has wrong length");
  params_ = params;
}

Vector FlowModel::whiten(const Vector& theta) const {
  return chol_.triangularView<Eigen::Lower>().solve(theta - shift_);
}

Vector FlowModel::pad(const Vector& v) const {
  if (dim_ != 1) return v;
  Vector z = Vector::Zero(2);
  z[0] = v[0];
  return z;
}

namespace {

using MapM = Eigen::Map<const Matrix>;
using MapV = Eigen::Map<const Vector>;
using MutMapM = Eigen::Map<Matrix>;
using MutMapV = Eigen::Map<Vector>;

struct NetView {
  MapM W1;
  MapV b1;
  MapM W2;
  MapV b2;
  MapM W3;
  MapV b3;
};

NetView view(const double* p, Eigen::Index in, Eigen::Index h, Eigen::Index out) {
  const double* w1 = p;
  const double* b1 = w1 + h * in;
  const double* w2 = b1 + h;
  const double* b2 = w2 + h * h;
  const double* w3 = b2 + h;
  const double* b3 = w3 + out * h;
  return {MapM(w1, h, in), MapV(b1, h), MapM(w2, h, h), MapV(b2, h), MapM(w3, out, h), MapV(b3, out)};
}

Vector gather(const Vector& z, const std::vector<Eigen::Index>& idx) {
  Vector out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out[static_cast<Eigen::Index>(i)] = z[idx[i]];
  return out;
}

}  // namespace

Vector FlowModel::transform(const Vector& u) const {
  if (static_cast<std::size_t>(u.size()) != dim_) throw std::invalid_argument("flow: base point has wrong dimension");
  Vector z = pad(u);
  for (const auto& l : layers_) {
    const NetShape sh = net_shape(l);
    const NetView n = view(params_.data() + l.offset, sh.in, sh.hidden, sh.out);
    const Vector c = gather(z, l.cond);
    const Vector h1 = (n.W1 * c + n.b1).array().tanh();
    const Vector h2 = (n.W2 * h1 + n.b2).array().tanh();
    const Vector o = n.W3 * h2 + n.b3;
    const Eigen::Index m = static_cast<Eigen::Index>(l.moved.size());
    for (Eigen::Index i = 0; i < m; ++i) {
      const double s = spec_.clamp * std::tanh(o[i] / spec_.clamp);
      z[l.moved[static_cast<std::size_t>(i)]] = z[l.moved[static_cast<std::size_t>(i)]] * std::exp(s) + o[m + i];
    }
  }
  const Vector v = z.head(static_cast<Eigen::Index>(dim_));
  return shift_ + chol_ * v;
}

std::pair<Vector, double> FlowModel::sample_with_density(SeedStream& stream) const {
  Vector u(static_cast<Eigen::Index>(dim_));
  for (auto& x : u) x = stream.normal();
  Vector z = pad(u);
  double log_det = 0.0;
  for (const auto& l : layers_) {
    const NetShape sh = net_shape(l);
    const NetView n = view(params_.data() + l.offset, sh.in, sh.hidden, sh.out);
    const Vector c = gather(z, l.cond);
    const Vector h1 = (n.W1 * c + n.b1).array().tanh();
    const Vector h2 = (n.W2 * h1 + n.b2).array().tanh();
    const Vector o = n.W3 * h2 + n.b3;
    const Eigen::Index m = static_cast<Eigen::Index>(l.moved.size());
    for (Eigen::Index i = 0; i < m; ++i) {
      const double s = spec_.clamp * std::tanh(o[i] / spec_.clamp);
      auto& zi = z[l.moved[static_cast<std::size_t>(i)]];
      zi = zi * std::exp(s) + o[m + i];
      log_det += s;
    }
  }
  const double log_base = -0.5 * u.squaredNorm() - 0.5 * static_cast<double>(dim_) * kLog2Pi;
  Vector theta = shift_ + chol_ * z.head(static_cast<Eigen::Index>(dim_));
  return {std::move(theta), log_base - log_det - log_det_chol_};
}

Vector FlowModel::sample(SeedStream& stream) const { return sample_with_density(stream).first; }

double FlowModel::log_density_and_grad(const Vector& theta, Vector* param_grad, double weight,
                                       Vector* theta_grad) const {
  if (static_cast<std::size_t>(theta.size()) != dim_) throw std::invalid_argument("flow: theta has wrong dimension");
  const bool backprop = param_grad || theta_grad;
  Vector z = pad(whiten(theta));
  std::vector<NetCache> cache(backprop ? layers_.size() : 0);
  double sum_s = 0.0;
  for (std::size_t k = layers_.size(); k-- > 0;) {
    const Layer& l = layers_[k];
    const NetShape sh = net_shape(l);
    const NetView n = view(params_.data() + l.offset, sh.in, sh.hidden, sh.out);
    Vector c = gather(z, l.cond);
    Vector h1 = (n.W1 * c + n.b1).array().tanh();
    Vector h2 = (n.W2 * h1 + n.b2).array().tanh();
    const Vector o = n.W3 * h2 + n.b3;
    const Eigen::Index m = static_cast<Eigen::Index>(l.moved.size());
    Vector s(m), t(m), xm(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      s[i] = spec_.clamp * std::tanh(o[i] / spec_.clamp);
      t[i] = o[m + i];
      auto& zi = z[l.moved[static_cast<std::size_t>(i)]];
      zi = (zi - t[i]) * std::exp(-s[i]);
      xm[i] = zi;
      sum_s += s[i];
    }
    if (backprop) cache[k] = {std::move(c), std::move(h1), std::move(h2), std::move(s), std::move(t), std::move(xm)};
  }
  const Vector u = z.head(static_cast<Eigen::Index>(dim_));
  const double logp = -0.5 * u.squaredNorm() - 0.5 * static_cast<double>(dim_) * kLog2Pi - sum_s - log_det_chol_;
  if (!backprop) return logp;

  // Reverse sweep: layers were inverted K-1..0, so gradients flow 0..K-1.
  Vector g = Vector::Zero(static_cast<Eigen::Index>(inner_));
  g.head(static_cast<Eigen::Index>(dim_)) = -u;
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const Layer& l = layers_[k];
    const NetCache& nc = cache[k];
    const NetShape sh = net_shape(l);
    const NetView n = view(params_.data() + l.offset, sh.in, sh.hidden, sh.out);
    const Eigen::Index m = static_cast<Eigen::Index>(l.moved.size());
    Vector go(2 * m);
    for (Eigen::Index i = 0; i < m; ++i) {
      const Eigen::Index idx = l.moved[static_cast<std::size_t>(i)];
      const double gx = g[idx];
      const double es = std::exp(-nc.s[i]);
      const double ds = -gx * nc.x_moved[i] - 1.0;
      const double r = nc.s[i] / spec_.clamp;
      go[i] = ds * (1.0 - r * r);
      go[m + i] = -gx * es;
      g[idx] = gx * es;
    }
    const Vector gh2 = n.W3.transpose() * go;
    const Vector ga2 = gh2.array() * (1.0 - nc.h2.array().square());
    const Vector gh1 = n.W2.transpose() * ga2;
    const Vector ga1 = gh1.array() * (1.0 - nc.h1.array().square());
    const Vector gc = n.W1.transpose() * ga1;
    for (std::size_t i = 0; i < l.cond.size(); ++i) g[l.cond[i]] += gc[static_cast<Eigen::Index>(i)];

    if (param_grad) {
      double* p = param_grad->data() + l.offset;
      const Eigen::Index in = sh.in, h = sh.hidden, out = sh.out;
      MutMapM(p, h, in).noalias() += weight * ga1 * nc.in.transpose();
      p += h * in;
      MutMapV(p, h) += weight * ga1;
      p += h;
      MutMapM(p, h, h).noalias() += weight * ga2 * nc.h1.transpose();
      p += h * h;
      MutMapV(p, h) += weight * ga2;
      p += h;
      MutMapM(p, out, h).noalias() += weight * go * nc.h2.transpose();
      p += out * h;
      MutMapV(p, out) += weight * go;
    }
  }
  if (theta_grad) {
    const Vector gv = g.head(static_cast<Eigen::Index>(dim_));
    *theta_grad = chol_.triangularView<Eigen::Lower>().transpose().solve(gv);
  }
  return logp;
}

double FlowModel::log_density(const Vector& theta) const {
  return log_density_and_grad(theta, nullptr, 0.0, nullptr);
}

Vector FlowModel::grad_log_density(const Vector& theta) const {
  Vector g;
  log_density_and_grad(theta, nullptr, 0.0, &g);
  return g;
}

Vector FlowModel::inverse(const Vector& theta) const {
  Vector z = pad(whiten(theta));
  for (std::size_t k = layers_.size(); k-- > 0;) {
    const Layer& l = layers_[k];
    const NetShape sh = net_shape(l);
    const NetView n = view(params_.data() + l.offset, sh.in, sh.hidden, sh.out);
    const Vector c = gather(z, l.cond);
    const Vector h1 = (n.W1 * c + n.b1).array().tanh();
    const Vector h2 = (n.W2 * h1 + n.b2).array().tanh();
    const Vector o = n.W3 * h2 + n.b3;
    const Eigen::Index m = static_cast<Eigen::Index>(l.moved.size());
    for (Eigen::Index i = 0; i < m; ++i) {
      const double s = spec_.clamp * std::tanh(o[i] / spec_.clamp);
      auto& zi = z[l.moved[static_cast<std::size_t>(i)]];
      zi = (zi - o[m + i]) * std::exp(-s);
    }
  }
  return z.head(static_cast<Eigen::Index>(dim_));
}

double FlowModel::coupling_log_det(const Vector& theta) const {
  // log p_T = log p_B(u) - sum s - log|L|, so the coupling term is recovered
  // from the density itself.
  const Vector u = inverse(theta);
  const double log_base = -0.5 * u.squaredNorm() - 0.5 * static_cast<double>(dim_) * kLog2Pi;
  return log_base - log_det_chol_ - log_density(theta);
}

std::optional<double> FlowModel::weighted_nll(const std::vector<Vector>& thetas, const std::vector<double>& log_weights,
                                              Vector* grad) const {
  if (thetas.size() != log_weights.size()) throw std::invalid_argument("flow: thetas and weights differ in length");
  const double lse = log_sum_exp(log_weights);
  if (!std::isfinite(lse)) return std::nullopt;
  if (grad) *grad = Vector::Zero(params_.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < thetas.size(); ++i) {
    const double w = std::exp(log_weights[i] - lse);
    if (w == 0.0) continue;
    loss -= w * log_density_and_grad(thetas[i], grad, -w, nullptr);
  }
  return loss;
}

nlohmann::json FlowModel::to_json() const {
  nlohmann::json j;
  j["dim"] = dim_;
  j["layers"] = spec_.layers;
  j["hidden"] = spec_.hidden;
  j["clamp"] = spec_.clamp;
  j["shift"] = std::vector<double>(shift_.data(), shift_.data() + shift_.size());
  std::vector<std::vector<double>> rows;
  for (Eigen::Index r = 0; r < chol_.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(chol_.cols()));
    for (Eigen::Index c = 0; c < chol_.cols(); ++c) row[static_cast<std::size_t>(c)] = chol_(r, c);
    rows.push_back(std::move(row));
  }
  j["chol"] = rows;
  j["params"] = std::vector<double>(params_.data(), params_.data() + params_.size());
  return j;
}

FlowModel FlowModel::from_json(const nlohmann::json& j) {
  const auto dim = j.at("dim").get<std::size_t>();
  FlowSpec spec{j.at("layers").get<std::size_t>(), j.at("hidden").get<std::size_t>(), j.at("clamp").get<double>()};
  const auto shift = j.at("shift").get<std::vector<double>>();
  const auto rows = j.at("chol").get<std::vector<std::vector<double>>>();
  if (shift.size() != dim || rows.size() != dim) throw std::invalid_argument("flow json: whitening has wrong shape");
  Matrix chol(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  for (std::size_t r = 0; r < dim; ++r) {
    if (rows[r].size() != dim) throw std::invalid_argument("flow json: whitening has wrong shape");
    for (std::size_t c = 0; c < dim; ++c)
      chol(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  }
  FlowModel f(dim, spec, Eigen::Map<const Vector>(shift.data(), static_cast<Eigen::Index>(dim)), chol);
  const auto p = j.at("params").get<std::vector<double>>();
  f.set_parameters(Eigen::Map<const Vector>(p.data(), static_cast<Eigen::Index>(p.size())));
  return f;
}

void FlowModel::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write flow parameters to " + path);
  out << to_json().dump(1) << '\n';
}

FlowModel FlowModel::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read flow parameters from " + path);
  return from_json(nlohmann::json::parse(in));
}

// ---------------------------------------------------------------- training

void TrainBuffer::add(const std::vector<WeightedCandidate>& candidates) {
  for (const auto& c : candidates) add(c.point.theta, c.log_weight);
}

void TrainBuffer::add(const Vector& theta, double log_weight) {
  thetas_.push_back(theta);
  log_weights_.push_back(log_weight);
}

void TrainBuffer::clear() {
  thetas_.clear();
  log_weights_.clear();
}

std::string to_string(FlowOptimizer o) { return o == FlowOptimizer::sgd ? "sgd" : "adam"; }

FlowOptimizer parse_flow_optimizer(const std::string& name) {
  if (name == "sgd") return FlowOptimizer::sgd;
  if (name == "adam") return FlowOptimizer::adam;
  throw std::invalid_argument("unknown flow optimizer '" + name + "'");
}

FlowModel flow_train_step(const FlowModel& model, const TrainBuffer& buffer, double r, double* loss) {
  if (r < 0.0) throw std::invalid_argument("flow: learning rate must be non-negative");
  Vector grad;
  auto l = model.weighted_nll(buffer.thetas(), buffer.log_weights(), &grad);
  if (!l) {
    spdlog::warn("flow: every buffered weight is zero, skipping update");
    return model;
  }
  if (loss) *loss = *l;
  spdlog::debug("flow: loss {:.6g}", *l);
  FlowModel out = model;
  out.set_parameters(model.parameters() - r * grad);
  return out;
}

std::optional<double> FlowTrainer::step(FlowModel& model, const TrainBuffer& buffer) {
  Vector grad;
  auto l = model.weighted_nll(buffer.thetas(), buffer.log_weights(), &grad);
  if (!l) {
    spdlog::warn("flow: every buffered weight is zero, skipping update");
    return std::nullopt;
  }
  if (kind_ == FlowOptimizer::sgd) {
    model.set_parameters(model.parameters() - lr_ * grad);
    return *l;
  }
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  if (m_.size() != grad.size()) {
    m_ = Vector::Zero(grad.size());
    v_ = Vector::Zero(grad.size());
    t_ = 0;
  }
  ++t_;
  m_ = b1 * m_ + (1.0 - b1) * grad;
  v_ = b2 * v_ + (1.0 - b2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const Vector step = (m_ / c1).array() / ((v_ / c2).array().sqrt() + eps);
  model.set_parameters(model.parameters() - lr_ * step);
  return *l;
}

FlowAdaptiveIsir::FlowAdaptiveIsir(FlowModel model, std::size_t n_b, std::size_t collect_stages,
                                   FlowOptimizer optimizer, double lr)
    : model_(std::move(model)),
      buffer_(collect_stages * n_b),
      trainer_(optimizer, lr),
      n_b_(n_b),
      collect_stages_(collect_stages) {
  if (n_b == 0) throw std::invalid_argument("flow isir: batch size must be >= 1");
}

IsirResult FlowAdaptiveIsir::step(const ChainState& state, const AbcTarget& target, SeedStream& stream) {
  IsirResult res = isir_step(state, target, model_, n_b_, stream);
  const bool training = collect_stages_ > 0 && (max_updates_ == 0 || losses_.size() < max_updates_);
  if (!training) return res;
  buffer_.add(res.candidates);
  ++stage_;
  if (stage_ % collect_stages_ == 0) {
    if (auto loss = trainer_.step(model_, buffer_)) losses_.push_back(*loss);
    buffer_.clear();
  }
  return res;
}

}  // namespace glabc
