#include "glabc/zoo.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace glabc {

std::shared_ptr<const Distribution> ModelInfo::proposal(const std::string& name) const {
  auto it = proposals.find(name);
  if (it == proposals.end()) throw std::invalid_argument("model " + target->name() + " has no proposal '" + name + "'");
  return it->second;
}

// ---------------------------------------------------------------- gauss1d

namespace {
constexpr double kGaussSimNoiseVar = 0.01;
}

Gauss1dClosedForm gauss1d_closed_form(double theta, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("gauss1d_closed_form: eps must be positive");
  const double var = eps * eps + kGaussSimNoiseVar;
  const double y = 0.0;
  return {log_normal_density(y, theta, std::sqrt(var)), (y - theta) / var};
}

ModelInfo make_gauss1d(double eps) {
  auto prior = std::make_shared<DiagonalGaussian>(Vector::Zero(1), Vector::Ones(1));
  auto sim = [](const Vector& theta, SeedStream& s) {
    Vector x(1);
    x[0] = theta[0] + 0.1 * s.normal();
    return x;
  };
  auto target = std::make_shared<AbcTarget>("gauss1d", prior, sim, std::make_shared<GaussianKernel>(eps), Vector::Zero(1));
  target->set_analytic_loglik_gradient([eps](const Vector& theta) {
    Vector g(1);
    g[0] = gauss1d_closed_form(theta[0], eps).grad;
    return g;
  });

  ModelInfo info;
  info.target = target;
  info.posterior_box = {{-1.0, 1.0}};
  info.proposals["prior"] = prior;
  info.proposals["flat"] = std::make_shared<DiagonalGaussian>(Vector::Zero(1), Vector::Constant(1, 3.0));
  info.default_scale = Vector::Constant(1, 0.15);
  std::ostringstream os;
  os << "gauss1d: prior N(0,1), x = theta + 0.1 z, y = 0, Gaussian kernel eps=" << eps;
  info.provenance = os.str();
  return info;
}

// ---------------------------------------------------------------- 2d toys

namespace {

/// Prior with density N(t1; 0, s1) N(t2 - shape(t1); 0, s2) restricted to a box.
/// Sampling is by rejection from the unrestricted generative form.
class ShapedPrior final : public Distribution {
 public:
  using ShapeFn = double (*)(double);
  ShapedPrior(double sd1, double sd2, ShapeFn shape, Box box) : sd1_(sd1), sd2_(sd2), shape_(shape), box_(std::move(box)) {}

  std::size_t dim() const override { return 2; }

  double log_density(const Vector& t) const override {
    for (std::size_t j = 0; j < 2; ++j)
      if (t[static_cast<Eigen::Index>(j)] < box_[j].first || t[static_cast<Eigen::Index>(j)] > box_[j].second)
        return kNegInf;
    return log_normal_density(t[0], 0.0, sd1_) + log_normal_density(t[1] - shape_(t[0]), 0.0, sd2_);
  }

  Vector sample(SeedStream& s) const override {
    Vector t(2);
    for (;;) {
      t[0] = sd1_ * s.normal();
      t[1] = shape_(t[0]) + sd2_ * s.normal();
      if (std::isfinite(log_density(t))) return t;
    }
  }

 private:
  double sd1_;
  double sd2_;
  ShapeFn shape_;
  Box box_;
};

double moon_shape(double t1) { return -0.5 * (t1 * t1 - 1.0); }
double wave_shape(double t1) { return 2.0 * std::sin(4.0 * t1); }

Vector additive_noise_sim(const Vector& theta, SeedStream& s) {
  Vector x(theta.size());
  for (Eigen::Index j = 0; j < theta.size(); ++j) x[j] = theta[j] + 0.1 * s.normal();
  return x;
}

Vector folded_noise_sim(const Vector& theta, SeedStream& s) {
  Vector x(theta.size());
  for (Eigen::Index j = 0; j < theta.size(); ++j) x[j] = std::abs(theta[j]) + 0.1 * s.normal();
  return x;
}

// Mixture: each coordinate's ABC posterior is exactly the two-component
// mixture 0.5 N(+-m, s^2) (up to negligible mass folded across 0), so the
// joint has four modes at (+-m, +-m).
constexpr double kMixtureMode = 1.425;
constexpr double kMixtureSd = 0.28;

ModelInfo build_mixture() {
  const double s2 = kMixtureSd * kMixtureSd;
  const double tau2 = s2 / (1.0 - s2);
  const double eps = std::sqrt(tau2 - 0.01);
  const double y = kMixtureMode / (1.0 - s2);

  auto prior = std::make_shared<DiagonalGaussian>(Vector::Zero(2), Vector::Ones(2));
  auto target = std::make_shared<AbcTarget>("mixture", prior, folded_noise_sim, std::make_shared<GaussianKernel>(eps),
                                            Vector::Constant(2, y));
  ModelInfo info;
  info.target = target;
  info.posterior_box = {{-3.0, 3.0}, {-3.0, 3.0}};
  info.proposals["prior"] = prior;
  info.proposals["uniform"] = std::make_shared<UniformBox>(Vector::Constant(2, -4.0), Vector::Constant(2, 4.0));
  std::vector<Vector> centers;
  for (double a : {1.0, -1.0})
    for (double b : {1.0, -1.0}) centers.push_back((Vector(2) << a * kMixtureMode, b * kMixtureMode).finished());
  info.proposals["optimal"] = std::make_shared<IsotropicGaussianMixture>(centers, kMixtureSd);
  info.proposals["flat"] = std::make_shared<DiagonalGaussian>(Vector::Zero(2), Vector::Constant(2, 2.0));
  info.mode_centers = centers;
  info.default_scale = Vector::Constant(2, 0.1);
  std::ostringstream os;
  os << "mixture: prior N(0,I2), x = |theta| + 0.1 z, y = (" << y << "," << y << "), Gaussian kernel eps=" << eps;
  info.provenance = os.str();
  return info;
}

ModelInfo build_shaped(const std::string& name, double sd1, double sd2, ShapedPrior::ShapeFn shape, Box box,
                       Vector scale) {
  constexpr double eps = 1.0;
  auto prior = std::make_shared<ShapedPrior>(sd1, sd2, shape, box);
  auto target =
      std::make_shared<AbcTarget>(name, prior, additive_noise_sim, std::make_shared<GaussianKernel>(eps), Vector::Zero(2));
  ModelInfo info;
  info.target = target;
  info.posterior_box = box;
  info.proposals["prior"] = prior;
  Vector lo(2), hi(2);
  lo << box[0].first, box[1].first;
  hi << box[0].second, box[1].second;
  info.proposals["uniform"] = std::make_shared<UniformBox>(lo, hi);
  info.default_scale = std::move(scale);
  info.provenance = name + ": box-restricted shaped prior, x = theta + 0.1 z, y = 0, Gaussian kernel eps=1";
  return info;
}

}  // namespace

ModelInfo synthetic2d_build(const std::string& name) {
  if (name == "mixture") return build_mixture();
  if (name == "moon")
    return build_shaped("moon", 1.0, 0.5, moon_shape, {{-2.0, 2.0}, {-5.0, 1.0}}, Vector::Constant(2, 0.25));
  if (name == "wave")
    return build_shaped("wave", 0.25, 0.5, wave_shape, {{-1.0, 1.0}, {-4.0, 4.0}}, (Vector(2) << 0.05, 0.2).finished());
  throw std::invalid_argument("unknown synthetic model '" + name + "'");
}

// ---------------------------------------------------------------- Van der Pol

namespace {

struct VdpState {
  double x, v, c1, w1, c2, w2;
};

inline VdpState vdp_drift(const VdpState& s, double eps, double mu, double om1sq, double om2sq) {
  return {s.v, mu * (1.0 - eps * s.x * s.x) * s.v - s.x + s.c1 + s.c2, s.w1, -om1sq * s.c1, s.w2, -om2sq * s.c2};
}

std::size_t steps_per_obs(const VdpSettings& st) {
  if (!(st.h > 0.0) || !(st.dt_obs > 0.0) || !(st.t_end > 0.0)) throw std::invalid_argument("vdp: bad time grid");
  const double r = st.dt_obs / st.h;
  const double n = std::round(r);
  if (n < 1.0 || std::abs(r - n) > 1e-9 * r) throw std::invalid_argument("vdp: substep h must divide dt_obs");
  return static_cast<std::size_t>(n);
}

std::size_t n_obs(const VdpSettings& st) {
  return static_cast<std::size_t>(std::floor(st.t_end / st.dt_obs + 1e-9));
}

// Stochastic Heun for additive noise: x~ = x + f(x)h + g dW,
// x' = x + (f(x) + f(x~)) h/2 + g dW.
template <bool Noisy>
Vector integrate(const Vector& theta, SeedStream* stream, const VdpSettings& st, bool observe_noise) {
  if (theta.size() != 5) throw std::invalid_argument("vdp: theta must have 5 components");
  const double eps = theta[0], mu = theta[1], sigma = theta[2], omega = theta[3], sigma_c = theta[4];
  const double om1sq = omega * omega, om2sq = 4.0 * omega * omega;
  const std::size_t sub = steps_per_obs(st);
  const std::size_t nobs = n_obs(st);
  const double h = st.h;
  const double sqh = std::sqrt(h);
  const auto& i0 = st.initial_state;
  VdpState s{i0[0], i0[1], i0[2], i0[3], i0[4], i0[5]};
  Vector out(static_cast<Eigen::Index>(nobs));
  for (std::size_t k = 0; k < nobs; ++k) {
    for (std::size_t i = 0; i < sub; ++i) {
      double dw1 = 0.0, dw2 = 0.0;
      if constexpr (Noisy) {
        dw1 = sigma_c * sqh * stream->normal();
        dw2 = sigma_c * sqh * stream->normal();
      }
      const VdpState f0 = vdp_drift(s, eps, mu, om1sq, om2sq);
      const VdpState p{s.x + h * f0.x,         s.v + h * f0.v,  s.c1 + h * f0.c1,
                       s.w1 + h * f0.w1 + dw1, s.c2 + h * f0.c2, s.w2 + h * f0.w2 + dw2};
      const VdpState f1 = vdp_drift(p, eps, mu, om1sq, om2sq);
      const double hh = 0.5 * h;
      s.x += hh * (f0.x + f1.x);
      s.v += hh * (f0.v + f1.v);
      s.c1 += hh * (f0.c1 + f1.c1);
      s.w1 += hh * (f0.w1 + f1.w1) + dw1;
      s.c2 += hh * (f0.c2 + f1.c2);
      s.w2 += hh * (f0.w2 + f1.w2) + dw2;
    }
    const double mag = std::max({std::abs(s.x), std::abs(s.v), std::abs(s.c1), std::abs(s.w1), std::abs(s.c2), std::abs(s.w2)});
    if (!(mag <= 1e8)) throw SimulationFailure("van der pol state exceeded 1e8");
    double obs = s.x;
    if (observe_noise) obs += sigma * stream->normal();
    out[static_cast<Eigen::Index>(k)] = obs;
  }
  return out;
}

}  // namespace

Vector vdp_simulate(const Vector& theta, SeedStream& stream, const VdpSettings& settings) {
  if (theta.size() == 5 && theta[4] == 0.0) return integrate<false>(theta, &stream, settings, true);
  return integrate<true>(theta, &stream, settings, true);
}

Vector vdp_latent_path(const Vector& theta, const VdpSettings& settings) {
  return integrate<false>(theta, nullptr, settings, false);
}

Vector vdp_true_theta() {
  Vector t(5);
  t << 1.0, 0.5, 0.1, std::numbers::pi / 5.0, 0.01;
  return t;
}

Vector vdp_observed(const VdpSettings& settings) {
  SeedStream s(settings.observed_seed, 0);
  return vdp_simulate(vdp_true_theta(), s, settings);
}

std::vector<double> vdp_times(const VdpSettings& settings) {
  const std::size_t n = n_obs(settings);
  std::vector<double> t(n);
  for (std::size_t k = 0; k < n; ++k) t[k] = static_cast<double>(k + 1) * settings.dt_obs;
  return t;
}

void write_vdp_csv(const Vector& y, const std::string& path, const VdpSettings& settings) {
  const auto t = vdp_times(settings);
  if (t.size() != static_cast<std::size_t>(y.size())) throw std::invalid_argument("write_vdp_csv: length mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "t,y\n";
  char buf[64];
  for (std::size_t k = 0; k < t.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", t[k], y[static_cast<Eigen::Index>(k)]);
    out << buf;
  }
}

Vector read_vdp_csv(const std::string& path, const VdpSettings& settings) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("t,y", 0) != 0) throw std::runtime_error(path + ": expected header t,y");
  const auto t = vdp_times(settings);
  std::vector<double> y;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw std::runtime_error(path + ": malformed row '" + line + "'");
    const double tk = std::stod(line.substr(0, comma));
    if (y.size() >= t.size() || std::abs(tk - t[y.size()]) > 1e-9)
      throw std::runtime_error(path + ": time column does not match the observation grid");
    y.push_back(std::stod(line.substr(comma + 1)));
  }
  if (y.size() != t.size()) throw std::runtime_error(path + ": expected " + std::to_string(t.size()) + " rows");
  return Eigen::Map<const Vector>(y.data(), static_cast<Eigen::Index>(y.size()));
}

ModelInfo vdp_target(const VdpSettings& settings) { return vdp_target(settings, vdp_observed(settings)); }

ModelInfo vdp_target(const VdpSettings& settings, Vector observed) {
  Vector shape(5), rate(5);
  shape << 5.0, 3.0, 5.0, 5.0, 2.0;
  rate << 1.0, 5.0, 15.0, 10.0, 15.0;
  auto prior = std::make_shared<ProductGamma>(shape, rate);
  auto sim = [settings](const Vector& theta, SeedStream& s) { return vdp_simulate(theta, s, settings); };
  auto target = std::make_shared<AbcTarget>("vdp", prior, sim, std::make_shared<GaussianKernel>(settings.kernel_eps),
                                            std::move(observed));
  ModelInfo info;
  info.target = target;
  info.posterior_box = {{0.0, 12.0}, {0.0, 1.5}, {0.0, 1.0}, {0.0, 1.5}, {0.0, 0.5}};
  info.proposals["prior"] = prior;
  // Same means as the prior, variances inflated by the factor below.
  constexpr double kFlatten = 3.0;
  info.proposals["flat"] = std::make_shared<ProductGamma>(shape / kFlatten, rate / kFlatten);
  info.default_scale = (Vector(5) << 0.05, 0.02, 0.005, 0.002, 0.003).finished();
  std::ostringstream os;
  os << "vdp: Gamma shape-rate priors, stochastic Heun h=" << settings.h << ", observations at t=" << settings.dt_obs
     << ".." << settings.t_end << ", initial state (" << settings.initial_state[0];
  for (std::size_t i = 1; i < 6; ++i) os << "," << settings.initial_state[i];
  os << "), observed seed " << settings.observed_seed << ", Gaussian kernel eps=" << settings.kernel_eps;
  info.provenance = os.str();
  return info;
}

// ---------------------------------------------------------------- registry

namespace {

double param_or(const ModelParams& p, const std::string& key, double fallback) {
  auto it = p.find(key);
  return it == p.end() ? fallback : it->second;
}

struct Registry {
  std::mutex mu;
  std::map<std::string, ModelFactory> factories;

  Registry() {
    factories["gauss1d"] = [](const ModelParams& p) { return make_gauss1d(param_or(p, "eps", 0.1)); };
    for (const char* n : {"mixture", "moon", "wave"}) {
      std::string name = n;
      factories[name] = [name](const ModelParams&) { return synthetic2d_build(name); };
    }
    factories["vdp"] = [](const ModelParams& p) {
      VdpSettings st;
      st.h = param_or(p, "h", st.h);
      st.kernel_eps = param_or(p, "eps", st.kernel_eps);
      return vdp_target(st);
    };
  }
};

Registry& registry() {
  static Registry r;
  return r;
}

}  // namespace

void register_model(const std::string& name, ModelFactory factory) {
  auto& r = registry();
  std::lock_guard lock(r.mu);
  r.factories[name] = std::move(factory);
}

ModelInfo make_model(const std::string& name, const ModelParams& params) {
  ModelFactory f;
  {
    auto& r = registry();
    std::lock_guard lock(r.mu);
    auto it = r.factories.find(name);
    if (it == r.factories.end()) throw std::invalid_argument("unknown model '" + name + "'");
    f = it->second;
  }
  return f(params);
}

std::vector<std::string> model_names() {
  auto& r = registry();
  std::lock_guard lock(r.mu);
  std::vector<std::string> names;
  for (const auto& [k, v] : r.factories) names.push_back(k);
  return names;
}

}  // namespace glabc
