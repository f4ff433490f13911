#pragma once

#include <array>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "glabc/model.hpp"

namespace glabc {

using Box = std::vector<std::pair<double, double>>;
using ModelParams = std::map<std::string, double>;

/// A target plus the metadata benchmarks need: the posterior box used for
/// density grids, named importance proposals, a default random-walk scale
/// and (for multimodal toys) the mode centres.
struct ModelInfo {
  std::shared_ptr<const AbcTarget> target;
  Box posterior_box;
  std::map<std::string, std::shared_ptr<const Distribution>> proposals;
  Vector default_scale;
  std::vector<Vector> mode_centers;
  std::string provenance;

  std::shared_ptr<const Distribution> proposal(const std::string& name) const;
};

// ---------------------------------------------------------------- gauss1d

struct Gauss1dClosedForm {
  double loglik;
  double grad;
};

/// log N(0; theta, eps^2 + 0.01) and its theta-derivative.
Gauss1dClosedForm gauss1d_closed_form(double theta, double eps);

/// Prior N(0, 1), x = theta + 0.1 z, y = 0, Gaussian kernel.
ModelInfo make_gauss1d(double eps = 0.1);

// ---------------------------------------------------------------- 2d toys

/// name in {"mixture", "moon", "wave"}. Throws std::invalid_argument otherwise.
ModelInfo synthetic2d_build(const std::string& name);

// ---------------------------------------------------------------- Van der Pol

struct VdpSettings {
  double h = 0.01;
  double t_end = 40.0;
  double dt_obs = 1.0;
  /// (x, xdot, c1, c1dot, c2, c2dot)
  std::array<double, 6> initial_state{1.0, 0.0, 0.01, 0.0, 0.01, 0.0};
  double kernel_eps = 0.15;
  std::uint64_t observed_seed = 20240521;
};

/// Parameter order of the Van der Pol model.
inline constexpr std::array<const char*, 5> kVdpParamNames{"eps_vdp", "mu", "sigma", "omega_c", "sigma_c"};

/// Observations x(t_k) + sigma r_k at t_k = dt_obs, 2 dt_obs, ..., t_end from a
/// stochastic Heun integration of the 6-state forced oscillator.
/// Throws SimulationFailure if the state magnitude exceeds 1e8.
Vector vdp_simulate(const Vector& theta, SeedStream& stream, const VdpSettings& settings = {});

/// Noise-free latent path x(t) on the observation grid (sigma, sigma_c ignored).
Vector vdp_latent_path(const Vector& theta, const VdpSettings& settings = {});

Vector vdp_true_theta();

/// Observed series regenerated from the pinned seed at the true parameters.
Vector vdp_observed(const VdpSettings& settings = {});

/// Observation times dt_obs, 2 dt_obs, ..., t_end.
std::vector<double> vdp_times(const VdpSettings& settings = {});
/// CSV with header "t,y", one row per observation.
void write_vdp_csv(const Vector& y, const std::string& path, const VdpSettings& settings = {});
/// Reads the y column; the t column must match the settings' grid.
Vector read_vdp_csv(const std::string& path, const VdpSettings& settings = {});
ModelInfo vdp_target(const VdpSettings& settings = {});
ModelInfo vdp_target(const VdpSettings& settings, Vector observed);

// ---------------------------------------------------------------- registry

using ModelFactory = std::function<ModelInfo(const ModelParams&)>;

/// Registers a model under `name`, replacing any existing entry.
void register_model(const std::string& name, ModelFactory factory);
/// Throws std::invalid_argument for unknown names.
ModelInfo make_model(const std::string& name, const ModelParams& params = {});
std::vector<std::string> model_names();

}  // namespace glabc
