#pragma once

#include "json.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "glabc/flow.hpp"
#include "glabc/kernels.hpp"
#include "glabc/zoo.hpp"

namespace glabc {

inline constexpr const char* kVersion = "0.1.0";

/// Invalid or inconsistent configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A run that had to stop, e.g. because most simulations failed (exit code 3).
class RuntimeAbort : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FlowConfig {
  FlowSpec spec;
  double lr = 0.01;
  /// i-SIR stages between flow updates; 0 never trains.
  std::size_t collect_stages = 200;
  std::size_t max_updates = 0;
  FlowOptimizer optimizer = FlowOptimizer::sgd;
  /// Optional warm start from a saved parameter file.
  std::string init_path;
  /// Where to save the trained flow, relative to the output directory.
  std::string save_name = "flow.json";
};

/// type: "gl" (gamma mixture), "rw", "mala", "isir", "imh" or "isir_nf".
/// The single-kernel types fix gamma to 0 or 1.
struct KernelConfig {
  std::string type = "rw";
  double gamma = 0.0;
  std::size_t n_b = 1;
  std::string local = "rw";
  std::vector<double> scale;  // empty: the model's default scale
  double eta = 0.1;
  GradEstimator estimator;
  std::string proposal = "prior";
  std::string global = "isir";
  FlowConfig flow;
};

struct RunConfig {
  std::string model = "gauss1d";
  ModelParams model_params;
  KernelConfig kernel;
  std::size_t iterations = 10000;
  std::size_t burn_in = 0;
  std::size_t n_chains = 1;
  std::uint64_t seed = 1;
  /// "prior" draws each chain's start from the prior; "fixed" uses init_theta.
  std::string init = "prior";
  std::vector<double> init_theta;
  std::size_t threads = 1;
  /// Stop a chain once it has used this many simulations (0 = no limit).
  std::size_t sim_budget = 0;

  /// Throws ConfigError.
  static RunConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;
};

KernelConfig kernel_from_json(const nlohmann::json& j);
nlohmann::json kernel_to_json(const KernelConfig& k);

struct ChainTrace {
  std::vector<Vector> theta;
  std::vector<MoveType> move;
  std::vector<char> accepted;
  std::vector<std::size_t> sims;
  std::vector<double> log_weight;
  std::size_t init_sims = 0;
  double wall_seconds = 0.0;

  std::size_t size() const { return theta.size(); }
  std::size_t total_sims() const;
  /// Per move type: (accepted, proposed).
  std::pair<std::size_t, std::size_t> acceptance(MoveType m) const;
  std::vector<double> coordinate(std::size_t j, std::size_t burn_in = 0) const;
};

/// A configured sampler for one model; each call to run_chain is independent.
class Sampler {
 public:
  Sampler(RunConfig cfg, ModelInfo model);

  const RunConfig& config() const { return cfg_; }
  const ModelInfo& model() const { return model_; }
  const GlobalLocalConfig& gl_config() const { return gl_; }

  /// Runs chain `index` with stream (seed, index + 1). The callback, if set,
  /// sees every new state.
  ChainTrace run_chain(std::size_t index, const std::function<void(const ChainState&)>& on_state = {},
                       std::optional<FlowModel>* trained_flow = nullptr) const;
  ChainTrace run_chain(SeedStream stream, const std::function<void(const ChainState&)>& on_state = {},
                       std::optional<FlowModel>* trained_flow = nullptr) const;

 private:
  RunConfig cfg_;
  ModelInfo model_;
  GlobalLocalConfig gl_;
};

/// Builds the model named in the config, throwing ConfigError if unknown.
ModelInfo resolve_model(const RunConfig& cfg);

struct RunResult {
  std::vector<ChainTrace> chains;
  nlohmann::json manifest;
  std::vector<std::optional<FlowModel>> flows;
};

RunResult run(const RunConfig& cfg);
RunResult run(const RunConfig& cfg, const ModelInfo& model);

/// Writes trace_chain{k}.csv files and manifest.json into dir.
void write_run(const RunResult& result, const RunConfig& cfg, const std::string& dir);
void write_trace_csv(const ChainTrace& trace, const std::string& path);

/// Reads a trace written by write_trace_csv.
ChainTrace read_trace_csv(const std::string& path);

/// Runs `count` jobs on up to `threads` workers. Exceptions are rethrown.
void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& job);

}  // namespace glabc
