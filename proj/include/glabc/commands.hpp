#pragma once

#include "json.hpp"

#include <optional>
#include <string>
#include <vector>

#include "glabc/diag.hpp"
#include "glabc/grad.hpp"
#include "glabc/run.hpp"
#include "glabc/tune.hpp"

namespace glabc {

/// Overrides the CLI applies on top of the JSON document.
struct CommandOptions {
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
};

/// Parses the document and applies --seed / --threads.
RunConfig load_run_config(const nlohmann::json& doc, const CommandOptions& opt);
nlohmann::json read_json_file(const std::string& path);

// ---------------------------------------------------------------- run

nlohmann::json run_command(const nlohmann::json& doc, const CommandOptions& opt);

// ---------------------------------------------------------------- tune

struct TuneSetup {
  TuneSpace space;
  /// Iterations per candidate run (after burn_in).
  std::size_t iterations = 2000;
  std::size_t burn_in = 0;
  /// Short runs per candidate; esjd, cost and cesjd are averaged.
  std::size_t replicates = 1;
};

TuneSetup tune_setup_from_json(const nlohmann::json& j);

/// Applies a candidate (gamma, n_b, eta, scale) to a base config. "scale"
/// multiplies the base random-walk scale.
RunConfig apply_tune_point(const RunConfig& base, const ModelInfo& model, const TunePoint& point);

/// One short chain at the candidate; cost is the measured mean number of
/// simulations per iteration.
EsjdEstimate evaluate_tune_point(const RunConfig& base, const ModelInfo& model, const TuneSetup& setup,
                                 const TunePoint& point, SeedStream& stream);

TuneReport tune(const RunConfig& base, const ModelInfo& model, const TuneSetup& setup, SeedStream& stream);
void write_tune_report(const TuneReport& report, const TuneSpace& space, const std::string& path);
TuneReport tune_command(const nlohmann::json& doc, const CommandOptions& opt);

// ---------------------------------------------------------------- reference

struct ReferenceSetup {
  std::string method = "is";  // "is" or "mcmc"
  std::size_t n_prior = 1000000;
  std::size_t n_keep = 100000;
  std::size_t grid = 501;
  std::optional<DensityKind> kind;  // default: joint for p <= 2
  std::vector<double> bandwidth;
  std::string file = "reference.bin";
};

ReferenceSetup reference_setup_from_json(const nlohmann::json& j);
DensityKind default_density_kind(std::size_t p);
ReferencePosterior reference_command(const nlohmann::json& doc, const CommandOptions& opt);

// ---------------------------------------------------------------- bench

struct BenchRow {
  std::string method;
  std::size_t budget = 0;
  std::size_t replicate = 0;
  double kl = 0.0;
};

/// Samples from the states whose cumulative simulation count (initial
/// simulation excluded) stays within `budget`, after dropping a leading
/// fraction.
std::vector<Vector> trace_prefix(const ChainTrace& trace, std::size_t budget, double burn_fraction = 0.0);

/// Grid KL of a KDE of the samples against the reference, on the reference
/// grid. An empty bandwidth reuses the reference's own.
double kl_to_reference(const std::vector<Vector>& samples, const ReferencePosterior& ref,
                       const std::vector<double>& bandwidth = {});

std::vector<BenchRow> bench_command(const nlohmann::json& doc, const CommandOptions& opt);
void write_bench_csv(const std::vector<BenchRow>& rows, const std::string& path);

// ---------------------------------------------------------------- diagnose

nlohmann::json diagnose_command(const nlohmann::json& doc, const CommandOptions& opt);

// ---------------------------------------------------------------- grad-bench

struct GradBenchRow {
  double theta = 0.0;
  std::string method;
  double mean = 0.0;
  double sd = 0.0;
  double lower = 0.0;  // mean - 2 sd
  double upper = 0.0;
  std::optional<double> analytic;
};

struct GradBenchSetup {
  std::vector<GradMethod> methods{GradMethod::mc_random, GradMethod::crn_max, GradMethod::crn_mean,
                                  GradMethod::gaussian_crn};
  std::size_t S = 100;
  double d_theta = 0.05;
  std::size_t replications = 1000;
  double lower = -1.0;
  double upper = 1.0;
  std::size_t n_grid = 21;
  /// Coordinate varied along the grid; the others stay at `base`.
  std::size_t coordinate = 0;
  std::vector<double> base;
};

GradBenchSetup grad_bench_setup_from_json(const nlohmann::json& j);

/// Replications at each grid point; replication r at grid point g uses the
/// stream (seed, (g + 1) * 2^20 + r) for every method.
std::vector<GradBenchRow> grad_bench(const ModelInfo& model, const GradBenchSetup& setup, std::uint64_t seed,
                                     std::size_t threads);
void write_grad_bench_csv(const std::vector<GradBenchRow>& rows, const std::string& path);
std::vector<GradBenchRow> grad_bench_command(const nlohmann::json& doc, const CommandOptions& opt);

}  // namespace glabc
