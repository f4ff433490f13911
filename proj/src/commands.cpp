#include "glabc/commands.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <set>

namespace glabc {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
}

const json& section(const json& doc, const char* name) {
  static const json empty = json::object();
  return doc.contains(name) ? doc.at(name) : empty;
}

std::string g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string path_in(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

std::ofstream open_out(const std::string& path) {
  if (auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

Vector to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

DensityKind parse_kind(const std::string& s) {
  if (s == "joint") return DensityKind::joint;
  if (s == "marginals") return DensityKind::marginals;
  throw ConfigError("density kind must be 'joint' or 'marginals'");
}

}  // namespace

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
}

RunConfig load_run_config(const json& doc, const CommandOptions& opt) {
  json j = doc;
  if (opt.seed) j["seed"] = *opt.seed;
  if (opt.threads) j["threads"] = *opt.threads;
  return RunConfig::from_json(j);
}

// ---------------------------------------------------------------- run

json run_command(const json& doc, const CommandOptions& opt) {
  const RunConfig cfg = load_run_config(doc, opt);
  const ModelInfo model = resolve_model(cfg);
  spdlog::info("run: model {} kernel {} with {} chain(s) of {} iterations", cfg.model, cfg.kernel.type, cfg.n_chains,
               cfg.iterations);
  RunResult res = run(cfg, model);
  write_run(res, cfg, opt.out_dir);
  spdlog::info("run: {} simulations in {:.2f}s, written to {}", res.manifest["total_sims"].get<std::size_t>(),
               res.manifest["wall_clock_seconds"].get<double>(), opt.out_dir);
  return res.manifest;
}

// ---------------------------------------------------------------- tune

TuneSetup tune_setup_from_json(const json& j) {
  check_keys(j, {"dims", "budget", "rounds", "shrink", "constraint", "iterations", "burn_in", "replicates"}, "tune");
  TuneSetup s;
  if (!j.contains("dims") || !j.at("dims").is_array() || j.at("dims").empty())
    throw ConfigError("tune needs a non-empty 'dims' array");
  for (const auto& d : j.at("dims")) {
    check_keys(d, {"name", "lower", "upper", "log", "integer"}, "tune.dims entry");
    TuneDim td;
    td.name = get_or<std::string>(d, "name", "");
    if (td.name != "gamma" && td.name != "n_b" && td.name != "eta" && td.name != "scale")
      throw ConfigError("tune dimension '" + td.name + "' is not one of gamma, n_b, eta, scale");
    td.lower = get_or<double>(d, "lower", td.lower);
    td.upper = get_or<double>(d, "upper", td.upper);
    td.log_scale = get_or<bool>(d, "log", false);
    td.integer = get_or<bool>(d, "integer", td.name == "n_b");
    s.space.dims.push_back(td);
  }
  s.space.budget = get_or<std::size_t>(j, "budget", s.space.budget);
  s.space.rounds = get_or<std::size_t>(j, "rounds", s.space.rounds);
  s.space.shrink = get_or<double>(j, "shrink", s.space.shrink);
  if (j.contains("constraint")) {
    const json& c = j.at("constraint");
    check_keys(c, {"target_cost", "gamma_dim", "batch_dim"}, "tune.constraint");
    CostConstraint cc;
    cc.target_cost = get_or<double>(c, "target_cost", cc.target_cost);
    cc.gamma_dim = get_or<std::string>(c, "gamma_dim", cc.gamma_dim);
    cc.batch_dim = get_or<std::string>(c, "batch_dim", cc.batch_dim);
    s.space.constraint = cc;
  }
  s.iterations = get_or<std::size_t>(j, "iterations", s.iterations);
  s.burn_in = get_or<std::size_t>(j, "burn_in", s.burn_in);
  s.replicates = get_or<std::size_t>(j, "replicates", s.replicates);
  if (s.replicates == 0) throw ConfigError("tune replicates must be positive");
  try {
    s.space.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (s.iterations < 2) throw ConfigError("tune iterations must be at least 2");
  return s;
}

RunConfig apply_tune_point(const RunConfig& base, const ModelInfo& model, const TunePoint& point) {
  RunConfig c = base;
  KernelConfig& k = c.kernel;
  for (const auto& [name, v] : point) {
    if (name == "gamma") {
      if (k.type != "gl" && k.type != "isir_nf") throw ConfigError("tuning gamma needs kernel type 'gl' or 'isir_nf'");
      k.gamma = v;
    } else if (name == "n_b") {
      k.n_b = static_cast<std::size_t>(std::llround(v));
    } else if (name == "eta") {
      k.eta = v;
    } else if (name == "scale") {
      std::vector<double> s;
      if (k.scale.empty()) {
        for (Eigen::Index i = 0; i < model.default_scale.size(); ++i) s.push_back(model.default_scale[i] * v);
      } else {
        for (double x : k.scale) s.push_back(x * v);
      }
      k.scale = s;
    }
  }
  return c;
}

EsjdEstimate evaluate_tune_point(const RunConfig& base, const ModelInfo& model, const TuneSetup& setup,
                                 const TunePoint& point, SeedStream& stream) {
  RunConfig c = apply_tune_point(base, model, point);
  c.iterations = setup.iterations + setup.burn_in;
  c.burn_in = setup.burn_in;
  c.n_chains = 1;
  c.sim_budget = 0;
  const Sampler sampler(c, model);
  EsjdEstimate avg;
  avg.cost_per_iter = 0.0;
  for (std::size_t r = 0; r < setup.replicates; ++r) {
    const ChainTrace t = sampler.run_chain(stream.split());
    std::vector<Vector> kept(t.theta.begin() + static_cast<std::ptrdiff_t>(setup.burn_in), t.theta.end());
    std::size_t sims = 0;
    for (std::size_t i = setup.burn_in; i < t.size(); ++i) sims += t.sims[i];
    const EsjdEstimate e = cesjd(kept, static_cast<double>(sims) / static_cast<double>(kept.size()));
    avg.esjd += e.esjd;
    avg.cost_per_iter += e.cost_per_iter;
    avg.cesjd += e.cesjd;
    avg.n_iters += e.n_iters;
    avg.p = e.p;
  }
  const auto n = static_cast<double>(setup.replicates);
  avg.esjd /= n;
  avg.cost_per_iter /= n;
  avg.cesjd /= n;
  return avg;
}

TuneReport tune(const RunConfig& base, const ModelInfo& model, const TuneSetup& setup, SeedStream& stream) {
  return sequential_tune(
      setup.space,
      [&](const TunePoint& pt, SeedStream& s) { return evaluate_tune_point(base, model, setup, pt, s); }, stream);
}

void write_tune_report(const TuneReport& report, const TuneSpace& space, const std::string& path) {
  std::ofstream out = open_out(path);
  out << "candidate,round";
  for (const auto& d : space.dims) out << ',' << d.name;
  out << ",esjd,cost,cesjd,incumbent\n";
  for (std::size_t i = 0; i < report.evaluations.size(); ++i) {
    const auto& e = report.evaluations[i];
    out << i << ',' << (e.round + 1);
    for (const auto& d : space.dims) out << ',' << g17(e.point.at(d.name));
    out << ',' << g17(e.esjd) << ',' << g17(e.cost) << ',' << g17(e.cesjd) << ','
        << (i == report.best_index ? 1 : 0) << '\n';
  }
}

TuneReport tune_command(const json& doc, const CommandOptions& opt) {
  if (!doc.contains("tune")) throw ConfigError("tune needs a 'tune' section in the config");
  const RunConfig base = load_run_config(doc, opt);
  const ModelInfo model = resolve_model(base);
  const TuneSetup setup = tune_setup_from_json(doc.at("tune"));
  SeedStream stream(base.seed, 0x7475'6e65);
  const TuneReport report = tune(base, model, setup, stream);
  write_tune_report(report, setup.space, path_in(opt.out_dir, "tune_report.csv"));

  json best = json::object();
  for (const auto& [k, v] : report.best) best[k] = v;
  const auto& inc = report.evaluations[report.best_index];
  json summary = {{"best", best},
                  {"cesjd", inc.cesjd},
                  {"esjd", inc.esjd},
                  {"cost", inc.cost},
                  {"config", base.to_json()},
                  {"glabc_version", kVersion}};
  std::ofstream out = open_out(path_in(opt.out_dir, "tune_best.json"));
  out << summary.dump(2) << '\n';
  std::cout << "incumbent:";
  for (const auto& [k, v] : report.best) std::cout << ' ' << k << '=' << v;
  std::cout << " cesjd=" << inc.cesjd << '\n';
  return report;
}

// ---------------------------------------------------------------- reference

DensityKind default_density_kind(std::size_t p) { return p <= 2 ? DensityKind::joint : DensityKind::marginals; }

ReferenceSetup reference_setup_from_json(const json& j) {
  check_keys(j, {"method", "n_prior", "n_keep", "grid", "kind", "bandwidth", "file"}, "reference");
  ReferenceSetup s;
  s.method = get_or<std::string>(j, "method", s.method);
  if (s.method != "is" && s.method != "mcmc") throw ConfigError("reference method must be 'is' or 'mcmc'");
  s.n_prior = get_or<std::size_t>(j, "n_prior", s.n_prior);
  s.n_keep = get_or<std::size_t>(j, "n_keep", s.n_keep);
  s.grid = get_or<std::size_t>(j, "grid", s.grid);
  if (j.contains("kind")) s.kind = parse_kind(j.at("kind").get<std::string>());
  s.bandwidth = get_or<std::vector<double>>(j, "bandwidth", {});
  s.file = get_or<std::string>(j, "file", s.file);
  if (s.grid < 2) throw ConfigError("reference grid needs at least 2 points per axis");
  if (s.n_keep < 100) throw ConfigError("reference n_keep must be at least 100");
  return s;
}

ReferencePosterior reference_command(const json& doc, const CommandOptions& opt) {
  const RunConfig cfg = load_run_config(doc, opt);
  const ModelInfo model = resolve_model(cfg);
  const ReferenceSetup setup = reference_setup_from_json(section(doc, "reference"));
  const std::size_t p = model.target->dim();
  const DensityKind kind = setup.kind.value_or(default_density_kind(p));
  KdeSpec spec{axes_from_box(model.posterior_box, setup.grid), setup.bandwidth};

  ReferencePosterior ref;
  json info = {{"model", cfg.model}, {"method", setup.method}, {"seed", cfg.seed}, {"grid", setup.grid}};
  if (setup.method == "is") {
    SeedStream stream(cfg.seed, 0x7265'6673);
    IsReferenceInfo is;
    ref = reference_by_is(*model.target, setup.n_prior, setup.n_keep, spec, stream, kind, &is);
    info["n_prior"] = is.n_prior;
    info["n_keep"] = is.n_keep;
    info["weight_ess"] = is.weight_ess;
  } else {
    const RunResult res = run(cfg, model);
    std::vector<Vector> pooled;
    for (const auto& t : res.chains)
      for (std::size_t i = cfg.burn_in; i < t.size(); ++i) pooled.push_back(t.theta[i]);
    ref.density = kde(pooled, spec, kind);
    ref.bandwidth = kde_bandwidth(pooled, spec, p);
    ref.provenance = "glabc " + std::string(kVersion) + " mcmc reference: model " + cfg.model + ", kernel " +
                     cfg.kernel.type + ", " + std::to_string(cfg.n_chains) + " chains x " +
                     std::to_string(cfg.iterations) + " iterations (burn-in " + std::to_string(cfg.burn_in) +
                     "), seed " + std::to_string(cfg.seed) + ", " + std::to_string(pooled.size()) + " samples";
    info["samples"] = pooled.size();
    info["total_sims"] = res.manifest["total_sims"];
    info["chains"] = res.manifest["chains"];
  }
  ref.provenance += "; " + model.provenance;
  const std::string file = path_in(opt.out_dir, setup.file);
  fs::create_directories(opt.out_dir);
  save_reference(ref, file);
  info["file"] = file;
  info["provenance"] = ref.provenance;
  info["bandwidth"] = ref.bandwidth;
  info["config"] = cfg.to_json();
  std::ofstream out = open_out(path_in(opt.out_dir, "reference.json"));
  out << info.dump(2) << '\n';
  spdlog::info("reference written to {}", file);
  return ref;
}

// ---------------------------------------------------------------- bench

std::vector<Vector> trace_prefix(const ChainTrace& trace, std::size_t budget, double burn_fraction) {
  std::size_t used = 0, end = 0;
  while (end < trace.size() && used + trace.sims[end] <= budget) used += trace.sims[end++];
  const auto start = static_cast<std::size_t>(std::floor(burn_fraction * static_cast<double>(end)));
  return std::vector<Vector>(trace.theta.begin() + static_cast<std::ptrdiff_t>(start),
                             trace.theta.begin() + static_cast<std::ptrdiff_t>(end));
}

double kl_to_reference(const std::vector<Vector>& samples, const ReferencePosterior& ref,
                       const std::vector<double>& bandwidth) {
  const KdeSpec spec{ref.density.axes, bandwidth.empty() ? ref.bandwidth : bandwidth};
  return grid_kl(ref.density, kde(samples, spec, ref.density.kind));
}

void write_bench_csv(const std::vector<BenchRow>& rows, const std::string& path) {
  std::ofstream out = open_out(path);
  out << "method,budget,replicate,kl\n";
  for (const auto& r : rows) out << r.method << ',' << r.budget << ',' << r.replicate << ',' << g17(r.kl) << '\n';
}

std::vector<BenchRow> bench_command(const json& doc, const CommandOptions& opt) {
  if (!doc.contains("bench")) throw ConfigError("bench needs a 'bench' section in the config");
  const json& b = doc.at("bench");
  check_keys(b, {"reference", "budgets", "replicates", "burn_fraction", "bandwidth", "methods"}, "bench");
  const std::string ref_path = get_or<std::string>(b, "reference", path_in(opt.out_dir, "reference.bin"));
  if (!fs::exists(ref_path))
    throw ConfigError("reference file '" + ref_path + "' not found; run `glabc reference` first");
  const ReferencePosterior ref = load_reference(ref_path);

  auto budgets = get_or<std::vector<std::size_t>>(b, "budgets", {});
  if (budgets.empty()) throw ConfigError("bench needs a non-empty 'budgets' list");
  std::sort(budgets.begin(), budgets.end());
  const auto replicates = get_or<std::size_t>(b, "replicates", 10);
  const double burn = get_or<double>(b, "burn_fraction", 0.0);
  const auto bandwidth = get_or<std::vector<double>>(b, "bandwidth", {});
  if (replicates == 0) throw ConfigError("bench replicates must be positive");
  if (!(burn >= 0.0 && burn < 1.0)) throw ConfigError("bench burn_fraction must lie in [0, 1)");
  if (!b.contains("methods") || !b.at("methods").is_array() || b.at("methods").empty())
    throw ConfigError("bench needs a non-empty 'methods' array");

  json base_doc = doc;
  base_doc.erase("bench");
  RunConfig base = load_run_config(base_doc, opt);
  const ModelInfo model = resolve_model(base);
  if (ref.density.axes.size() != model.target->dim())
    throw ConfigError("reference dimension does not match model '" + base.model + "'");

  struct Method {
    std::string name;
    RunConfig cfg;
  };
  std::vector<Method> methods;
  for (const auto& m : b.at("methods")) {
    check_keys(m, {"name", "kernel"}, "bench.methods entry");
    Method mm{get_or<std::string>(m, "name", ""), base};
    if (mm.name.empty()) throw ConfigError("every bench method needs a name");
    if (m.contains("kernel")) mm.cfg.kernel = kernel_from_json(m.at("kernel"));
    mm.cfg.iterations = budgets.back();
    mm.cfg.burn_in = 0;
    mm.cfg.sim_budget = budgets.back();
    mm.cfg.validate();
    methods.push_back(std::move(mm));
  }

  std::vector<BenchRow> rows;
  for (auto bud : budgets) rows.push_back({"reference", bud, 0, grid_kl(ref.density, ref.density)});
  std::vector<std::vector<BenchRow>> jobs(methods.size() * replicates);
  parallel_for(jobs.size(), base.threads, [&](std::size_t job) {
    const std::size_t m = job / replicates, r = job % replicates;
    const Sampler sampler(methods[m].cfg, model);
    // Replicate r uses the same stream for every method.
    const ChainTrace t = sampler.run_chain(r);
    for (auto bud : budgets) {
      const auto samples = trace_prefix(t, bud, burn);
      double kl = std::numeric_limits<double>::quiet_NaN();
      try {
        kl = kl_to_reference(samples, ref, bandwidth);
      } catch (const std::invalid_argument& e) {
        spdlog::warn("bench {} replicate {} budget {}: {}", methods[m].name, r, bud, e.what());
      }
      jobs[job].push_back({methods[m].name, bud, r, kl});
    }
    spdlog::info("bench {} replicate {} done in {:.1f}s", methods[m].name, r, t.wall_seconds);
  });
  for (std::size_t bi = 0; bi < budgets.size(); ++bi)
    for (const auto& j : jobs) rows.push_back(j[bi]);
  write_bench_csv(rows, path_in(opt.out_dir, "bench.csv"));
  return rows;
}

// ---------------------------------------------------------------- diagnose

json diagnose_command(const json& doc, const CommandOptions& opt) {
  const json& d = section(doc, "diagnose");
  check_keys(d, {"run_dir", "reference", "burn_in", "mode_radius", "bandwidth"}, "diagnose");
  const std::string dir = get_or<std::string>(d, "run_dir", opt.out_dir);
  const std::string manifest_path = path_in(dir, "manifest.json");
  std::size_t burn_in = 0;
  if (fs::exists(manifest_path)) {
    std::ifstream in(manifest_path);
    const json m = json::parse(in, nullptr, false);
    if (!m.is_discarded() && m.contains("config")) burn_in = m["config"].value("burn_in", std::size_t{0});
  }
  burn_in = get_or<std::size_t>(d, "burn_in", burn_in);

  std::vector<ChainTrace> traces;
  for (std::size_t c = 0;; ++c) {
    const std::string p = path_in(dir, "trace_chain" + std::to_string(c) + ".csv");
    if (!fs::exists(p)) break;
    traces.push_back(read_trace_csv(p));
  }
  if (traces.empty()) throw ConfigError("no trace_chain*.csv files in '" + dir + "'; run `glabc run` first");

  std::optional<ModelInfo> model;
  if (doc.contains("model")) model = resolve_model(load_run_config(doc, opt));
  std::optional<ReferencePosterior> ref;
  if (d.contains("reference")) {
    const std::string rp = d.at("reference").get<std::string>();
    if (!fs::exists(rp)) throw ConfigError("reference file '" + rp + "' not found; run `glabc reference` first");
    ref = load_reference(rp);
  }
  const double radius = get_or<double>(d, "mode_radius", 1.0);
  const auto bandwidth = get_or<std::vector<double>>(d, "bandwidth", {});

  std::ofstream csv = open_out(path_in(opt.out_dir, "diagnose.csv"));
  csv << "chain,parameter,mean,sd,ess\n";
  json out;
  out["run_dir"] = dir;
  out["burn_in"] = burn_in;
  json chains = json::array();
  for (std::size_t c = 0; c < traces.size(); ++c) {
    const ChainTrace& t = traces[c];
    if (burn_in + 10 > t.size()) throw ConfigError("trace " + std::to_string(c) + " is too short after burn-in");
    const std::size_t p = static_cast<std::size_t>(t.theta.front().size());
    json cj;
    cj["chain"] = c;
    cj["iterations"] = t.size();
    cj["total_sims"] = t.total_sims();
    json ess_j = json::array();
    for (std::size_t j = 0; j < p; ++j) {
      const auto x = t.coordinate(j, burn_in);
      double mean = 0.0, sq = 0.0;
      for (double v : x) mean += v;
      mean /= static_cast<double>(x.size());
      for (double v : x) sq += (v - mean) * (v - mean);
      const double sd = std::sqrt(sq / static_cast<double>(x.size() - 1));
      const double e = ess(x);
      csv << c << ',' << (j + 1) << ',' << g17(mean) << ',' << g17(sd) << ',' << g17(e) << '\n';
      ess_j.push_back(e);
    }
    cj["ess"] = ess_j;
    for (MoveType mt : {MoveType::local, MoveType::global}) {
      const auto [acc, n] = t.acceptance(mt);
      cj["acceptance"][to_string(mt)] = n ? static_cast<double>(acc) / static_cast<double>(n) : 0.0;
    }
    std::vector<Vector> kept(t.theta.begin() + static_cast<std::ptrdiff_t>(burn_in), t.theta.end());
    cj["esjd"] = esjd_d(kept);
    if (ref) {
      try {
        cj["kl"] = kl_to_reference(kept, *ref, bandwidth);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("diagnose: ") + e.what());
      }
    }
    if (model && !model->mode_centers.empty()) cj["mode_switches"] = mode_switches(kept, model->mode_centers, radius);
    chains.push_back(std::move(cj));
  }
  out["chains"] = std::move(chains);
  std::ofstream js = open_out(path_in(opt.out_dir, "diagnose.json"));
  js << out.dump(2) << '\n';
  return out;
}

// ---------------------------------------------------------------- grad-bench

GradBenchSetup grad_bench_setup_from_json(const json& j) {
  check_keys(j, {"methods", "S", "d_theta", "replications", "lower", "upper", "n_grid", "coordinate", "base"},
             "grad_bench");
  GradBenchSetup s;
  if (j.contains("methods")) {
    s.methods.clear();
    for (const auto& m : j.at("methods")) {
      try {
        s.methods.push_back(parse_grad_method(m.get<std::string>()));
      } catch (const std::exception& e) {
        throw ConfigError(std::string("grad_bench methods: ") + e.what());
      }
    }
  }
  s.S = get_or<std::size_t>(j, "S", s.S);
  s.d_theta = get_or<double>(j, "d_theta", s.d_theta);
  s.replications = get_or<std::size_t>(j, "replications", s.replications);
  s.lower = get_or<double>(j, "lower", s.lower);
  s.upper = get_or<double>(j, "upper", s.upper);
  s.n_grid = get_or<std::size_t>(j, "n_grid", s.n_grid);
  s.coordinate = get_or<std::size_t>(j, "coordinate", s.coordinate);
  s.base = get_or<std::vector<double>>(j, "base", {});
  if (s.methods.empty()) throw ConfigError("grad_bench needs at least one method");
  if (s.replications < 2) throw ConfigError("grad_bench needs at least 2 replications");
  if (s.n_grid < 2 || !(s.lower < s.upper)) throw ConfigError("grad_bench grid needs n_grid >= 2 and lower < upper");
  if (!(s.d_theta > 0.0) || s.S == 0) throw ConfigError("grad_bench needs d_theta > 0 and S >= 1");
  return s;
}

std::vector<GradBenchRow> grad_bench(const ModelInfo& model, const GradBenchSetup& setup, std::uint64_t seed,
                                     std::size_t threads) {
  const AbcTarget& target = *model.target;
  const std::size_t p = target.dim();
  if (setup.coordinate >= p) throw ConfigError("grad_bench coordinate out of range");
  Vector base = Vector::Zero(static_cast<Eigen::Index>(p));
  if (!setup.base.empty()) {
    if (setup.base.size() != p) throw ConfigError("grad_bench base must have " + std::to_string(p) + " entries");
    base = to_vector(setup.base);
  } else if (p > 1) {
    throw ConfigError("grad_bench on a multi-parameter model needs 'base'");
  }
  const auto j = static_cast<Eigen::Index>(setup.coordinate);

  std::vector<std::vector<GradBenchRow>> per_point(setup.n_grid);
  parallel_for(setup.n_grid, threads, [&](std::size_t g) {
    Vector theta = base;
    theta[j] = setup.lower + (setup.upper - setup.lower) * static_cast<double>(g) / static_cast<double>(setup.n_grid - 1);
    std::optional<double> analytic;
    if (target.analytic_loglik_gradient()) analytic = target.analytic_loglik_gradient()(theta)[j];
    for (GradMethod m : setup.methods) {
      GradEstimator est;
      est.method = m;
      est.S = setup.S;
      est.d_theta = Vector::Constant(1, setup.d_theta);
      std::vector<double> vals;
      vals.reserve(setup.replications);
      for (std::size_t r = 0; r < setup.replications; ++r) {
        SeedStream s(seed, ((g + 1) << 20) + r);
        const GradResult res = estimate_gradient(target, theta, est, s);
        vals.push_back(res.grad[j]);
      }
      double mean = 0.0, sq = 0.0;
      std::size_t n = 0;
      for (double v : vals)
        if (std::isfinite(v)) mean += v, ++n;
      if (n > 0) mean /= static_cast<double>(n);
      for (double v : vals)
        if (std::isfinite(v)) sq += (v - mean) * (v - mean);
      const double nan = std::numeric_limits<double>::quiet_NaN();
      if (n < vals.size())
        spdlog::warn("grad-bench {} at theta {}: {} of {} estimates degenerate", to_string(m), theta[j],
                     vals.size() - n, vals.size());
      const double sd = n > 1 ? std::sqrt(sq / static_cast<double>(n - 1)) : nan;
      if (n == 0) mean = nan;
      per_point[g].push_back({theta[j], to_string(m), mean, sd, mean - 2.0 * sd, mean + 2.0 * sd, analytic});
    }
  });
  std::vector<GradBenchRow> rows;
  for (auto& v : per_point) rows.insert(rows.end(), v.begin(), v.end());
  return rows;
}

void write_grad_bench_csv(const std::vector<GradBenchRow>& rows, const std::string& path) {
  std::ofstream out = open_out(path);
  out << "theta,method,mean,sd,lower,upper,analytic\n";
  for (const auto& r : rows) {
    out << g17(r.theta) << ',' << r.method << ',' << g17(r.mean) << ',' << g17(r.sd) << ',' << g17(r.lower) << ','
        << g17(r.upper) << ',' << (r.analytic ? g17(*r.analytic) : "") << '\n';
  }
}

std::vector<GradBenchRow> grad_bench_command(const json& doc, const CommandOptions& opt) {
  const RunConfig cfg = load_run_config(doc, opt);
  const ModelInfo model = resolve_model(cfg);
  const GradBenchSetup setup = grad_bench_setup_from_json(section(doc, "grad_bench"));
  auto rows = grad_bench(model, setup, cfg.seed, cfg.threads);
  write_grad_bench_csv(rows, path_in(opt.out_dir, "grad_bench.csv"));
  return rows;
}

}  // namespace glabc
