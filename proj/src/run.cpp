#include "glabc/run.hpp"

#include <spdlog/spdlog.h>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace glabc {

using nlohmann::json;

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

std::vector<double> number_or_array(const json& j, const char* key, std::vector<double> fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  const json& v = j.at(key);
  if (v.is_number()) return {v.get<double>()};
  if (v.is_array()) {
    try {
      return v.get<std::vector<double>>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
  }
  throw ConfigError(std::string("config key '") + key + "' must be a number or an array of numbers");
}

Vector to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<double> to_std(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

const std::set<std::string> kKernelTypes{"gl", "rw", "mala", "isir", "imh", "isir_nf"};

}  // namespace

// ---------------------------------------------------------------- config

KernelConfig kernel_from_json(const json& j) {
  check_keys(j,
             {"type", "gamma", "n_b", "local", "scale", "eta", "estimator", "proposal", "global", "flow"},
             "kernel");
  KernelConfig k;
  k.type = get_or<std::string>(j, "type", k.type);
  if (!kKernelTypes.count(k.type)) throw ConfigError("unknown kernel type '" + k.type + "'");
  const bool has_gamma = j.contains("gamma");
  k.gamma = get_or<double>(j, "gamma", k.type == "isir_nf" ? 1.0 : 0.5);
  k.n_b = get_or<std::size_t>(j, "n_b", k.type == "gl" || k.type == "isir_nf" ? 5 : 1);
  k.local = get_or<std::string>(j, "local", k.type == "mala" ? "mala" : "rw");
  k.scale = number_or_array(j, "scale", {});
  k.eta = get_or<double>(j, "eta", k.eta);
  k.proposal = get_or<std::string>(j, "proposal", k.proposal);
  k.global = get_or<std::string>(j, "global", k.type == "imh" ? "imh" : "isir");

  if (k.type == "rw" || k.type == "mala") {
    if (has_gamma && k.gamma != 0.0) throw ConfigError("kernel type '" + k.type + "' is purely local; drop gamma");
    k.gamma = 0.0;
    k.local = k.type;
  } else if (k.type == "isir" || k.type == "imh") {
    if (has_gamma && k.gamma != 1.0) throw ConfigError("kernel type '" + k.type + "' is purely global; drop gamma");
    k.gamma = 1.0;
    k.global = k.type;
  }
  if (k.type == "imh" && j.contains("n_b") && k.n_b != 1) throw ConfigError("imh uses a single candidate; drop n_b");
  if (k.local != "rw" && k.local != "mala") throw ConfigError("local kernel must be 'rw' or 'mala'");
  if (k.global != "isir" && k.global != "imh") throw ConfigError("global kernel must be 'isir' or 'imh'");

  if (j.contains("estimator")) {
    const json& e = j.at("estimator");
    check_keys(e, {"method", "S", "d_theta"}, "kernel.estimator");
    try {
      k.estimator.method = parse_grad_method(get_or<std::string>(e, "method", to_string(k.estimator.method)));
    } catch (const std::invalid_argument& ex) {
      throw ConfigError(ex.what());
    }
    k.estimator.S = get_or<std::size_t>(e, "S", k.estimator.S);
    k.estimator.d_theta = to_vector(number_or_array(e, "d_theta", to_std(k.estimator.d_theta)));
  }
  if (j.contains("flow")) {
    const json& f = j.at("flow");
    check_keys(f, {"layers", "hidden", "clamp", "lr", "collect_stages", "max_updates", "optimizer", "init", "save"},
               "kernel.flow");
    k.flow.spec.layers = get_or<std::size_t>(f, "layers", k.flow.spec.layers);
    k.flow.spec.hidden = get_or<std::size_t>(f, "hidden", k.flow.spec.hidden);
    k.flow.spec.clamp = get_or<double>(f, "clamp", k.flow.spec.clamp);
    k.flow.lr = get_or<double>(f, "lr", k.flow.lr);
    k.flow.collect_stages = get_or<std::size_t>(f, "collect_stages", k.flow.collect_stages);
    k.flow.max_updates = get_or<std::size_t>(f, "max_updates", k.flow.max_updates);
    try {
      k.flow.optimizer = parse_flow_optimizer(get_or<std::string>(f, "optimizer", to_string(k.flow.optimizer)));
    } catch (const std::invalid_argument& ex) {
      throw ConfigError(ex.what());
    }
    k.flow.init_path = get_or<std::string>(f, "init", k.flow.init_path);
    k.flow.save_name = get_or<std::string>(f, "save", k.flow.save_name);
  }
  return k;
}

json kernel_to_json(const KernelConfig& k) {
  json j;
  j["type"] = k.type;
  j["gamma"] = k.gamma;
  j["n_b"] = k.n_b;
  j["local"] = k.local;
  j["scale"] = k.scale;
  j["eta"] = k.eta;
  j["estimator"] = {{"method", to_string(k.estimator.method)},
                    {"S", k.estimator.S},
                    {"d_theta", to_std(k.estimator.d_theta)}};
  j["proposal"] = k.proposal;
  j["global"] = k.global;
  if (k.type == "isir_nf") {
    j["flow"] = {{"layers", k.flow.spec.layers},
                 {"hidden", k.flow.spec.hidden},
                 {"clamp", k.flow.spec.clamp},
                 {"lr", k.flow.lr},
                 {"collect_stages", k.flow.collect_stages},
                 {"max_updates", k.flow.max_updates},
                 {"optimizer", to_string(k.flow.optimizer)},
                 {"init", k.flow.init_path},
                 {"save", k.flow.save_name}};
  }
  return j;
}

RunConfig RunConfig::from_json(const json& j) {
  check_keys(j,
             {"model", "model_params", "kernel", "iterations", "burn_in", "n_chains", "seed", "init", "init_theta",
              "threads", "sim_budget", "tune", "bench", "reference", "diagnose", "grad_bench", "comment"},
             "config");
  RunConfig c;
  c.model = get_or<std::string>(j, "model", c.model);
  if (j.contains("model_params")) {
    try {
      c.model_params = j.at("model_params").get<ModelParams>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("model_params must map names to numbers: ") + e.what());
    }
  }
  if (j.contains("kernel")) c.kernel = kernel_from_json(j.at("kernel"));
  c.iterations = get_or<std::size_t>(j, "iterations", c.iterations);
  c.burn_in = get_or<std::size_t>(j, "burn_in", c.burn_in);
  c.n_chains = get_or<std::size_t>(j, "n_chains", c.n_chains);
  c.seed = get_or<std::uint64_t>(j, "seed", c.seed);
  c.init = get_or<std::string>(j, "init", c.init);
  c.init_theta = number_or_array(j, "init_theta", {});
  if (j.contains("init_theta") && !j.contains("init")) c.init = "fixed";
  c.threads = get_or<std::size_t>(j, "threads", c.threads);
  c.sim_budget = get_or<std::size_t>(j, "sim_budget", c.sim_budget);
  c.validate();
  return c;
}

void RunConfig::validate() const {
  if (iterations == 0) throw ConfigError("iterations must be positive");
  if (burn_in >= iterations) throw ConfigError("burn_in must be smaller than iterations");
  if (n_chains == 0) throw ConfigError("n_chains must be at least 1");
  if (threads == 0) throw ConfigError("threads must be at least 1");
  if (init != "prior" && init != "fixed") throw ConfigError("init must be 'prior' or 'fixed'");
  if (init == "fixed" && init_theta.empty()) throw ConfigError("init 'fixed' needs init_theta");
  if (!(kernel.gamma >= 0.0 && kernel.gamma <= 1.0)) throw ConfigError("gamma must lie in [0, 1]");
  if (kernel.n_b == 0) throw ConfigError("n_b must be at least 1");
  if (!(kernel.eta > 0.0)) throw ConfigError("eta must be positive");
  for (double s : kernel.scale)
    if (!(s > 0.0)) throw ConfigError("scale entries must be positive");
  if (kernel.type == "isir_nf" && !(kernel.flow.lr > 0.0)) throw ConfigError("flow lr must be positive");
}

json RunConfig::to_json() const {
  json j;
  j["model"] = model;
  j["model_params"] = model_params;
  j["kernel"] = kernel_to_json(kernel);
  j["iterations"] = iterations;
  j["burn_in"] = burn_in;
  j["n_chains"] = n_chains;
  j["seed"] = seed;
  j["init"] = init;
  j["init_theta"] = init_theta;
  j["threads"] = threads;
  j["sim_budget"] = sim_budget;
  return j;
}

ModelInfo resolve_model(const RunConfig& cfg) {
  try {
    return make_model(cfg.model, cfg.model_params);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

// ---------------------------------------------------------------- traces

std::size_t ChainTrace::total_sims() const {
  std::size_t s = 0;
  for (auto v : sims) s += v;
  return s;
}

std::pair<std::size_t, std::size_t> ChainTrace::acceptance(MoveType m) const {
  std::size_t acc = 0, n = 0;
  for (std::size_t i = 0; i < move.size(); ++i) {
    if (move[i] != m) continue;
    ++n;
    if (accepted[i]) ++acc;
  }
  return {acc, n};
}

std::vector<double> ChainTrace::coordinate(std::size_t j, std::size_t burn_in) const {
  std::vector<double> out;
  for (std::size_t i = burn_in; i < theta.size(); ++i) out.push_back(theta[i][static_cast<Eigen::Index>(j)]);
  return out;
}

// ---------------------------------------------------------------- sampler

Sampler::Sampler(RunConfig cfg, ModelInfo model) : cfg_(std::move(cfg)), model_(std::move(model)) {
  cfg_.validate();
  const std::size_t p = model_.target->dim();
  const KernelConfig& k = cfg_.kernel;
  if (k.local == "mala") {
    gl_.local = MalaSpec{k.eta, k.estimator};
  } else {
    Vector scale = k.scale.empty() ? model_.default_scale : to_vector(k.scale);
    if (scale.size() != 1 && static_cast<std::size_t>(scale.size()) != p)
      throw ConfigError("scale must have 1 or " + std::to_string(p) + " entries");
    gl_.local = RandomWalkSpec{scale};
  }
  gl_.gamma = k.gamma;
  gl_.batch_size = k.n_b;
  gl_.global_kind = k.global == "imh" ? GlobalKind::imh : GlobalKind::isir;
  if (k.type != "isir_nf" && k.gamma > 0.0) {
    try {
      gl_.global_proposal = model_.proposal(k.proposal);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  } else {
    gl_.global_proposal = model_.target->prior_ptr();
  }
  if (cfg_.init == "fixed" && cfg_.init_theta.size() != p)
    throw ConfigError("init_theta must have " + std::to_string(p) + " entries");
  try {
    gl_.validate(p);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

namespace {

constexpr std::size_t kFailureCheckEvery = 200;
constexpr std::size_t kFailureMinCalls = 1000;

void check_failure_rate(const AbcTarget& target, std::size_t calls0, std::size_t fails0) {
  const std::size_t calls = target.simulation_calls() - calls0;
  const std::size_t fails = target.simulation_failures() - fails0;
  if (calls >= kFailureMinCalls && 2 * fails > calls) {
    throw RuntimeAbort("simulator failed on " + std::to_string(fails) + " of " + std::to_string(calls) +
                       " calls; check the prior support and integrator settings");
  }
}

}  // namespace

ChainTrace Sampler::run_chain(std::size_t index, const std::function<void(const ChainState&)>& on_state,
                              std::optional<FlowModel>* trained_flow) const {
  return run_chain(SeedStream(cfg_.seed, index + 1), on_state, trained_flow);
}

ChainTrace Sampler::run_chain(SeedStream stream, const std::function<void(const ChainState&)>& on_state,
                              std::optional<FlowModel>* trained_flow) const {
  const auto t0 = std::chrono::steady_clock::now();
  const AbcTarget& target = *model_.target;
  const std::size_t calls0 = target.simulation_calls(), fails0 = target.simulation_failures();

  std::optional<FlowAdaptiveIsir> flow;
  if (cfg_.kernel.type == "isir_nf") {
    const FlowConfig& fc = cfg_.kernel.flow;
    FlowModel base = FlowModel::matched_to(target.prior(), fc.spec);
    if (!fc.init_path.empty()) {
      try {
        base = FlowModel::load(fc.init_path);
      } catch (const std::exception& e) {
        throw ConfigError("cannot load flow '" + fc.init_path + "': " + e.what());
      }
      if (base.dim() != target.dim()) throw ConfigError("flow in '" + fc.init_path + "' has the wrong dimension");
    }
    flow.emplace(std::move(base), cfg_.kernel.n_b, fc.collect_stages, fc.optimizer, fc.lr);
    flow->set_max_updates(fc.max_updates);
  }

  const Vector theta0 = cfg_.init == "fixed" ? to_vector(cfg_.init_theta) : target.prior_sample(stream);
  ChainState state = init_chain(target, theta0, stream);

  ChainTrace trace;
  trace.init_sims = state.sims_used;
  trace.theta.reserve(cfg_.iterations);
  std::size_t used = 0;
  for (std::size_t it = 1; it <= cfg_.iterations; ++it) {
    if (flow) {
      if (stream.uniform() < cfg_.kernel.gamma) {
        state = flow->step(state, target, stream).state;
      } else {
        state = local_step(state, gl_.local, target, stream);
      }
    } else {
      state = gl_step(state, gl_, target, stream).state;
    }
    state.iter = it;
    trace.theta.push_back(state.point.theta);
    trace.move.push_back(state.last_move);
    trace.accepted.push_back(state.accepted ? 1 : 0);
    trace.sims.push_back(state.sims_used);
    trace.log_weight.push_back(state.point.log_numerator());
    used += state.sims_used;
    if (on_state) on_state(state);
    if (it % kFailureCheckEvery == 0) check_failure_rate(target, calls0, fails0);
    if (cfg_.sim_budget > 0 && used >= cfg_.sim_budget) break;
  }
  check_failure_rate(target, calls0, fails0);
  if (trained_flow && flow) *trained_flow = flow->model();
  trace.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return trace;
}

// ---------------------------------------------------------------- run

void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& job) {
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, count));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          job(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!error) error = std::current_exception();
          next = count;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

RunResult run(const RunConfig& cfg) { return run(cfg, resolve_model(cfg)); }

RunResult run(const RunConfig& cfg, const ModelInfo& model) {
  const auto t0 = std::chrono::system_clock::now();
  const Sampler sampler(cfg, model);
  RunResult res;
  res.chains.resize(cfg.n_chains);
  res.flows.resize(cfg.n_chains);
  parallel_for(cfg.n_chains, cfg.threads, [&](std::size_t c) { res.chains[c] = sampler.run_chain(c, {}, &res.flows[c]); });
  const double wall = std::chrono::duration<double>(std::chrono::system_clock::now() - t0).count();

  json m;
  m["glabc_version"] = kVersion;
  m["eigen_version"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                       std::to_string(EIGEN_MINOR_VERSION);
  m["config"] = cfg.to_json();
  m["seed"] = cfg.seed;
  m["model_provenance"] = model.provenance;
  m["parameter_dim"] = model.target->dim();
  m["wall_clock_seconds"] = wall;
  std::size_t total = 0, init = 0;
  json chains = json::array();
  for (std::size_t c = 0; c < res.chains.size(); ++c) {
    const ChainTrace& t = res.chains[c];
    total += t.total_sims();
    init += t.init_sims;
    json cj;
    cj["chain"] = c;
    cj["stream_id"] = c + 1;
    cj["iterations"] = t.size();
    cj["total_sims"] = t.total_sims();
    cj["init_sims"] = t.init_sims;
    cj["wall_clock_seconds"] = t.wall_seconds;
    for (MoveType mt : {MoveType::local, MoveType::global}) {
      const auto [acc, n] = t.acceptance(mt);
      cj["acceptance"][to_string(mt)] = {{"accepted", acc},
                                         {"proposed", n},
                                         {"rate", n ? static_cast<double>(acc) / static_cast<double>(n) : 0.0}};
    }
    if (res.flows[c]) cj["flow_file"] = std::to_string(c) + "_" + cfg.kernel.flow.save_name;
    chains.push_back(std::move(cj));
  }
  m["chains"] = std::move(chains);
  m["total_sims"] = total;
  m["init_sims"] = init;
  res.manifest = std::move(m);
  return res;
}

// ---------------------------------------------------------------- output

namespace {

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_trace_csv(const ChainTrace& trace, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  const Eigen::Index p = trace.theta.empty() ? 0 : trace.theta.front().size();
  out << "iter";
  for (Eigen::Index j = 0; j < p; ++j) out << ",theta_" << (j + 1);
  out << ",move,accepted,sims_used,log_weight\n";
  for (std::size_t i = 0; i < trace.size(); ++i) {
    out << (i + 1);
    for (Eigen::Index j = 0; j < p; ++j) out << ',' << fmt_double(trace.theta[i][j]);
    out << ',' << to_string(trace.move[i]) << ',' << int(trace.accepted[i]) << ',' << trace.sims[i] << ','
        << fmt_double(trace.log_weight[i]) << '\n';
  }
  if (!out) throw std::runtime_error("write failed for " + path);
}

ChainTrace read_trace_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read trace " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty trace " + path);
  std::size_t p = 0;
  {
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ','))
      if (col.rfind("theta_", 0) == 0) ++p;
  }
  if (p == 0) throw std::runtime_error("trace " + path + " has no theta columns");
  ChainTrace t;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::vector<std::string> cells;
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != p + 5) throw std::runtime_error(path + ":" + std::to_string(lineno) + ": wrong column count");
    try {
      Vector th(static_cast<Eigen::Index>(p));
      for (std::size_t j = 0; j < p; ++j) th[static_cast<Eigen::Index>(j)] = std::stod(cells[1 + j]);
      t.theta.push_back(std::move(th));
      t.move.push_back(cells[p + 1] == "global" ? MoveType::global : MoveType::local);
      t.accepted.push_back(cells[p + 2] == "1" ? 1 : 0);
      t.sims.push_back(std::stoull(cells[p + 3]));
      t.log_weight.push_back(std::stod(cells[p + 4]));
    } catch (const std::logic_error&) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": malformed number");
    }
  }
  return t;
}

void write_run(const RunResult& result, const RunConfig& cfg, const std::string& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t c = 0; c < result.chains.size(); ++c) {
    write_trace_csv(result.chains[c], (std::filesystem::path(dir) / ("trace_chain" + std::to_string(c) + ".csv")).string());
    if (result.flows[c])
      result.flows[c]->save(
          (std::filesystem::path(dir) / (std::to_string(c) + "_" + cfg.kernel.flow.save_name)).string());
  }
  std::ofstream out(std::filesystem::path(dir) / "manifest.json");
  if (!out) throw std::runtime_error("cannot write manifest in " + dir);
  out << result.manifest.dump(2) << '\n';
}

}  // namespace glabc
