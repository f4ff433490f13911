#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "glabc/commands.hpp"
#include "glabc/diag.hpp"
#include "glabc/grad.hpp"
#include "glabc/run.hpp"
#include "glabc/tune.hpp"
#include "glabc/zoo.hpp"

namespace py = pybind11;
using namespace glabc;

namespace {

Matrix stack(const std::vector<Vector>& rows) {
  if (rows.empty()) return Matrix(0, 0);
  Matrix m(static_cast<Eigen::Index>(rows.size()), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  return m;
}

std::vector<Vector> unstack(const Matrix& m) {
  std::vector<Vector> out;
  for (Eigen::Index i = 0; i < m.rows(); ++i) out.push_back(m.row(i).transpose());
  return out;
}

py::dict trace_dict(const ChainTrace& t) {
  py::dict d;
  d["theta"] = stack(t.theta);
  std::vector<std::string> moves;
  for (MoveType m : t.move) moves.push_back(to_string(m));
  d["move"] = moves;
  d["accepted"] = std::vector<bool>(t.accepted.begin(), t.accepted.end());
  d["sims_used"] = t.sims;
  d["log_weight"] = t.log_weight;
  d["init_sims"] = t.init_sims;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Global-Local ABC-MCMC";
  m.attr("__version__") = kVersion;
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<RuntimeAbort>(m, "RuntimeAbort", PyExc_RuntimeError);

  m.def("model_names", &model_names);

  m.def(
      "run_json",
      [](const std::string& config) {
        const RunConfig cfg = RunConfig::from_json(nlohmann::json::parse(config));
        RunResult res;
        {
          py::gil_scoped_release release;
          res = run(cfg);
        }
        py::list chains;
        for (const auto& t : res.chains) chains.append(trace_dict(t));
        return py::make_tuple(res.manifest.dump(), chains);
      },
      py::arg("config"), "Runs the chains described by a JSON config; returns (manifest JSON, chains).");

  m.def(
      "simulate",
      [](const std::string& model, const Vector& theta, std::uint64_t seed, std::uint64_t stream) {
        const ModelInfo info = make_model(model);
        SeedStream s(seed, stream);
        auto x = info.target->simulate(theta, s);
        if (!x) throw std::runtime_error("simulation failed");
        return *x;
      },
      py::arg("model"), py::arg("theta"), py::arg("seed") = 1, py::arg("stream") = 0);

  m.def(
      "gradient",
      [](const std::string& model, const Vector& theta, const std::string& method, std::size_t S, double d_theta,
         std::uint64_t seed, std::uint64_t stream) {
        const ModelInfo info = make_model(model);
        GradEstimator est;
        est.method = parse_grad_method(method);
        est.S = S;
        est.d_theta = Vector::Constant(1, d_theta);
        SeedStream s(seed, stream);
        return estimate_gradient(*info.target, theta, est, s).grad;
      },
      py::arg("model"), py::arg("theta"), py::arg("method") = "crn_mean", py::arg("S") = 100,
      py::arg("d_theta") = 0.05, py::arg("seed") = 1, py::arg("stream") = 0);

  m.def("ess", &ess, py::arg("trace"));
  m.def(
      "esjd", [](const Matrix& trace) { return esjd_d(unstack(trace)); }, py::arg("trace"),
      "det(mean jump outer product)^(1/p) for an (n, p) trace.");
  m.def("vdp_observed", [] { return vdp_observed(); });
  m.def("vdp_true_theta", &vdp_true_theta);

  m.def(
      "load_reference",
      [](const std::string& path) {
        const ReferencePosterior r = load_reference(path);
        py::dict d;
        d["kind"] = r.density.kind == DensityKind::joint ? "joint" : "marginals";
        py::list axes;
        for (const auto& a : r.density.axes) axes.append(py::make_tuple(a.lower, a.upper, a.n));
        d["axes"] = axes;
        d["values"] = r.density.values;
        d["bandwidth"] = r.bandwidth;
        d["provenance"] = r.provenance;
        return d;
      },
      py::arg("path"));
}
