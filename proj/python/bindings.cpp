#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>

#include "synthctl/error.hpp"
#include "synthctl/parallel.hpp"
#include "synthctl/pipeline.hpp"
#include "synthctl/validation.hpp"
#include "synthctl/version.hpp"

namespace py = pybind11;
using namespace synthctl;

namespace {

std::vector<std::string> row_ids(Index rows) {
  std::vector<std::string> ids;
  ids.reserve(static_cast<std::size_t>(rows));
  for (Index i = 0; i < rows; ++i) ids.push_back("u" + std::to_string(i));
  return ids;
}

py::dict effect_dict(const EffectReport& r) {
  py::dict d;
  d["tau_hat"] = r.tau_hat;
  d["se"] = r.se;
  d["p_value"] = r.p_value;
  d["significant"] = r.significant;
  return d;
}

py::dict simulate(const py::dict& options, std::uint64_t seed) {
  KeyValues kv;
  for (const auto& [key, value] : options) kv[py::str(key)] = py::str(value);
  SimConfig cfg = sim_config_from(kv);
  cfg.seed = seed;
  const auto b = simulate_panel(cfg);
  py::dict d;
  d["outcomes"] = b.panel.outcomes();
  d["covariates"] = b.covariates.covariates();
  d["treated"] = b.panel.treated();
  d["control"] = b.control;
  d["t0"] = b.panel.t0();
  d["tau_true"] = cfg.tau_true;
  return d;
}

py::dict estimate(const Eigen::MatrixXd& outcomes, const IndexSet& treated, Index t0,
                  std::optional<Eigen::MatrixXd> covariates, IndexSet control, double alpha,
                  const std::string& debias, int k, std::uint64_t seed) {
  const auto ids = row_ids(outcomes.rows());
  PanelMatrix panel(ids, outcomes, t0, treated);
  std::optional<CovariateTable> cov;
  if (covariates) cov.emplace(ids, *covariates);
  PipelineConfig config;
  config.two_phase = cov.has_value();
  config.alpha = alpha;
  config.debias = parse_debias_mode(debias);
  config.k = k;
  config.barred = std::move(control);
  config.seed = seed;
  const auto r = run_pipeline(panel, cov ? &*cov : nullptr, config);
  py::dict d = effect_dict(r.effects);
  d["model"] = r.model.label();
  d["donors"] = r.donors;
  d["hte"] = r.effects.hte;
  d["counterfactual_post"] = r.prediction.yhat_post;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "synthetic control estimation from large donor pools";
  m.attr("__version__") = std::string(kVersion);
  py::register_exception<Error>(m, "SynthctlError", PyExc_ValueError);

  m.def("set_threads", &set_thread_count, py::arg("threads"));
  m.def("simulate", &simulate, py::arg("options") = py::dict(), py::arg("seed") = 0,
        "Synthetic low-rank experiment; options take the simulator's config keys.");
  m.def("estimate", &estimate, py::arg("outcomes"), py::arg("treated"), py::arg("t0"),
        py::arg("covariates") = py::none(), py::arg("control") = IndexSet{}, py::arg("alpha") = kDefaultAlpha,
        py::arg("debias") = "none", py::arg("k") = 10, py::arg("seed") = 0);

  m.def("ridge_fit", [](const Eigen::MatrixXd& donor_pre, const Eigen::MatrixXd& treated_pre, double lambda) {
    const auto f = ridge_fit(donor_pre, treated_pre, lambda);
    return py::make_tuple(f.weights, f.intercepts);
  });
  m.def("lasso_fit", [](const Eigen::MatrixXd& donor_pre, const Eigen::MatrixXd& treated_pre, double lambda) {
    const auto f = lasso_fit(donor_pre, treated_pre, lambda);
    return py::make_tuple(f.weights, f.intercepts);
  });
  m.def("hard_threshold_rank", &hard_threshold_rank, py::arg("singular_values"), py::arg("rows"), py::arg("cols"));
  m.def("relative_error", [](const Eigen::MatrixXd& p, const Eigen::MatrixXd& a, const std::string& norm) {
    return relative_error(p, a, parse_norm(norm));
  }, py::arg("prediction"), py::arg("actual"), py::arg("norm") = "l1");
  m.def("bias", &bias, py::arg("prediction"), py::arg("actual"));
  m.def("ab_st_pass", [](double gt_tau, bool gt_sig, double tau, bool sig) {
    return ab_st_pass({gt_tau, gt_sig}, {tau, sig});
  });
  m.def("aa_st_pass", [](double tau, bool sig) { return aa_st_pass({tau, sig}); });
}
