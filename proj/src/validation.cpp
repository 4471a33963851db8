#include "synthctl/validation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "csv.hpp"
#include "synthctl/error.hpp"
#include "synthctl/random.hpp"

namespace synthctl {

void check_bundle(const ExperimentBundle& bundle) {
  if (bundle.control.empty()) throw Error(ErrorKind::kEmptyControl, "experiment has no control units");
  check_index_set(bundle.control, bundle.panel.units(), "control");
  for (Index r : bundle.control) {
    if (bundle.panel.is_treated(r)) throw Error(ErrorKind::kInvalidArgument, "control unit is also treated");
  }
  if (bundle.covariates.unit_ids() != bundle.panel.unit_ids()) {
    throw Error(ErrorKind::kRowMismatch, "covariate rows are not aligned with the panel");
  }
}

void SimConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::kConfigInvalid, what); };
  if (treated < 2) fail("need at least 2 treated units");
  if (control < 0) fail("control must be >= 0");
  if (units - treated - control < 1) fail("no donor units left");
  if (t0 < 1 || t0 >= periods) fail("t0 must lie in [1, T-1]");
  if (covariates < 1) fail("need p >= 1");
  if (rank < 1 || rank > std::min(units, periods)) fail("rank must lie in [1, min(N, T)]");
  if (!(factor_scale >= 0.0) || !(noise_scale >= 0.0) || !(heterogeneity >= 0.0) || !(drift >= 0.0) ||
      !(scale_dispersion >= 0.0)) {
    fail("scales must be >= 0");
  }
  if (!std::isfinite(tau_true)) fail("tau_true must be finite");
}

SimConfig sim_config_from(const KeyValues& kv, SimConfig cfg) {
  try {
    for (const auto& [key, value] : kv) {
      if (key == "N" || key == "units") cfg.units = std::stol(value);
      else if (key == "n" || key == "treated") cfg.treated = std::stol(value);
      else if (key == "control") cfg.control = std::stol(value);
      else if (key == "T" || key == "periods") cfg.periods = std::stol(value);
      else if (key == "t0") cfg.t0 = std::stol(value);
      else if (key == "p" || key == "covariates") cfg.covariates = std::stol(value);
      else if (key == "rank" || key == "r") cfg.rank = std::stol(value);
      else if (key == "factor_scale") cfg.factor_scale = std::stod(value);
      else if (key == "noise_scale") cfg.noise_scale = std::stod(value);
      else if (key == "tau_true") cfg.tau_true = std::stod(value);
      else if (key == "heterogeneity") cfg.heterogeneity = std::stod(value);
      else if (key == "drift") cfg.drift = std::stod(value);
      else if (key == "scale_dispersion") cfg.scale_dispersion = std::stod(value);
      else if (key == "seed") cfg.seed = std::stoull(value);
      else throw Error(ErrorKind::kConfigInvalid, "unknown simulation key '" + key + "'");
    }
  } catch (const std::logic_error& e) {
    throw Error(ErrorKind::kConfigInvalid, std::string("simulation config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

std::string to_config(const SimConfig& cfg) {
  std::ostringstream os;
  os << "N = " << cfg.units << "\nn = " << cfg.treated << "\ncontrol = " << cfg.control << "\nT = " << cfg.periods
     << "\nt0 = " << cfg.t0 << "\np = " << cfg.covariates << "\nrank = " << cfg.rank
     << "\nfactor_scale = " << csv::format_real(cfg.factor_scale)
     << "\nnoise_scale = " << csv::format_real(cfg.noise_scale) << "\ntau_true = " << csv::format_real(cfg.tau_true)
     << "\nheterogeneity = " << csv::format_real(cfg.heterogeneity) << "\ndrift = " << csv::format_real(cfg.drift)
     << "\nscale_dispersion = " << csv::format_real(cfg.scale_dispersion)
     << "\nseed = " << cfg.seed << '\n';
  return os.str();
}

ExperimentBundle simulate_panel(const SimConfig& cfg) {
  cfg.validate();
  const Index N = cfg.units, n = cfg.treated, nc = cfg.control, T = cfg.periods, p = cfg.covariates, r = cfg.rank;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::student_t_distribution<double> student(4.0);

  // Covariates: donors from the full population, experimental units from a
  // shifted and tighter region.
  auto cov_rng = make_rng(cfg.seed, 1);
  Eigen::MatrixXd x(N, p);
  const Index shift_dim = p > 1 ? 1 : 0;
  const double spread = 1.0 / (1.0 + 0.25 * cfg.heterogeneity);
  for (Index i = 0; i < N; ++i) {
    const bool experimental = i < n + nc;
    for (Index j = 0; j < p; ++j) {
      const double z = normal(cov_rng);
      x(i, j) = experimental ? spread * z + (j == shift_dim ? cfg.heterogeneity : 0.0) : z;
    }
  }

  // Loadings: a covariate-driven scale times a level factor and bounded
  // nonlinear responses on the remaining factors.
  auto load_rng = make_rng(cfg.seed, 2);
  Eigen::MatrixXd mix(r, p);
  for (Index k = 0; k < r; ++k) {
    for (Index j = 0; j < p; ++j) mix(k, j) = normal(load_rng) / std::sqrt(static_cast<double>(p));
  }
  Eigen::VectorXd scale(N);
  Eigen::MatrixXd loadings(N, r);
  const Index global = std::min<Index>(r, 3);
  const Index local = r - global;
  const double bump_width = 0.5, bump_amp = 1.5, bump_span = 3.0;
  for (Index i = 0; i < N; ++i) {
    scale(i) = std::exp(cfg.scale_dispersion * x(i, 0));
    loadings(i, 0) = cfg.factor_scale * scale(i) * (2.0 + 0.5 * std::tanh(x(i, shift_dim)));
    for (Index k = 1; k < global; ++k) {
      loadings(i, k) = cfg.factor_scale * scale(i) * std::tanh(mix.row(k).dot(x.row(i)) + 0.3 * normal(load_rng));
    }
    for (Index l = 0; l < local; ++l) {
      const double center = local == 1 ? 0.0 : -bump_span + 2.0 * bump_span * static_cast<double>(l) / static_cast<double>(local - 1);
      const double d = (x(i, shift_dim) - center) / bump_width;
      loadings(i, global + l) = cfg.factor_scale * scale(i) * bump_amp * std::exp(-0.5 * d * d);
    }
  }

  // Factor paths: a constant level and AR(1) components with a seasonal term.
  auto path_rng = make_rng(cfg.seed, 3);
  Eigen::MatrixXd factors(T, r);
  const double phi = 0.5, arsd = 0.4, seas = 1.5;
  factors.col(0).setOnes();
  for (Index k = 1; k < r; ++k) {
    const double phase = 2.0 * std::numbers::pi * std::uniform_real_distribution<double>(0.0, 1.0)(path_rng);
    const double period = std::uniform_real_distribution<double>(6.0, 16.0)(path_rng);
    double state = normal(path_rng) * arsd / std::sqrt(1 - phi * phi);
    for (Index t = 0; t < T; ++t) {
      state = phi * state + arsd * normal(path_rng);
      factors(t, k) = state + seas * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / period + phase);
    }
  }

  Eigen::MatrixXd y0 = loadings * factors.transpose();
  if (cfg.drift > 0.0) {
    for (Index i = 0; i < N; ++i) {
      const double slope = cfg.drift * scale(i) * (1.0 + 0.5 * std::tanh(x(i, shift_dim)));
      for (Index t = 0; t < T; ++t) y0(i, t) += slope * static_cast<double>(t) / 10.0;
    }
  }
  auto noise_rng = make_rng(cfg.seed, 4);
  for (Index i = 0; i < N; ++i) {
    for (Index t = 0; t < T; ++t) y0(i, t) += cfg.noise_scale * scale(i) * student(noise_rng);
  }

  Eigen::MatrixXd observed = y0;
  observed.topRightCorner(n, T - cfg.t0).array() += cfg.tau_true;

  std::vector<std::string> ids;
  ids.reserve(static_cast<std::size_t>(N));
  char buf[32];
  for (Index i = 0; i < N; ++i) {
    std::snprintf(buf, sizeof(buf), "u%06ld", static_cast<long>(i));
    ids.emplace_back(buf);
  }
  IndexSet treated(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) treated[i] = i;
  IndexSet control;
  for (Index i = n; i < n + nc; ++i) control.push_back(i);

  SimTruth truth{cfg.tau_true, y0.topRows(n), loadings, factors};
  return ExperimentBundle{PanelMatrix(ids, std::move(observed), cfg.t0, std::move(treated)),
                          CovariateTable(ids, std::move(x)), std::move(control), std::move(truth)};
}

EffectSummary summarize(const EffectReport& report) { return {report.tau_hat, report.significant}; }

bool ab_st_pass(const EffectSummary& ground_truth, const EffectSummary& estimate) {
  if (ground_truth.significant != estimate.significant) return false;
  if (!ground_truth.significant) return true;
  return (ground_truth.tau > 0.0) == (estimate.tau > 0.0) && (ground_truth.tau < 0.0) == (estimate.tau < 0.0);
}

bool aa_st_pass(const EffectSummary& estimate) { return !estimate.significant; }

namespace {

// Group-difference report: hte rows are group A units against the group B
// per-period mean, inference by Welch test on unit means.
EffectReport group_difference(const Eigen::MatrixXd& a_post, const Eigen::MatrixXd& b_post, IndexSet units) {
  if (a_post.rows() < 2 || b_post.rows() < 2) throw Error(ErrorKind::kTooFewUnits, "groups need 2 units each");
  EffectReport report;
  report.hte = a_post.rowwise() - b_post.colwise().mean();
  report.per_unit_effects = report.hte.rowwise().mean();
  report.tau_hat = report.hte.mean();
  const auto inf = welch_test(a_post.rowwise().mean(), b_post.rowwise().mean());
  report.se = inf.se;
  report.p_value = inf.p_value;
  report.significant = report.p_value < kSignificanceLevel;
  report.units = std::move(units);
  return report;
}

}  // namespace

EffectReport ab_ground_truth(const ExperimentBundle& bundle) {
  check_bundle(bundle);
  const auto& panel = bundle.panel;
  return group_difference(gather(panel.outcomes(), panel.treated(), panel.post_range()),
                          gather(panel.outcomes(), bundle.control, panel.post_range()), panel.treated());
}

CheckedReport ab_st_validate(const ExperimentBundle& bundle, const CounterfactualPrediction& pred,
                             const EffectReport& ground_truth) {
  if (pred.targets != bundle.panel.treated()) {
    throw Error(ErrorKind::kShapeMismatch, "prediction does not cover the treated units");
  }
  CheckedReport out;
  out.report = estimate_effects(bundle.panel, pred);
  out.pass = ab_st_pass(summarize(ground_truth), summarize(out.report));
  return out;
}

CheckedReport aa_st_validate(const ExperimentBundle& bundle, const CounterfactualPrediction& pred) {
  check_bundle(bundle);
  if (pred.targets != bundle.panel.treated()) {
    throw Error(ErrorKind::kShapeMismatch, "prediction does not cover the treated units");
  }
  const auto& panel = bundle.panel;
  CheckedReport out;
  out.report = group_difference(gather(panel.outcomes(), bundle.control, panel.post_range()), pred.yhat_post,
                                bundle.control);
  out.pass = aa_st_pass(summarize(out.report));
  return out;
}

ValidationVerdict validate_bundle(const ExperimentBundle& bundle, PipelineConfig config, std::string label) {
  check_bundle(bundle);
  IndexSet barred;
  std::set_union(config.barred.begin(), config.barred.end(), bundle.control.begin(), bundle.control.end(),
                 std::back_inserter(barred));
  config.barred = std::move(barred);

  ValidationVerdict v;
  v.label = std::move(label);
  v.run = run_pipeline(bundle.panel, &bundle.covariates, config);
  for (Index r : v.run.donors) {
    if (std::binary_search(bundle.control.begin(), bundle.control.end(), r)) {
      throw Error(ErrorKind::kInvalidArgument, "control unit leaked into the donor set");
    }
  }
  v.model = v.run.model.label();
  v.ab_ground_truth = ab_ground_truth(bundle);
  auto ab = ab_st_validate(bundle, v.run.prediction, v.ab_ground_truth);
  auto aa = aa_st_validate(bundle, v.run.prediction);
  v.ab_st = std::move(ab.report);
  v.ab_st_pass = ab.pass;
  v.aa_st = std::move(aa.report);
  v.aa_st_pass = aa.pass;

  const auto& panel = bundle.panel;
  if (bundle.truth) {
    v.post_bias = bias(v.run.prediction.yhat_post, bundle.truth->y0_treated.rightCols(panel.post_periods()));
  } else {
    v.post_bias = -v.aa_st.tau_hat;
  }
  const auto control_pred = predict_with(panel, v.run, bundle.control, config);
  v.control_relative_error = relative_error(control_pred.yhat_post,
                                            gather(panel.outcomes(), bundle.control, panel.post_range()), Norm::kL1);
  return v;
}

StalenessResult staleness_study(const ExperimentBundle& bundle, Index stale_gap, const PipelineConfig& config) {
  const Index t0 = bundle.panel.t0();
  if (stale_gap < 1 || t0 - stale_gap < 2) {
    throw Error(ErrorKind::kInsufficientColumns, "stale gap " + std::to_string(stale_gap) + " leaves no training window");
  }
  PipelineConfig fresh_cfg = config;
  fresh_cfg.train_end = 0;
  PipelineConfig stale_cfg = config;
  stale_cfg.train_end = t0 - stale_gap;
  return {validate_bundle(bundle, fresh_cfg, "fresh"), validate_bundle(bundle, stale_cfg, "stale")};
}

StalenessResult staleness_study(const SimConfig& cfg, Index stale_gap, const PipelineConfig& config) {
  if (!(cfg.drift > 0.0)) throw Error(ErrorKind::kConfigInvalid, "staleness study needs drift > 0");
  return staleness_study(simulate_panel(cfg), stale_gap, config);
}

void write_verdicts_csv(std::span<const ValidationVerdict> verdicts, const std::filesystem::path& path) {
  auto out = csv::open_out(path);
  out << "experiment,ab_tau,ab_p,ab_significant,ab_st_tau,ab_st_p,ab_st_significant,aa_st_tau,aa_st_p,"
         "aa_st_significant,model,ab_st_pass,aa_st_pass\n";
  auto flag = [](bool b) { return b ? "true" : "false"; };
  for (const auto& v : verdicts) {
    out << v.label << ',' << csv::format_real(v.ab_ground_truth.tau_hat) << ','
        << csv::format_real(v.ab_ground_truth.p_value) << ',' << flag(v.ab_ground_truth.significant) << ','
        << csv::format_real(v.ab_st.tau_hat) << ',' << csv::format_real(v.ab_st.p_value) << ','
        << flag(v.ab_st.significant) << ',' << csv::format_real(v.aa_st.tau_hat) << ','
        << csv::format_real(v.aa_st.p_value) << ',' << flag(v.aa_st.significant) << ',' << v.model << ','
        << flag(v.ab_st_pass) << ',' << flag(v.aa_st_pass) << '\n';
  }
}

ExperimentBundle load_bundle(const std::filesystem::path& outcomes, const std::filesystem::path& treated,
                             const std::filesystem::path& covariates, const std::filesystem::path& control,
                             Index t0) {
  auto panel = load_panel(outcomes, treated, t0);
  auto cov = load_covariates(covariates, panel);
  const auto ids = read_id_list(control);
  if (ids.empty()) throw Error(ErrorKind::kEmptyControl, control.string() + " lists no units");
  IndexSet rows = panel.rows_of(ids);
  ExperimentBundle bundle{std::move(panel), std::move(cov), std::move(rows), std::nullopt};
  check_bundle(bundle);
  return bundle;
}

void write_bundle(const ExperimentBundle& bundle, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_panel(bundle.panel, dir / "outcomes.csv", dir / "treated.txt");
  write_covariates(bundle.covariates, dir / "covariates.csv");
  std::vector<std::string> ids;
  for (Index r : bundle.control) ids.push_back(bundle.panel.unit_ids()[r]);
  write_id_list(ids, dir / "control.txt");
  if (!bundle.truth) return;
  const auto& truth = *bundle.truth;
  const auto& panel = bundle.panel;
  nlohmann::ordered_json j;
  j["tau_true"] = truth.tau_true;
  j["t0"] = panel.t0();
  j["rank"] = truth.factors.cols();
  j["untreated_post_mean"] = truth.y0_treated.rightCols(panel.post_periods()).mean();
  auto& paths = j["factors"] = nlohmann::ordered_json::array();
  for (Index k = 0; k < truth.factors.cols(); ++k) {
    std::vector<double> col(truth.factors.col(k).data(), truth.factors.col(k).data() + truth.factors.rows());
    paths.push_back(col);
  }
  std::ofstream out(dir / "truth.json");
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + (dir / "truth.json").string());
  out << j.dump(2) << '\n';
}

}  // namespace synthctl
