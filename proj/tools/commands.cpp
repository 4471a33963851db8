#include <algorithm>
#include <charconv>
#include <fstream>
#include <iostream>
#include <limits>
#include <set>

#include "cli.hpp"
#include "synthctl/error.hpp"
#include "synthctl/parallel.hpp"
#include "synthctl/pipeline.hpp"
#include "synthctl/random.hpp"
#include "synthctl/validation.hpp"

namespace synthctl::cli {

namespace fs = std::filesystem;

namespace {

std::string fmt_real(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  return os;
}

Json model_json(const ModelSpec& spec) {
  return Json{{"label", spec.label()},
              {"method", method_name(spec.method)},
              {"k", spec.k},
              {"lambda", spec.lambda},
              {"rank", spec.rank},
              {"intercept", spec.intercept},
              {"center", centering_name(spec.center)}};
}

Json effect_json(const EffectReport& r) {
  return Json{{"tau_hat", r.tau_hat},
              {"se", r.se},
              {"p_value", r.p_value},
              {"significant", r.significant},
              {"inference", inference_name(r.inference)}};
}

fs::path require_path(const Settings& s, const std::string& key) {
  if (s.empty(key)) throw Error(ErrorKind::kConfigInvalid, "'" + key + "' is required (flag --" + key + " or config)");
  return s.path(key);
}

Index require_t0(const Settings& s) {
  if (s.empty("t0")) throw Error(ErrorKind::kConfigInvalid, "'t0' is required (flag --t0 or config)");
  return static_cast<Index>(s.integer("t0"));
}

struct Inputs {
  PanelMatrix panel;
  std::optional<CovariateTable> covariates;
  IndexSet control;
  std::vector<std::string> exclude_ids;
};

Inputs load_inputs(const Settings& s, RunRecord& record) {
  const auto outcomes = require_path(s, "outcomes");
  record_input(record, "outcomes", outcomes);
  const auto treated = require_path(s, "treated");
  record_input(record, "treated", treated);
  Inputs in{load_panel(outcomes, treated, require_t0(s)), std::nullopt, {}, {}};
  if (!s.empty("covariates")) {
    record_input(record, "covariates", s.path("covariates"));
    in.covariates = load_covariates(s.path("covariates"), in.panel);
  } else if (s.boolean("two_phase")) {
    throw Error(ErrorKind::kConfigInvalid, "two-phase matching needs 'covariates' (or pass --single-phase)");
  }
  if (!s.empty("control")) {
    record_input(record, "control", s.path("control"));
    const auto ids = read_id_list(s.path("control"));
    if (ids.empty()) throw Error(ErrorKind::kEmptyControl, s.text("control") + " lists no units");
    in.control = in.panel.rows_of(ids);
    for (Index r : in.control) {
      if (in.panel.is_treated(r)) {
        throw Error(ErrorKind::kInvalidArgument, "control unit " + in.panel.unit_ids()[r] + " is also treated");
      }
    }
  }
  if (!s.empty("exclude_file")) {
    record_input(record, "exclude_file", s.path("exclude_file"));
    in.exclude_ids = read_id_list(s.path("exclude_file"));
  }
  if (s.has("grid") && !s.empty("grid")) record_input(record, "grid", s.path("grid"));
  return in;
}

AnnParams ann_params(const Settings& s) {
  AnnParams p;
  p.tree_count = static_cast<int>(s.integer("trees"));
  p.leaf_size = static_cast<int>(s.integer("leaf_size"));
  p.metric = parse_metric(s.text("metric"));
  p.standardize = s.boolean("standardize");
  p.exact = s.boolean("exact");
  return p;
}

PipelineConfig pipeline_config(const Settings& s, std::uint64_t seed, const Inputs& in, const std::string& command) {
  PipelineConfig c;
  c.seed = seed;
  c.two_phase = s.boolean("two_phase");
  c.subsample = s.real("subsample");
  c.k = static_cast<int>(s.integer("k"));
  c.ann = ann_params(s);
  c.exclude_ids = in.exclude_ids;
  c.barred = in.control;

  c.alpha = s.real("alpha");
  c.norm = parse_norm(s.text("norm"));
  c.cv = parse_cv_scheme(s.text("cv"));
  c.folds = static_cast<int>(s.integer("folds"));
  c.val_width = static_cast<int>(s.integer("val_width"));
  c.center = parse_centering(s.text("center"));
  c.pool_mode = parse_pool_mode(s.text("pool_mode"));
  c.debias = parse_debias_mode(s.text("debias"));
  c.split_fraction = s.real("split_fraction");
  c.inference = parse_inference(s.text("inference"));
  c.placebo_draws = static_cast<int>(s.integer("placebo_draws"));
  c.train_end = static_cast<Index>(s.integer("train_end"));

  const auto gap = static_cast<Index>(s.integer("stale_gap"));
  if (gap < 0) throw Error(ErrorKind::kConfigInvalid, "stale_gap must be >= 0");
  // validate runs fresh and stale side by side; elsewhere the gap just moves the window.
  if (gap > 0 && command != "validate") {
    if (c.train_end != 0) throw Error(ErrorKind::kConfigInvalid, "set either train_end or stale_gap, not both");
    c.train_end = in.panel.t0() - gap;
    if (c.train_end < 1) throw Error(ErrorKind::kConfigInvalid, "stale_gap leaves no training columns");
  }

  if (!s.empty("grid")) {
    KeyValues grid = load_key_values(s.path("grid"));
    if (!s.empty("methods")) grid["methods"] = s.text("methods");
    c.candidates = candidates_from_config(grid);
  } else if (!s.empty("methods")) {
    std::vector<Method> methods;
    for (const auto& name : parse_word_list(s.text("methods"))) methods.push_back(parse_method(name));
    c.candidates = default_candidates(methods);
  }
  return c;
}

std::vector<std::string> ids_of(const PanelMatrix& panel, const IndexSet& rows) {
  std::vector<std::string> ids;
  ids.reserve(rows.size());
  for (Index r : rows) ids.push_back(panel.unit_ids()[r]);
  return ids;
}

void write_counterfactual_csv(const PanelMatrix& panel, const CounterfactualPrediction& pred, const fs::path& path) {
  auto os = open_out(path);
  os << "unit_id,period,observed,counterfactual,is_post\n";
  for (std::size_t i = 0; i < pred.targets.size(); ++i) {
    const Index row = pred.targets[i];
    for (Index t = 0; t < panel.periods(); ++t) {
      const bool post = t >= panel.t0();
      const double yhat = post ? pred.yhat_post(static_cast<Index>(i), t - panel.t0())
                               : pred.yhat_pre(static_cast<Index>(i), t);
      os << panel.unit_ids()[row] << ',' << (t + 1) << ',' << fmt_real(panel.outcomes()(row, t)) << ','
         << fmt_real(yhat) << ',' << (post ? 1 : 0) << '\n';
    }
  }
}

void write_series_csv(const PanelMatrix& panel, Index row, const Eigen::VectorXd& yhat, const fs::path& path) {
  auto os = open_out(path);
  os << "period,observed,counterfactual,is_post\n";
  for (Index t = 0; t < panel.periods(); ++t) {
    os << (t + 1) << ',' << fmt_real(panel.outcomes()(row, t)) << ',' << fmt_real(yhat(t)) << ','
       << (t >= panel.t0() ? 1 : 0) << '\n';
  }
}

int cmd_match(RunRecord& rec, const fs::path& out) {
  const Settings& s = rec.settings;
  const Inputs in = load_inputs(s, rec);
  rec.timer.lap("load");

  const IndexSet eligible = eligible_donors(in.panel, in.control, in.exclude_ids);
  if (eligible.empty()) throw Error(ErrorKind::kEmptyDonorSet, "no eligible donors");
  const double fraction = s.real("subsample");
  IndexSet donors = fraction < 1.0 ? subsample_donors(eligible, fraction, derive_seed(rec.seed, 1)) : eligible;
  const bool two_phase = s.boolean("two_phase");
  if (two_phase) {
    AnnParams params = ann_params(s);
    params.seed = derive_seed(rec.seed, 2);
    const auto index = build_index(*in.covariates, donors, params);
    rec.timer.lap("build_index");
    const auto filter = match_donors(index, *in.covariates, in.panel.treated(), static_cast<int>(s.integer("k")));
    rec.timer.lap("match_donors");
    donors = filter.donor_union;
    write_neighbors_csv(filter, in.panel, out / "neighbors.csv");
    rec.outputs.push_back("neighbors.csv");
  } else {
    rec.timer.lap("subsample");
  }
  const std::optional<IndexSet> control = in.control.empty() ? std::nullopt : std::optional(in.control);
  const std::vector<AlignmentReport> reports = {quantile_alignment(
      in.panel, donors, kAlignmentQuantiles, control, two_phase ? "two-phase" : "single-phase")};
  write_alignment_csv(reports, out / "alignment.csv");
  const auto ids = ids_of(in.panel, donors);
  write_id_list(ids, out / "donors.txt");
  rec.outputs.insert(rec.outputs.end(), {"alignment.csv", "donors.txt"});
  rec.timer.lap("write");
  std::cout << donors.size() << " donors for " << in.panel.treated().size() << " treated units\n";
  return 0;
}

struct PipelineRun {
  Inputs inputs;
  PipelineConfig config;
  PipelineResult result;
};

PipelineRun run_pipeline_stage(RunRecord& rec, const std::string& command) {
  Inputs in = load_inputs(rec.settings, rec);
  rec.timer.lap("load");
  PipelineConfig config = pipeline_config(rec.settings, rec.seed, in, command);
  const CovariateTable* cov = in.covariates ? &*in.covariates : nullptr;
  PipelineResult result = run_pipeline(in.panel, cov, config);
  rec.timer.add(result.timings);
  rec.model = model_json(result.model);
  return {std::move(in), std::move(config), std::move(result)};
}

int cmd_estimate(RunRecord& rec, const fs::path& out) {
  const auto run = run_pipeline_stage(rec, "estimate");
  const auto& panel = run.inputs.panel;
  const auto& r = run.result;

  Json effects = effect_json(r.effects);
  effects["treated_units"] = panel.treated().size();
  effects["post_periods"] = panel.post_periods();
  effects["eligible_donors"] = r.eligible.size();
  effects["donors"] = r.donors.size();
  effects["model"] = model_json(r.model);
  effects["train_end"] = run.config.train_end > 0 ? run.config.train_end : panel.t0();
  if (r.split_correction) {
    effects["split_correction"] = std::vector<double>(r.split_correction->begin(), r.split_correction->end());
  } else {
    effects["split_correction"] = nullptr;
  }
  open_out(out / "effects.json") << effects.dump(2) << '\n';
  write_hte_csv(r.effects, panel, out / "hte.csv");
  write_unit_effects_csv(r.effects, panel, out / "unit_effects.csv");
  write_counterfactual_csv(panel, r.prediction, out / "counterfactual.csv");
  write_coefficients_csv(r.prediction, panel, out / "coefficients.csv");
  rec.outputs = {"effects.json", "hte.csv", "unit_effects.csv", "counterfactual.csv", "coefficients.csv"};
  if (r.selection) {
    write_leaderboard_csv(*r.selection, out / "leaderboard.csv");
    rec.outputs.push_back("leaderboard.csv");
  }
  if (r.filter) {
    write_neighbors_csv(*r.filter, panel, out / "neighbors.csv");
    rec.outputs.push_back("neighbors.csv");
  }
  rec.timer.lap("write");
  std::cout << "tau_hat " << fmt_real(r.effects.tau_hat) << " (se " << fmt_real(r.effects.se) << ", p "
            << fmt_real(r.effects.p_value) << ") with " << r.model.label() << " on " << r.donors.size()
            << " donors\n";
  return 0;
}

Json verdict_json(const ValidationVerdict& v) {
  return Json{{"label", v.label},
              {"model", v.model},
              {"ab_ground_truth", effect_json(v.ab_ground_truth)},
              {"ab_st", effect_json(v.ab_st)},
              {"aa_st", effect_json(v.aa_st)},
              {"ab_st_pass", v.ab_st_pass},
              {"aa_st_pass", v.aa_st_pass},
              {"post_bias", v.post_bias},
              {"control_relative_error", v.control_relative_error}};
}

int cmd_validate(RunRecord& rec, const fs::path& out) {
  const Settings& s = rec.settings;
  if (s.empty("control")) throw Error(ErrorKind::kEmptyControl, "validate needs a control-group file (--control)");
  Inputs in = load_inputs(s, rec);
  if (!in.covariates) throw Error(ErrorKind::kConfigInvalid, "validate needs 'covariates'");
  rec.timer.lap("load");
  PipelineConfig config = pipeline_config(s, rec.seed, in, "validate");
  ExperimentBundle bundle{std::move(in.panel), std::move(*in.covariates), std::move(in.control), std::nullopt};
  check_bundle(bundle);

  std::vector<ValidationVerdict> verdicts;
  const auto gap = static_cast<Index>(s.integer("stale_gap"));
  if (gap > 0) {
    auto study = staleness_study(bundle, gap, config);
    study.fresh.label = s.text("label") + " (fresh)";
    study.stale.label = s.text("label") + " (stale " + std::to_string(gap) + ")";
    verdicts.push_back(std::move(study.fresh));
    verdicts.push_back(std::move(study.stale));
  } else {
    verdicts.push_back(validate_bundle(bundle, config, s.text("label")));
  }
  for (const auto& v : verdicts) rec.timer.add(v.run.timings);
  rec.model = model_json(verdicts.front().run.model);

  write_verdicts_csv(verdicts, out / "verdicts.csv");
  Json list = Json::array();
  for (const auto& v : verdicts) list.push_back(verdict_json(v));
  open_out(out / "verdicts.json") << list.dump(2) << '\n';
  rec.outputs = {"verdicts.csv", "verdicts.json"};
  rec.timer.lap("write");

  bool all = true;
  for (const auto& v : verdicts) {
    std::cout << v.label << ": A/B-ST " << (v.ab_st_pass ? "Pass" : "Fail") << ", A/A-ST "
              << (v.aa_st_pass ? "Pass" : "Fail") << " (" << v.model << ")\n";
    all &= v.all_pass();
  }
  return all ? 0 : 1;
}

int cmd_simulate(RunRecord& rec, const fs::path& out) {
  SimConfig cfg = sim_config_from(rec.settings.values());
  cfg.seed = rec.seed;
  const auto bundle = simulate_panel(cfg);
  rec.timer.lap("simulate");
  write_bundle(bundle, out);
  open_out(out / "data.cfg") << "outcomes = outcomes.csv\ntreated = treated.txt\ncovariates = covariates.csv\n"
                                "control = control.txt\nt0 = "
                             << cfg.t0 << '\n';
  open_out(out / "sim.cfg") << to_config(cfg);
  rec.outputs = {"outcomes.csv", "treated.txt", "covariates.csv", "control.txt", "truth.json", "data.cfg", "sim.cfg"};
  rec.timer.lap("write");
  std::cout << "wrote " << cfg.units << " units x " << cfg.periods << " periods to " << out.string() << '\n';
  return 0;
}

int cmd_diagnose(RunRecord& rec, const fs::path& out) {
  const auto run = run_pipeline_stage(rec, "diagnose");
  const auto& panel = run.inputs.panel;
  const auto& r = run.result;
  const auto& sel = *r.selection;
  const CvFold& fold = sel.cv_plan.folds.back();
  const IndexSet& treated = panel.treated();
  const Eigen::MatrixXd actual = gather(panel.outcomes(), treated, fold.validate);

  // Best candidate of each method, scored per treated unit on the last fold.
  {
    auto os = open_out(out / "model_errors.csv");
    os << "model,method,unit_id,relative_error,bias\n";
    std::set<Method> seen;
    for (const auto& entry : sel.leaderboard) {
      if (!seen.insert(entry.spec.method).second) continue;
      const auto pred = predict_counterfactual(panel, r.donors, treated, entry.spec, fold.train);
      const Eigen::MatrixXd fit = pred.yhat_pre.middleCols(fold.validate.begin, fold.validate.size());
      const std::string label = entry.spec.label(), method = method_name(entry.spec.method);
      double err_sum = 0.0;
      for (Index i = 0; i < fit.rows(); ++i) {
        double err = std::numeric_limits<double>::quiet_NaN();
        try {
          err = relative_error(fit.row(i), actual.row(i), run.config.norm);
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::kZeroActualNorm) throw;
        }
        err_sum += err;
        os << label << ',' << method << ',' << panel.unit_ids()[treated[i]] << ',' << fmt_real(err) << ','
           << fmt_real(bias(fit.row(i), actual.row(i))) << '\n';
      }
      os << label << ',' << method << ",mean," << fmt_real(err_sum / static_cast<double>(fit.rows())) << ','
         << fmt_real(bias(fit, actual)) << '\n';
    }
  }
  write_leaderboard_csv(sel, out / "leaderboard.csv");
  rec.outputs = {"model_errors.csv", "leaderboard.csv"};

  std::vector<std::string> units = parse_word_list(rec.settings.text("units"));
  if (units.empty()) {
    for (std::size_t i = 0; i < std::min<std::size_t>(3, treated.size()); ++i) {
      units.push_back(panel.unit_ids()[treated[i]]);
    }
  }
  for (const auto& id : units) {
    const Index row = panel.row_of(id);
    Eigen::VectorXd yhat(panel.periods());
    const auto pos = std::lower_bound(treated.begin(), treated.end(), row);
    if (pos != treated.end() && *pos == row) {
      const auto i = static_cast<Index>(pos - treated.begin());
      yhat << r.prediction.yhat_pre.row(i).transpose(), r.prediction.yhat_post.row(i).transpose();
    } else {
      if (std::binary_search(r.donors.begin(), r.donors.end(), row)) {
        throw Error(ErrorKind::kInvalidArgument, "unit " + id + " is a donor in this run and has no counterfactual");
      }
      const auto pred = predict_with(panel, r, IndexSet{row}, run.config);
      yhat << pred.yhat_pre.row(0).transpose(), pred.yhat_post.row(0).transpose();
    }
    const std::string name = "series_" + id + ".csv";
    write_series_csv(panel, row, yhat, out / name);
    rec.outputs.push_back(name);
  }
  rec.timer.lap("write");
  std::cout << "selected " << r.model.label() << "; wrote " << units.size() << " unit series\n";
  return 0;
}

}  // namespace

int run_command(const Invocation& inv) {
  set_thread_count(inv.threads);
  RunRecord rec;
  rec.command = inv.command;
  rec.settings = resolve_settings(inv, rec.seed);
  fs::create_directories(inv.out);

  int status = 0;
  if (inv.command == "match") status = cmd_match(rec, inv.out);
  else if (inv.command == "estimate") status = cmd_estimate(rec, inv.out);
  else if (inv.command == "validate") status = cmd_validate(rec, inv.out);
  else if (inv.command == "simulate") status = cmd_simulate(rec, inv.out);
  else if (inv.command == "diagnose") status = cmd_diagnose(rec, inv.out);
  else throw Error(ErrorKind::kInvalidArgument, "unknown command '" + inv.command + "'");
  write_manifest(rec, inv.out);
  return status;
}

}  // namespace synthctl::cli
