#include "synthctl/pipeline.hpp"

#include <algorithm>
#include <chrono>

#include "synthctl/error.hpp"
#include "synthctl/random.hpp"

namespace synthctl {

PoolMode parse_pool_mode(const std::string& name) {
  if (name == "union") return PoolMode::kUnion;
  if (name == "per-unit" || name == "per_unit") return PoolMode::kPerUnit;
  throw Error(ErrorKind::kInvalidArgument, "unknown pool mode '" + name + "'");
}

std::string pool_mode_name(PoolMode mode) { return mode == PoolMode::kPerUnit ? "per-unit" : "union"; }

DebiasMode parse_debias_mode(const std::string& name) {
  if (name == "none") return DebiasMode::kNone;
  if (name == "split") return DebiasMode::kSplit;
  throw Error(ErrorKind::kInvalidArgument, "unknown debias mode '" + name + "'");
}

std::string debias_mode_name(DebiasMode mode) { return mode == DebiasMode::kSplit ? "split" : "none"; }

IndexSet eligible_donors(const PanelMatrix& panel, const IndexSet& barred,
                         const std::vector<std::string>& exclude_ids) {
  check_index_set(barred, panel.units(), "barred rows");
  IndexSet drop = barred;
  for (const auto& id : exclude_ids) {
    const Index row = panel.row_of(id);
    if (panel.is_treated(row)) throw Error(ErrorKind::kExcludedIsTreated, id);
    drop.push_back(row);
  }
  std::sort(drop.begin(), drop.end());
  drop.erase(std::unique(drop.begin(), drop.end()), drop.end());
  return set_difference(panel.donors(), drop);
}

namespace {

class StageClock {
 public:
  explicit StageClock(std::vector<std::pair<std::string, double>>& sink) : sink_(sink) {}
  void lap(const std::string& stage) {
    const auto now = std::chrono::steady_clock::now();
    sink_.emplace_back(stage, std::chrono::duration<double>(now - last_).count());
    last_ = now;
  }

 private:
  std::vector<std::pair<std::string, double>>& sink_;
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

ColumnRange training_window(const PanelMatrix& panel, const PipelineConfig& config) {
  const Index end = config.train_end > 0 ? config.train_end : panel.t0();
  if (end > panel.t0()) throw Error(ErrorKind::kInsufficientColumns, "training window ends after t0");
  return {0, end};
}

std::vector<ModelSpec> resolve_candidates(const PipelineConfig& config) {
  auto candidates = config.candidates.empty() ? default_candidates() : config.candidates;
  for (auto& c : candidates) {
    if (c.method == Method::kPcr || c.method == Method::kPcrRidge || c.method == Method::kPcrLasso) {
      c.center = config.center;
    }
  }
  return candidates;
}

CounterfactualPrediction fit_final(const PanelMatrix& panel, const PipelineResult& result, const IndexSet& targets,
                                   const ModelSpec& model, ColumnRange train, PoolMode mode) {
  if (mode == PoolMode::kUnion || !result.filter || targets != panel.treated()) {
    return predict_counterfactual(panel, result.donors, targets, model, train);
  }
  // One fit per treated unit on its own neighbor list.
  CounterfactualPrediction merged;
  merged.targets = targets;
  merged.donors = result.donors;
  merged.yhat_pre.resize(static_cast<Index>(targets.size()), panel.t0());
  merged.yhat_post.resize(static_cast<Index>(targets.size()), panel.post_periods());
  for (Index i = 0; i < static_cast<Index>(targets.size()); ++i) {
    const auto& list = result.filter->neighbors.at(targets[i]);
    IndexSet own;
    for (const auto& nb : list) own.push_back(nb.row);
    std::sort(own.begin(), own.end());
    const auto one = predict_counterfactual(panel, own, IndexSet{targets[i]}, model, train);
    merged.yhat_pre.row(i) = one.yhat_pre.row(0);
    merged.yhat_post.row(i) = one.yhat_post.row(0);
    if (i == 0) merged.model = one.model;
  }
  return merged;
}

}  // namespace

PipelineResult run_pipeline(const PanelMatrix& panel, const CovariateTable* covariates,
                            const PipelineConfig& config) {
  PipelineResult result;
  StageClock clock(result.timings);
  const ColumnRange train = training_window(panel, config);

  result.eligible = eligible_donors(panel, config.barred, config.exclude_ids);
  if (result.eligible.empty()) throw Error(ErrorKind::kEmptyDonorSet, "no eligible donors");
  IndexSet pool = result.eligible;
  if (config.subsample < 1.0) pool = subsample_donors(pool, config.subsample, derive_seed(config.seed, 1));

  if (config.two_phase) {
    if (!covariates) throw Error(ErrorKind::kInvalidArgument, "two-phase mode needs covariates");
    AnnParams params = config.ann;
    params.seed = derive_seed(config.seed, 2);
    const auto index = build_index(*covariates, pool, params);
    clock.lap("build_index");
    result.filter = match_donors(index, *covariates, panel.treated(), config.k);
    result.donors = result.filter->donor_union;
    clock.lap("match_donors");
  } else {
    result.donors = pool;
    clock.lap("subsample");
  }

  if (config.fixed_model) {
    result.model = *config.fixed_model;
  } else {
    const int width = config.val_width > 0 ? config.val_width : static_cast<int>(std::max<Index>(1, train.end / 5));
    const auto plan = make_cv_plan(train.end, config.cv, config.folds, width);
    result.selection = select_model(panel, result.donors, resolve_candidates(config), plan, config.alpha, config.norm);
    result.model = result.selection->best;
    clock.lap("select_model");
  }

  if (config.debias == DebiasMode::kSplit) {
    auto split = sample_split_debias(panel, result.donors, result.model, config.split_fraction,
                                     derive_seed(config.seed, 3));
    result.prediction = std::move(split.prediction);
    result.split_correction = std::move(split.correction);
  } else {
    result.prediction = fit_final(panel, result, panel.treated(), result.model, train, config.pool_mode);
  }
  clock.lap("final_fit");

  result.effects = estimate_effects(panel, result.prediction);
  if (config.inference == InferenceMode::kPlacebo) {
    PlaceboMatching matching;
    matching.covariates = config.two_phase ? covariates : nullptr;
    matching.ann = config.ann;
    matching.k = config.k;
    result.effects.p_value = placebo_pvalue(panel, result.eligible, result.model, result.effects.tau_hat,
                                            config.placebo_draws, derive_seed(config.seed, 4), &matching);
    result.effects.significant = result.effects.p_value < kSignificanceLevel;
    result.effects.inference = InferenceMode::kPlacebo;
  }
  clock.lap("effects");
  return result;
}

CounterfactualPrediction predict_with(const PanelMatrix& panel, const PipelineResult& result,
                                      const IndexSet& targets, const PipelineConfig& config) {
  const ColumnRange train = training_window(panel, config);
  auto pred = predict_counterfactual(panel, result.donors, targets, result.model, train);
  if (result.split_correction) apply_post_correction(pred, *result.split_correction);
  return pred;
}

}  // namespace synthctl
