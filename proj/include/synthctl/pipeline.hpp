#pragma once

// End-to-end estimation: donor eligibility, phase-1 matching (or random
// subsampling), model selection, final fit, effects.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "synthctl/effects.hpp"
#include "synthctl/matching.hpp"
#include "synthctl/panel.hpp"
#include "synthctl/regress.hpp"
#include "synthctl/tuning.hpp"

namespace synthctl {

enum class PoolMode { kUnion, kPerUnit };
PoolMode parse_pool_mode(const std::string& name);
std::string pool_mode_name(PoolMode mode);

enum class DebiasMode { kNone, kSplit };
DebiasMode parse_debias_mode(const std::string& name);
std::string debias_mode_name(DebiasMode mode);

struct PipelineConfig {
  bool two_phase = true;
  // Fraction of eligible donors kept by random subsampling; 1 keeps all.
  // Applied before matching in two-phase mode, instead of it otherwise.
  double subsample = 1.0;
  int k = 10;
  AnnParams ann;
  PoolMode pool_mode = PoolMode::kUnion;
  std::vector<std::string> exclude_ids;
  // Rows that may never serve as donors (e.g. an experiment's control arm).
  IndexSet barred;

  std::vector<ModelSpec> candidates;  // empty: default grid
  std::optional<ModelSpec> fixed_model;
  Centering center = Centering::kNone;
  CvScheme cv = CvScheme::kHoldoutTail;
  int folds = 3;
  int val_width = 0;  // 0: max(1, train_end / 5)
  double alpha = kDefaultAlpha;
  Norm norm = Norm::kL1;

  DebiasMode debias = DebiasMode::kNone;
  double split_fraction = 0.5;
  InferenceMode inference = InferenceMode::kTTest;
  int placebo_draws = 100;

  // Training window is [0, train_end); 0 means t0. Smaller values model a
  // stale training set.
  Index train_end = 0;
  std::uint64_t seed = 0;
};

struct PipelineResult {
  IndexSet eligible;      // donors before filtering
  IndexSet donors;        // donors used by phase 2
  std::optional<DonorFilter> filter;
  std::optional<SelectionResult> selection;
  ModelSpec model;
  CounterfactualPrediction prediction;
  EffectReport effects;
  std::optional<Eigen::RowVectorXd> split_correction;
  std::vector<std::pair<std::string, double>> timings;  // stage, seconds
};

// Donor rows after removing barred rows and explicit exclusions.
IndexSet eligible_donors(const PanelMatrix& panel, const IndexSet& barred,
                         const std::vector<std::string>& exclude_ids);

PipelineResult run_pipeline(const PanelMatrix& panel, const CovariateTable* covariates,
                            const PipelineConfig& config);

// Predicts arbitrary untreated `targets` with the donors and model of a
// finished run (same training window).
CounterfactualPrediction predict_with(const PanelMatrix& panel, const PipelineResult& result,
                                      const IndexSet& targets, const PipelineConfig& config);

}  // namespace synthctl
