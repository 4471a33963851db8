#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "synthctl/matching.hpp"
#include "synthctl/panel.hpp"
#include "synthctl/regress.hpp"

namespace synthctl {

constexpr double kSignificanceLevel = 0.05;

enum class InferenceMode { kTTest, kPlacebo };
InferenceMode parse_inference(const std::string& name);
std::string inference_name(InferenceMode mode);

struct EffectReport {
  double tau_hat = 0.0;
  double se = 0.0;
  double p_value = 1.0;
  bool significant = false;
  Eigen::MatrixXd hte;               // units x post periods
  Eigen::VectorXd per_unit_effects;  // row means of hte
  IndexSet units;
  InferenceMode inference = InferenceMode::kTTest;
};

struct Inference {
  double se = 0.0;
  double p_value = 1.0;
};

// Two-sided Student-t tail probability.
double two_sided_t_pvalue(double t, double df);

// One-sample t-test of the per-unit effects against zero (units are the
// sampling level). A standard error below 1e-9 times the largest |effect|
// (or 1e-9) counts as zero: p = 1 when the mean is also zero, p = 0
// otherwise.
Inference infer_pvalue(const Eigen::VectorXd& per_unit_effects);

// Welch two-sample t-test on mean(a) - mean(b).
Inference welch_test(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

// hte = observed - predicted over the post-period of pred.targets; tau_hat
// is its mean; inference by infer_pvalue.
EffectReport estimate_effects(const PanelMatrix& panel, const CounterfactualPrediction& pred);

// Builds a report from a precomputed effect matrix.
EffectReport effects_from_hte(Eigen::MatrixXd hte, IndexSet units);

// Optional phase-1 matching replayed inside each placebo draw.
struct PlaceboMatching {
  const CovariateTable* covariates = nullptr;
  AnnParams ann;
  int k = 10;
};

// Re-runs the pipeline `draws` times with random donor subsets of the
// treated-set size playing the treated role. Returns
// (1 + #{|placebo tau| >= |tau_hat|}) / (draws + 1).
double placebo_pvalue(const PanelMatrix& panel, const IndexSet& donors, const ModelSpec& model, double tau_hat,
                      int draws, std::uint64_t seed, const PlaceboMatching* matching = nullptr);

// Per post-period column mean of (actual - predicted) on hold-out units.
Eigen::RowVectorXd split_bias_correction(const Eigen::MatrixXd& holdout_predicted_post,
                                         const Eigen::MatrixXd& holdout_actual_post);
void apply_post_correction(CounterfactualPrediction& pred, const Eigen::RowVectorXd& correction);

struct SplitDebias {
  CounterfactualPrediction prediction;  // corrected treated predictions
  Eigen::RowVectorXd correction;
  IndexSet train_split;
  IndexSet holdout_split;
};

// Fits on a random `split_fraction` of the donors, measures the per-period
// bias on the remaining donors' post-period and shifts the treated
// predictions by it.
SplitDebias sample_split_debias(const PanelMatrix& panel, const IndexSet& donors, const ModelSpec& model,
                                double split_fraction, std::uint64_t seed);

void write_hte_csv(const EffectReport& report, const PanelMatrix& panel, const std::filesystem::path& path);
void write_unit_effects_csv(const EffectReport& report, const PanelMatrix& panel,
                            const std::filesystem::path& path);

}  // namespace synthctl
