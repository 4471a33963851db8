#pragma once

// Validation against experiments that kept a real control arm, verdict
// rules, and the synthetic low-rank panel generator used as ground truth.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "synthctl/config.hpp"
#include "synthctl/effects.hpp"
#include "synthctl/pipeline.hpp"

namespace synthctl {

struct SimTruth {
  double tau_true = 0.0;
  Eigen::MatrixXd y0_treated;  // untreated outcomes of the treated rows, n x T
  Eigen::MatrixXd loadings;    // N x r
  Eigen::MatrixXd factors;     // T x r
};

struct ExperimentBundle {
  PanelMatrix panel;
  CovariateTable covariates;
  IndexSet control;  // labeled control arm; never a donor
  std::optional<SimTruth> truth;
};

// Checks control is non-empty, in range and disjoint from treated.
void check_bundle(const ExperimentBundle& bundle);

struct SimConfig {
  Index units = 5000;       // N
  Index treated = 200;      // n
  Index control = 200;
  Index periods = 60;       // T
  Index t0 = 40;
  Index covariates = 4;     // p
  Index rank = 3;           // latent factors r
  double factor_scale = 1.0;
  double noise_scale = 1.0;
  double tau_true = 0.0;
  // Shift and concentration of the treated/control covariate region.
  double heterogeneity = 1.0;
  // Covariate-dependent linear trend added to every unit.
  double drift = 0.0;
  // Unit scale is exp(scale_dispersion * x1); larger values give the donor
  // population heavier outcome tails than the concentrated experiment.
  double scale_dispersion = 0.35;
  std::uint64_t seed = 0;

  void validate() const;
};

SimConfig sim_config_from(const KeyValues& kv, SimConfig base = {});
std::string to_config(const SimConfig& cfg);

// Y_it(0) = u_i . v_t + drift_t(i) + eps_it with covariate-driven loadings,
// smooth factor paths and Student-t(4) noise. Rows are ordered treated,
// control, donors.
ExperimentBundle simulate_panel(const SimConfig& cfg);

// Sign/significance pair as reported in a results table.
struct EffectSummary {
  double tau = 0.0;
  bool significant = false;
};
EffectSummary summarize(const EffectReport& report);

// A/B-ST passes when significance agrees at 0.05 and, if the ground truth
// is significant, the signs agree too.
bool ab_st_pass(const EffectSummary& ground_truth, const EffectSummary& estimate);
// A/A-ST passes when the estimate is not significant.
bool aa_st_pass(const EffectSummary& estimate);

// Treated minus control post-period means, Welch test on unit means.
EffectReport ab_ground_truth(const ExperimentBundle& bundle);

struct CheckedReport {
  EffectReport report;
  bool pass = false;
};

CheckedReport ab_st_validate(const ExperimentBundle& bundle, const CounterfactualPrediction& pred,
                             const EffectReport& ground_truth);
// Observed control post mean minus the treated counterfactual post mean,
// Welch test with units as the sampling level.
CheckedReport aa_st_validate(const ExperimentBundle& bundle, const CounterfactualPrediction& pred);

struct ValidationVerdict {
  std::string label;
  std::string model;
  EffectReport ab_ground_truth;
  EffectReport ab_st;
  EffectReport aa_st;
  bool ab_st_pass = false;
  bool aa_st_pass = false;
  // Prediction bias (actual minus predicted) over the treated post block
  // when the simulation truth is known, else the negated A/A-ST effect.
  double post_bias = 0.0;
  // l1 relative error of the counterfactual for the control arm.
  double control_relative_error = 0.0;
  PipelineResult run;

  bool all_pass() const { return ab_st_pass && aa_st_pass; }
};

// Runs the pipeline with the control arm barred from every donor set and
// scores both validations.
ValidationVerdict validate_bundle(const ExperimentBundle& bundle, PipelineConfig config, std::string label = "");

struct StalenessResult {
  ValidationVerdict fresh;
  ValidationVerdict stale;
};

StalenessResult staleness_study(const ExperimentBundle& bundle, Index stale_gap, const PipelineConfig& config);
StalenessResult staleness_study(const SimConfig& cfg, Index stale_gap, const PipelineConfig& config);

// CSV: experiment,ab_tau,ab_p,ab_significant,ab_st_tau,ab_st_p,ab_st_significant,
// aa_st_tau,aa_st_p,aa_st_significant,model,ab_st_pass,aa_st_pass
void write_verdicts_csv(std::span<const ValidationVerdict> verdicts, const std::filesystem::path& path);

// outcomes.csv, treated.txt, covariates.csv, control.txt and, for simulated
// bundles, truth.json.
void write_bundle(const ExperimentBundle& bundle, const std::filesystem::path& dir);
ExperimentBundle load_bundle(const std::filesystem::path& outcomes, const std::filesystem::path& treated,
                             const std::filesystem::path& covariates, const std::filesystem::path& control,
                             Index t0);

}  // namespace synthctl
