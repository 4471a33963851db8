#pragma once

// Loss metrics, temporal cross-validation and model selection.

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "synthctl/config.hpp"
#include "synthctl/panel.hpp"
#include "synthctl/regress.hpp"

namespace synthctl {

enum class Norm { kL1, kFrobenius };
Norm parse_norm(const std::string& name);
std::string norm_name(Norm norm);

// ||prediction - actual|| / ||actual||.
double relative_error(const Eigen::MatrixXd& prediction, const Eigen::MatrixXd& actual, Norm norm);
// Mean of (actual - prediction) over all entries.
double bias(const Eigen::MatrixXd& prediction, const Eigen::MatrixXd& actual);

struct LossReport {
  double relative_error = 0.0;
  double bias = 0.0;
  double combined = 0.0;  // relative_error + alpha * |bias|
  double alpha = 0.0;
  Norm norm = Norm::kL1;
};

constexpr double kDefaultAlpha = 20.0;
inline const std::vector<double> kAlphaSweep = {0.0, 1.0, 5.0, 10.0, 20.0, 50.0};

LossReport make_loss(double relative_error, double bias, double alpha, Norm norm);
LossReport debiased_loss(const Eigen::MatrixXd& prediction, const Eigen::MatrixXd& actual, double alpha,
                         Norm norm);

enum class CvScheme { kHoldoutTail, kRolling };
CvScheme parse_cv_scheme(const std::string& name);
std::string cv_scheme_name(CvScheme scheme);

struct CvFold {
  ColumnRange train;
  ColumnRange validate;
};

struct CvPlan {
  std::vector<CvFold> folds;
  CvScheme scheme = CvScheme::kHoldoutTail;
};

// Temporal folds inside the first `t0` columns. Holdout: one fold with the
// last val_width columns held out. Rolling: `folds` consecutive tail windows
// of width val_width, each trained on every column before it.
CvPlan make_cv_plan(Index t0, CvScheme scheme, int folds, int val_width);

struct LeaderboardEntry {
  ModelSpec spec;
  LossReport loss;
};

struct CandidateFailure {
  ModelSpec spec;
  std::string reason;
};

struct SelectionResult {
  ModelSpec best;
  std::vector<LeaderboardEntry> leaderboard;  // best first
  std::vector<CandidateFailure> failures;
  CvPlan cv_plan;
  Index last_scored_column = -1;  // always < t0
};

// Scores every candidate on every fold against the targets' observed
// validation columns; a candidate's loss uses the mean fold relative error
// and the mean fold bias. Ties: smaller |bias|, simpler method, smaller
// hyperparameter.
SelectionResult select_model(const PanelMatrix& panel, const IndexSet& donors,
                             const std::vector<ModelSpec>& candidates, const CvPlan& plan, double alpha,
                             Norm norm);
SelectionResult select_model(const PanelMatrix& panel, const IndexSet& donors, const IndexSet& targets,
                             const std::vector<ModelSpec>& candidates, const CvPlan& plan, double alpha,
                             Norm norm);

// 17 log-spaced points on [1e-4, 1e4].
std::vector<double> default_lambda_grid();
inline const std::vector<int> kDefaultKnnGrid = {1, 2, 5, 10, 20};

// Grid over the listed methods. Empty `methods` means knn, pcr, ridge, pcr_ridge and pcr_lasso; plain lasso
// must be requested.
std::vector<ModelSpec> default_candidates(const std::vector<Method>& methods = {});

// Overrides from a key-value file: methods, lambda, k, rank, intercept,
// center.
std::vector<ModelSpec> candidates_from_config(const KeyValues& kv);

void write_leaderboard_csv(const SelectionResult& result, const std::filesystem::path& path);

}  // namespace synthctl
