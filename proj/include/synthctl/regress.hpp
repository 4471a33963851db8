#pragma once

// Phase 2: vertical-regression counterfactual predictors. Periods are the
// observations and donor units are the features; every treated unit is one
// label of a multi-task problem.

#include <Eigen/Dense>

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "synthctl/panel.hpp"

namespace synthctl {

enum class Method { kKnn, kPcr, kRidge, kPcrRidge, kPcrLasso, kLasso };

// Column centering applied to the donor matrix before the SVD in the PCR
// family. kColumn subtracts each period's donor mean.
enum class Centering { kNone, kColumn };

std::string method_name(Method method);
Method parse_method(const std::string& name);
std::string centering_name(Centering center);
Centering parse_centering(const std::string& name);

// Position in the "simpler first" order used to break ties in selection.
int method_complexity(Method method);

struct ModelSpec {
  Method method = Method::kRidge;
  int k = 5;            // knn neighbors
  double lambda = 1.0;  // ridge, lasso, pcr_ridge, pcr_lasso
  int rank = 0;         // pcr rank override; 0 selects by hard threshold
  bool intercept = true;
  Centering center = Centering::kNone;

  void validate() const;
  // Primary hyperparameter as a real, for reporting and tie-breaking.
  double hyper_value() const;
  std::string label() const;
  bool operator==(const ModelSpec&) const = default;
};

// Key-value block, e.g. "method = ridge\nlambda = 0.1\n...".
std::string to_config(const ModelSpec& spec);
ModelSpec spec_from_config(const std::map<std::string, std::string>& kv);

struct FittedModel {
  ModelSpec spec;
  // Donor-space weights, donors x targets. Every method reduces to
  // yhat(target, t) = intercept(target) + weights.col(target) . x_t where x_t
  // is the donor column at period t (centered first when spec.center is
  // kColumn).
  Eigen::MatrixXd weights;
  Eigen::VectorXd intercepts;
  // PCR family only: coefficients on latent donors (components x targets),
  // the latent basis (top rows of V^T over the training columns) and the
  // donor singular values.
  Eigen::MatrixXd latent_coefficients;
  Eigen::MatrixXd basis;
  Eigen::VectorXd singular_values;
  int rank = 0;
  Index train_columns = 0;
  // Lasso family: false when coordinate descent hit its sweep cap.
  bool converged = true;
  int sweeps = 0;

  Index donor_count() const { return weights.rows(); }
  Index target_count() const { return weights.cols(); }

  // donor_columns: donors x c outcome block. Returns targets x c.
  Eigen::MatrixXd predict(const Eigen::MatrixXd& donor_columns) const;
};

// Fits `spec` with donor_train (donors x T_train) as features and
// target_train (targets x T_train) as labels.
FittedModel fit_model(const ModelSpec& spec, const Eigen::MatrixXd& donor_train,
                      const Eigen::MatrixXd& target_train);

// Minimizes ||y - B^T w - c||^2 + lambda ||w||^2 per target row y. Solves in
// the smaller of the donor (primal) and period (dual) Gram spaces.
FittedModel ridge_fit(const Eigen::MatrixXd& donor_pre, const Eigen::MatrixXd& treated_pre, double lambda,
                      bool intercept = true);

// Coordinate descent on 0.5 ||y - B^T w - c||^2 / T0 + lambda ||w||_1.
FittedModel lasso_fit(const Eigen::MatrixXd& donor_pre, const Eigen::MatrixXd& treated_pre, double lambda,
                      bool intercept = true);

constexpr double kLassoTolerance = 1e-7;
constexpr int kLassoMaxSweeps = 10000;
constexpr int kLassoPathPerDecade = 10;

struct LatentDonors {
  Eigen::VectorXd singular_values;  // nonincreasing
  Eigen::MatrixXd u;                // rows x r
  Eigen::MatrixXd vt;               // r x cols, orthonormal rows
};

// Thin SVD of the donor pre-period block, r = min(rows, cols).
LatentDonors latent_donors(const Eigen::MatrixXd& donor_pre);

// Median-based optimal hard threshold for unknown noise level:
// tau = omega(beta) * median(sv), omega from its cubic fit in the aspect
// ratio beta. Returns max(1, #{sv > tau}).
int hard_threshold_rank(const Eigen::VectorXd& singular_values, Index rows, Index cols);
double hard_threshold_omega(double beta);

struct CounterfactualPrediction {
  IndexSet targets;  // predicted rows, usually the treated units
  IndexSet donors;
  Eigen::MatrixXd yhat_pre;   // targets x t0, in-sample
  Eigen::MatrixXd yhat_post;  // targets x (T - t0)
  std::shared_ptr<const FittedModel> model;
};

// Fits on `train` (default: the whole pre-period) and predicts every period.
CounterfactualPrediction predict_counterfactual(const PanelMatrix& panel, const IndexSet& donors,
                                                const IndexSet& targets, const ModelSpec& spec);
CounterfactualPrediction predict_counterfactual(const PanelMatrix& panel, const IndexSet& donors,
                                                const IndexSet& targets, const ModelSpec& spec,
                                                ColumnRange train);

CounterfactualPrediction knn_predict(const PanelMatrix& panel, const IndexSet& donors, int k);
CounterfactualPrediction pcr_predict(const PanelMatrix& panel, const IndexSet& donors, int rank_override = 0);
CounterfactualPrediction pcr_ridge_predict(const PanelMatrix& panel, const IndexSet& donors, double lambda);
CounterfactualPrediction pcr_lasso_predict(const PanelMatrix& panel, const IndexSet& donors, double lambda);

// CSV `treated_id,donor_id_or_pc,coefficient`; PCR variants list their
// latent coefficients as pc1..pcr, others their donor weights. Intercepts
// appear under the name "(intercept)".
void write_coefficients_csv(const CounterfactualPrediction& pred, const PanelMatrix& panel,
                            const std::filesystem::path& path);

}  // namespace synthctl
