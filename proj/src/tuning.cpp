#include "synthctl/tuning.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <tuple>

#include "csv.hpp"
#include "synthctl/error.hpp"
#include "synthctl/parallel.hpp"

namespace synthctl {

Norm parse_norm(const std::string& name) {
  if (name == "l1") return Norm::kL1;
  if (name == "frobenius") return Norm::kFrobenius;
  throw Error(ErrorKind::kInvalidArgument, "unknown norm '" + name + "'");
}

std::string norm_name(Norm norm) { return norm == Norm::kL1 ? "l1" : "frobenius"; }

namespace {

void check_same_shape(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorKind::kShapeMismatch, "prediction and actual differ in shape");
  }
}

double matrix_norm(const Eigen::MatrixXd& m, Norm norm) {
  return norm == Norm::kL1 ? m.cwiseAbs().sum() : m.norm();
}

}  // namespace

double relative_error(const Eigen::MatrixXd& prediction, const Eigen::MatrixXd& actual, Norm norm) {
  check_same_shape(prediction, actual);
  const double denom = matrix_norm(actual, norm);
  if (!(denom > 0.0)) throw Error(ErrorKind::kZeroActualNorm, "actual block has zero norm");
  return matrix_norm(prediction - actual, norm) / denom;
}

double bias(const Eigen::MatrixXd& prediction, const Eigen::MatrixXd& actual) {
  check_same_shape(prediction, actual);
  if (actual.size() == 0) throw Error(ErrorKind::kInvalidArgument, "bias of an empty block");
  return (actual - prediction).mean();
}

LossReport make_loss(double relative_error, double bias, double alpha, Norm norm) {
  if (!(alpha >= 0.0)) throw Error(ErrorKind::kInvalidArgument, "alpha must be >= 0");
  return LossReport{relative_error, bias, relative_error + alpha * std::abs(bias), alpha, norm};
}

LossReport debiased_loss(const Eigen::MatrixXd& prediction, const Eigen::MatrixXd& actual, double alpha,
                         Norm norm) {
  if (!(alpha >= 0.0)) throw Error(ErrorKind::kInvalidArgument, "alpha must be >= 0");
  return make_loss(relative_error(prediction, actual, norm), bias(prediction, actual), alpha, norm);
}

CvScheme parse_cv_scheme(const std::string& name) {
  if (name == "holdout" || name == "holdout_tail") return CvScheme::kHoldoutTail;
  if (name == "rolling") return CvScheme::kRolling;
  throw Error(ErrorKind::kInvalidArgument, "unknown cv scheme '" + name + "'");
}

std::string cv_scheme_name(CvScheme scheme) { return scheme == CvScheme::kRolling ? "rolling" : "holdout"; }

CvPlan make_cv_plan(Index t0, CvScheme scheme, int folds, int val_width) {
  if (folds < 1 || val_width < 1) throw Error(ErrorKind::kInvalidArgument, "folds and val_width must be >= 1");
  const Index windows = scheme == CvScheme::kHoldoutTail ? 1 : folds;
  if (t0 - windows * val_width < 1) {
    throw Error(ErrorKind::kInsufficientColumns,
                "t0=" + std::to_string(t0) + " cannot hold " + std::to_string(windows) + " validation window(s) of " +
                    std::to_string(val_width) + " plus a training column");
  }
  CvPlan plan;
  plan.scheme = scheme;
  for (Index w = windows; w >= 1; --w) {
    const Index start = t0 - w * val_width;
    plan.folds.push_back({ColumnRange{0, start}, ColumnRange{start, start + val_width}});
  }
  return plan;
}

std::vector<double> default_lambda_grid() {
  std::vector<double> grid;
  for (int i = 0; i <= 16; ++i) grid.push_back(std::pow(10.0, -4.0 + 0.5 * i));
  return grid;
}

std::vector<ModelSpec> default_candidates(const std::vector<Method>& methods) {
  const std::vector<Method> all = {Method::kKnn, Method::kPcr, Method::kRidge, Method::kPcrRidge, Method::kPcrLasso};
  const auto& use = methods.empty() ? all : methods;
  std::vector<ModelSpec> out;
  for (Method m : use) {
    ModelSpec spec;
    spec.method = m;
    if (m == Method::kKnn) {
      for (int k : kDefaultKnnGrid) {
        spec.k = k;
        out.push_back(spec);
      }
    } else if (m == Method::kPcr) {
      spec.rank = 0;
      out.push_back(spec);
    } else {
      for (double lambda : default_lambda_grid()) {
        spec.lambda = lambda;
        out.push_back(spec);
      }
    }
  }
  return out;
}

std::vector<ModelSpec> candidates_from_config(const KeyValues& kv) {
  std::vector<Method> methods;
  if (auto it = kv.find("methods"); it != kv.end()) {
    for (const auto& name : parse_word_list(it->second)) methods.push_back(parse_method(name));
  }
  if (methods.empty()) {
    methods = {Method::kKnn, Method::kPcr, Method::kRidge, Method::kPcrRidge, Method::kPcrLasso, Method::kLasso};
  }
  std::vector<double> lambdas = default_lambda_grid();
  std::vector<double> ks(kDefaultKnnGrid.begin(), kDefaultKnnGrid.end());
  std::vector<double> ranks = {0.0};
  if (auto it = kv.find("lambda"); it != kv.end()) lambdas = parse_real_list(it->second);
  if (auto it = kv.find("k"); it != kv.end()) ks = parse_real_list(it->second);
  if (auto it = kv.find("rank"); it != kv.end()) ranks = parse_real_list(it->second);
  ModelSpec base;
  if (auto it = kv.find("intercept"); it != kv.end()) base.intercept = it->second == "true" || it->second == "1";
  if (auto it = kv.find("center"); it != kv.end()) base.center = parse_centering(it->second);

  std::vector<ModelSpec> out;
  for (Method m : methods) {
    ModelSpec spec = base;
    spec.method = m;
    const auto& values = m == Method::kKnn ? ks : m == Method::kPcr ? ranks : lambdas;
    for (double v : values) {
      if (m == Method::kKnn) spec.k = static_cast<int>(v);
      else if (m == Method::kPcr) spec.rank = static_cast<int>(v);
      else spec.lambda = v;
      spec.validate();
      out.push_back(spec);
    }
  }
  if (out.empty()) throw Error(ErrorKind::kConfigInvalid, "grid file yields no candidates");
  return out;
}

SelectionResult select_model(const PanelMatrix& panel, const IndexSet& donors,
                             const std::vector<ModelSpec>& candidates, const CvPlan& plan, double alpha,
                             Norm norm) {
  return select_model(panel, donors, panel.treated(), candidates, plan, alpha, norm);
}

SelectionResult select_model(const PanelMatrix& panel, const IndexSet& donors, const IndexSet& targets,
                             const std::vector<ModelSpec>& candidates, const CvPlan& plan, double alpha,
                             Norm norm) {
  if (candidates.empty()) throw Error(ErrorKind::kInvalidArgument, "no candidate models");
  if (plan.folds.empty()) throw Error(ErrorKind::kInvalidArgument, "empty CV plan");
  if (!(alpha >= 0.0)) throw Error(ErrorKind::kInvalidArgument, "alpha must be >= 0");

  SelectionResult result;
  result.cv_plan = plan;
  for (const auto& fold : plan.folds) {
    if (fold.validate.end > panel.t0() || fold.train.end > fold.validate.begin) {
      throw Error(ErrorKind::kInvalidArgument, "CV fold reaches past the pre-period");
    }
    result.last_scored_column = std::max(result.last_scored_column, fold.validate.end - 1);
  }

  const std::size_t n_folds = plan.folds.size();
  struct Score {
    double rel = 0.0;
    double bias = 0.0;
    bool ok = true;
    std::string reason;
  };
  std::vector<Score> scores(candidates.size() * n_folds);
  parallel_for(static_cast<std::int64_t>(scores.size()), [&](std::int64_t job) {
    const auto& spec = candidates[static_cast<std::size_t>(job) / n_folds];
    const auto& fold = plan.folds[static_cast<std::size_t>(job) % n_folds];
    Score& s = scores[static_cast<std::size_t>(job)];
    try {
      const auto pred = predict_counterfactual(panel, donors, targets, spec, fold.train);
      const Eigen::MatrixXd predicted = pred.yhat_pre.middleCols(fold.validate.begin, fold.validate.size());
      const Eigen::MatrixXd actual = gather(panel.outcomes(), targets, fold.validate);
      s.rel = relative_error(predicted, actual, norm);
      s.bias = bias(predicted, actual);
    } catch (const Error& e) {
      s.ok = false;
      s.reason = e.what();
    }
  });

  for (std::size_t c = 0; c < candidates.size(); ++c) {
    double rel = 0.0, b = 0.0;
    const Score* failed = nullptr;
    for (std::size_t f = 0; f < n_folds; ++f) {
      const Score& s = scores[c * n_folds + f];
      if (!s.ok) {
        failed = &s;
        break;
      }
      rel += s.rel;
      b += s.bias;
    }
    if (failed) {
      result.failures.push_back({candidates[c], failed->reason});
      continue;
    }
    const double folds = static_cast<double>(n_folds);
    result.leaderboard.push_back({candidates[c], make_loss(rel / folds, b / folds, alpha, norm)});
  }
  if (result.leaderboard.empty()) {
    throw Error(ErrorKind::kAllCandidatesFailed,
                "every candidate failed; first: " + (result.failures.empty() ? std::string() : result.failures[0].reason));
  }
  std::stable_sort(result.leaderboard.begin(), result.leaderboard.end(),
                   [](const LeaderboardEntry& a, const LeaderboardEntry& b) {
                     return std::make_tuple(a.loss.combined, std::abs(a.loss.bias), method_complexity(a.spec.method),
                                            a.spec.hyper_value()) <
                            std::make_tuple(b.loss.combined, std::abs(b.loss.bias), method_complexity(b.spec.method),
                                            b.spec.hyper_value());
                   });
  result.best = result.leaderboard.front().spec;
  return result;
}

void write_leaderboard_csv(const SelectionResult& result, const std::filesystem::path& path) {
  auto out = csv::open_out(path);
  out << "method,hyperparameters,relative_error,bias,combined\n";
  for (const auto& e : result.leaderboard) {
    const auto label = e.spec.label();
    const auto open = label.find('(');
    const auto hyper = label.substr(open + 1, label.size() - open - 2);
    out << method_name(e.spec.method) << ',' << hyper << ',' << csv::format_real(e.loss.relative_error) << ','
        << csv::format_real(e.loss.bias) << ',' << csv::format_real(e.loss.combined) << '\n';
  }
}

}  // namespace synthctl
