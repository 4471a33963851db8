#include "synthctl/effects.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>

#include "csv.hpp"
#include "synthctl/error.hpp"
#include "synthctl/parallel.hpp"
#include "synthctl/random.hpp"

namespace synthctl {

InferenceMode parse_inference(const std::string& name) {
  if (name == "ttest") return InferenceMode::kTTest;
  if (name == "placebo") return InferenceMode::kPlacebo;
  throw Error(ErrorKind::kInvalidArgument, "unknown inference mode '" + name + "'");
}

std::string inference_name(InferenceMode mode) { return mode == InferenceMode::kPlacebo ? "placebo" : "ttest"; }

double two_sided_t_pvalue(double t, double df) {
  if (std::isnan(t)) return 1.0;
  if (std::isinf(t)) return 0.0;
  boost::math::students_t dist(df);
  return std::clamp(2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t))), 0.0, 1.0);
}

namespace {

double sample_variance(const Eigen::VectorXd& v) {
  const double mean = v.mean();
  return (v.array() - mean).square().sum() / static_cast<double>(v.size() - 1);
}

// Standard errors at rounding level of the data count as zero, so exact
// fits do not turn 1e-16 residuals into significant effects.
Inference from_statistic(double estimate, double se, double df, double magnitude) {
  const double tol = 1e-9 * std::max(1.0, magnitude);
  if (!(se > tol)) return {se, std::abs(estimate) > tol ? 0.0 : 1.0};
  return {se, two_sided_t_pvalue(estimate / se, df)};
}

}  // namespace

Inference infer_pvalue(const Eigen::VectorXd& per_unit_effects) {
  const Index n = per_unit_effects.size();
  if (n < 2) throw Error(ErrorKind::kTooFewUnits, "t-test needs at least 2 units");
  const double se = std::sqrt(sample_variance(per_unit_effects) / static_cast<double>(n));
  return from_statistic(per_unit_effects.mean(), se, static_cast<double>(n - 1), per_unit_effects.cwiseAbs().maxCoeff());
}

Inference welch_test(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() < 2 || b.size() < 2) throw Error(ErrorKind::kTooFewUnits, "Welch test needs 2 units per group");
  const double va = sample_variance(a) / static_cast<double>(a.size());
  const double vb = sample_variance(b) / static_cast<double>(b.size());
  const double se = std::sqrt(va + vb);
  double df = 1.0;
  if (se > 0.0) {
    df = (va + vb) * (va + vb) /
         (va * va / static_cast<double>(a.size() - 1) + vb * vb / static_cast<double>(b.size() - 1));
  }
  return from_statistic(a.mean() - b.mean(), se, df, std::max(a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff()));
}

EffectReport effects_from_hte(Eigen::MatrixXd hte, IndexSet units) {
  if (hte.rows() != static_cast<Index>(units.size()) || hte.size() == 0) {
    throw Error(ErrorKind::kShapeMismatch, "effect matrix does not match unit list");
  }
  EffectReport report;
  report.per_unit_effects = hte.rowwise().mean();
  report.tau_hat = hte.mean();
  const auto inf = infer_pvalue(report.per_unit_effects);
  report.se = inf.se;
  report.p_value = inf.p_value;
  report.significant = report.p_value < kSignificanceLevel;
  report.hte = std::move(hte);
  report.units = std::move(units);
  return report;
}

EffectReport estimate_effects(const PanelMatrix& panel, const CounterfactualPrediction& pred) {
  const auto n = static_cast<Index>(pred.targets.size());
  if (pred.yhat_post.rows() != n || pred.yhat_post.cols() != panel.post_periods()) {
    throw Error(ErrorKind::kShapeMismatch, "prediction is " + std::to_string(pred.yhat_post.rows()) + "x" +
                                               std::to_string(pred.yhat_post.cols()) + ", expected " +
                                               std::to_string(n) + "x" + std::to_string(panel.post_periods()));
  }
  Eigen::MatrixXd observed = gather(panel.outcomes(), pred.targets, panel.post_range());
  return effects_from_hte(observed - pred.yhat_post, pred.targets);
}

double placebo_pvalue(const PanelMatrix& panel, const IndexSet& donors, const ModelSpec& model, double tau_hat,
                      int draws, std::uint64_t seed, const PlaceboMatching* matching) {
  if (draws < 1) throw Error(ErrorKind::kInvalidArgument, "placebo draws must be >= 1");
  const std::size_t n = panel.treated().size();
  if (donors.size() < n + 1) {
    throw Error(ErrorKind::kInsufficientDonors, std::to_string(donors.size()) + " donors cannot supply placebo sets of " +
                                                    std::to_string(n) + " plus a donor pool");
  }
  std::vector<double> placebo(static_cast<std::size_t>(draws));
  parallel_for(draws, [&](std::int64_t d) {
    auto rng = make_rng(seed, 0x91ace + static_cast<std::uint64_t>(d));
    IndexSet shuffled = donors;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    IndexSet pseudo(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n));
    std::sort(pseudo.begin(), pseudo.end());
    IndexSet pool = set_difference(donors, pseudo);
    if (matching && matching->covariates) {
      AnnParams params = matching->ann;
      params.seed = derive_seed(seed, static_cast<std::uint64_t>(d));
      const auto index = build_index(*matching->covariates, pool, params);
      pool = match_donors(index, *matching->covariates, pseudo, matching->k).donor_union;
    }
    const auto pred = predict_counterfactual(panel, pool, pseudo, model);
    const Eigen::MatrixXd observed = gather(panel.outcomes(), pseudo, panel.post_range());
    placebo[static_cast<std::size_t>(d)] = (observed - pred.yhat_post).mean();
  });
  const auto extreme = std::count_if(placebo.begin(), placebo.end(),
                                     [&](double t) { return std::abs(t) >= std::abs(tau_hat); });
  return static_cast<double>(1 + extreme) / static_cast<double>(draws + 1);
}

Eigen::RowVectorXd split_bias_correction(const Eigen::MatrixXd& holdout_predicted_post,
                                         const Eigen::MatrixXd& holdout_actual_post) {
  if (holdout_predicted_post.rows() != holdout_actual_post.rows() ||
      holdout_predicted_post.cols() != holdout_actual_post.cols()) {
    throw Error(ErrorKind::kShapeMismatch, "hold-out prediction and actual differ in shape");
  }
  if (holdout_actual_post.rows() == 0) throw Error(ErrorKind::kEmptySplit, "empty hold-out split");
  return (holdout_actual_post - holdout_predicted_post).colwise().mean();
}

void apply_post_correction(CounterfactualPrediction& pred, const Eigen::RowVectorXd& correction) {
  if (correction.size() != pred.yhat_post.cols()) {
    throw Error(ErrorKind::kShapeMismatch, "correction length does not match post periods");
  }
  pred.yhat_post.rowwise() += correction;
}

SplitDebias sample_split_debias(const PanelMatrix& panel, const IndexSet& donors, const ModelSpec& model,
                                double split_fraction, std::uint64_t seed) {
  if (!(split_fraction > 0.0 && split_fraction < 1.0)) {
    throw Error(ErrorKind::kEmptySplit, "split fraction must lie strictly inside (0, 1)");
  }
  IndexSet shuffled = donors;
  auto rng = make_rng(seed, 0x5b117);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  const auto train_size = static_cast<std::size_t>(std::llround(split_fraction * static_cast<double>(donors.size())));
  if (train_size == 0 || train_size >= donors.size()) {
    throw Error(ErrorKind::kEmptySplit, "split of " + std::to_string(donors.size()) + " donors leaves a side empty");
  }
  SplitDebias out;
  out.train_split.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(train_size));
  out.holdout_split.assign(shuffled.begin() + static_cast<std::ptrdiff_t>(train_size), shuffled.end());
  std::sort(out.train_split.begin(), out.train_split.end());
  std::sort(out.holdout_split.begin(), out.holdout_split.end());

  out.prediction = predict_counterfactual(panel, out.train_split, panel.treated(), model);
  const auto holdout = predict_counterfactual(panel, out.train_split, out.holdout_split, model);
  const Eigen::MatrixXd actual = gather(panel.outcomes(), out.holdout_split, panel.post_range());
  out.correction = split_bias_correction(holdout.yhat_post, actual);
  apply_post_correction(out.prediction, out.correction);
  return out;
}

void write_hte_csv(const EffectReport& report, const PanelMatrix& panel, const std::filesystem::path& path) {
  auto out = csv::open_out(path);
  out << "unit_id,period,effect\n";
  for (Index i = 0; i < report.hte.rows(); ++i) {
    for (Index t = 0; t < report.hte.cols(); ++t) {
      out << panel.unit_ids()[report.units[i]] << ',' << (panel.t0() + t + 1) << ','
          << csv::format_real(report.hte(i, t)) << '\n';
    }
  }
}

void write_unit_effects_csv(const EffectReport& report, const PanelMatrix& panel,
                            const std::filesystem::path& path) {
  auto out = csv::open_out(path);
  out << "unit_id,effect\n";
  for (Index i = 0; i < report.per_unit_effects.size(); ++i) {
    out << panel.unit_ids()[report.units[i]] << ',' << csv::format_real(report.per_unit_effects(i)) << '\n';
  }
}

}  // namespace synthctl
