#include <doctest.h>

#include <json.hpp>

#include <fstream>

#include "helpers.hpp"
#include "synthctl/parallel.hpp"
#include "synthctl/validation.hpp"

using namespace synthctl;
using testing::error_kind_of;

namespace {

EffectSummary reported(double tau, double p) { return {tau, p < kSignificanceLevel}; }

SimConfig small_config(std::uint64_t seed) {
  SimConfig cfg;
  cfg.units = 600;
  cfg.treated = 40;
  cfg.control = 40;
  cfg.periods = 30;
  cfg.t0 = 20;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("A/B-ST verdicts from published rows") {
  const auto gt = reported(-0.14, 0.47);
  CHECK_FALSE(ab_st_pass(gt, reported(-0.42, 0.01)));
  CHECK(ab_st_pass(gt, reported(-0.28, 0.10)));
  CHECK(ab_st_pass(reported(0.17, 0.01), reported(0.31, 0.01)));
  CHECK_FALSE(ab_st_pass(reported(0.17, 0.01), reported(-0.31, 0.01)));
  CHECK_FALSE(ab_st_pass(reported(0.17, 0.01), reported(0.31, 0.20)));
  CHECK(ab_st_pass(gt, reported(0.05, 0.60)));
}

TEST_CASE("A/A-ST verdicts from published rows") {
  CHECK(aa_st_pass(reported(0.13, 0.47)));
  CHECK_FALSE(aa_st_pass(reported(-0.37, 0.001)));
  CHECK(aa_st_pass(reported(0.0, 1.0)));
}

TEST_CASE("ground truth on a noiseless constant shift") {
  std::mt19937_64 rng(1);
  const Index n = 4, T = 6, t0 = 3;
  Eigen::MatrixXd y(3 * n, T);
  const Eigen::MatrixXd base = testing::gaussian(n, T, rng);
  y.topRows(n) = base;
  y.middleRows(n, n) = base;
  y.bottomRows(n) = testing::gaussian(n, T, rng);
  y.topRows(n).rightCols(T - t0).array() += 2.0;
  ExperimentBundle bundle{testing::make_panel(y, t0, {0, 1, 2, 3}),
                          CovariateTable(testing::numbered_ids(3 * n), testing::gaussian(3 * n, 2, rng)),
                          {4, 5, 6, 7},
                          std::nullopt};
  const auto gt = ab_ground_truth(bundle);
  CHECK(gt.tau_hat == doctest::Approx(2.0));
  CHECK(gt.significant);

  ExperimentBundle empty = bundle;
  empty.control.clear();
  CHECK(error_kind_of([&] { ab_ground_truth(empty); }) == ErrorKind::kEmptyControl);
  ExperimentBundle overlap = bundle;
  overlap.control = {3, 4};
  CHECK_THROWS_AS(ab_ground_truth(overlap), Error);
}

TEST_CASE("A/A-ST passes when counterfactuals share the control distribution") {
  int passes = 0;
  for (int seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    const Index n = 50;
    Eigen::MatrixXd y = testing::gaussian(3 * n, 8, rng);
    ExperimentBundle bundle{testing::make_panel(y, 4, [&] {
                              IndexSet t;
                              for (Index i = 0; i < n; ++i) t.push_back(i);
                              return t;
                            }()),
                            CovariateTable(testing::numbered_ids(3 * n), Eigen::MatrixXd::Zero(3 * n, 1)),
                            {},
                            std::nullopt};
    for (Index i = n; i < 2 * n; ++i) bundle.control.push_back(i);
    CounterfactualPrediction pred;
    pred.targets = bundle.panel.treated();
    pred.yhat_pre = Eigen::MatrixXd::Zero(n, 4);
    pred.yhat_post = testing::gaussian(n, 4, rng);
    const auto aa = aa_st_validate(bundle, pred);
    passes += aa.pass;
    CHECK(std::abs(aa.report.tau_hat) < 0.5);
  }
  CHECK(passes >= 90);
}

TEST_CASE("simulated ground truth has the nominal size") {
  int quiet = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto cfg = small_config(seed);
    cfg.units = 300;
    quiet += !ab_ground_truth(simulate_panel(cfg)).significant;
  }
  MESSAGE("non-significant in " << quiet << "/100");
  CHECK(quiet >= 93);
}

TEST_CASE("noiseless panels are recovered exactly by ridge") {
  auto cfg = small_config(4);
  cfg.noise_scale = 0.0;
  cfg.heterogeneity = 0.0;
  const auto bundle = simulate_panel(cfg);
  const auto donors = set_difference(bundle.panel.donors(), bundle.control);
  ModelSpec ridge;
  ridge.lambda = 1e-4;
  const auto pred = predict_counterfactual(bundle.panel, donors, bundle.panel.treated(), ridge);
  const Eigen::MatrixXd truth = bundle.truth->y0_treated.rightCols(bundle.panel.post_periods());
  const double err = relative_error(pred.yhat_post, truth, Norm::kL1);
  MESSAGE("noiseless relative error " << err);
  CHECK(err < 1e-4);
}

TEST_CASE("simulation is bit-reproducible across runs and thread counts") {
  auto cfg = small_config(9);
  cfg.drift = 0.5;
  set_thread_count(1);
  const auto a = simulate_panel(cfg);
  set_thread_count(4);
  const auto b = simulate_panel(cfg);
  set_thread_count(0);
  CHECK(a.panel.outcomes() == b.panel.outcomes());
  CHECK(a.covariates.covariates() == b.covariates.covariates());
  CHECK(a.control == b.control);
  cfg.seed = 10;
  CHECK(simulate_panel(cfg).panel.outcomes() != a.panel.outcomes());
}

TEST_CASE("tau_true is added to the treated post block only") {
  auto cfg = small_config(5);
  cfg.tau_true = 1.5;
  const auto bundle = simulate_panel(cfg);
  const auto& panel = bundle.panel;
  const Eigen::MatrixXd observed = gather(panel.outcomes(), panel.treated(), {0, panel.periods()});
  const Eigen::MatrixXd gap = observed - bundle.truth->y0_treated;
  CHECK(gap.leftCols(panel.t0()).cwiseAbs().maxCoeff() == 0.0);
  CHECK((gap.rightCols(panel.post_periods()).array() - 1.5).abs().maxCoeff() < 1e-12);
}

TEST_CASE("control units never become donors") {
  const auto bundle = simulate_panel(small_config(6));
  PipelineConfig config;
  config.candidates = default_candidates({Method::kRidge});
  for (bool two_phase : {true, false}) {
    config.two_phase = two_phase;
    config.subsample = two_phase ? 1.0 : 0.5;
    const auto v = validate_bundle(bundle, config);
    for (Index r : v.run.donors) CHECK_FALSE(std::binary_search(bundle.control.begin(), bundle.control.end(), r));
    for (Index r : v.run.eligible) CHECK_FALSE(std::binary_search(bundle.control.begin(), bundle.control.end(), r));
    CHECK(v.ab_st_pass == ab_st_pass(summarize(v.ab_ground_truth), summarize(v.ab_st)));
    CHECK(v.aa_st_pass == aa_st_pass(summarize(v.aa_st)));
  }
}

TEST_CASE("staleness study on a stationary panel") {
  auto cfg = small_config(7);
  cfg.periods = 40;
  cfg.t0 = 30;
  PipelineConfig config;
  config.candidates = default_candidates({Method::kPcrRidge});
  const auto study = staleness_study(simulate_panel(cfg), 5, config);
  CHECK(study.fresh.label == "fresh");
  CHECK(study.stale.run.prediction.model->train_columns == 25);
  CHECK(study.fresh.aa_st_pass == study.stale.aa_st_pass);
  CHECK(study.fresh.ab_st_pass == study.stale.ab_st_pass);
  CHECK(error_kind_of([&] { staleness_study(cfg, 5, config); }) == ErrorKind::kConfigInvalid);
  CHECK(error_kind_of([&] { staleness_study(simulate_panel(cfg), 29, config); }) == ErrorKind::kInsufficientColumns);
}

TEST_CASE("sim config parsing") {
  const auto cfg = sim_config_from(parse_key_values("N = 100\nn = 10\ncontrol = 10\nT = 20\nt0 = 15\ndrift = 0.5\n"));
  CHECK(cfg.units == 100);
  CHECK(cfg.t0 == 15);
  CHECK(cfg.drift == 0.5);
  CHECK(sim_config_from(parse_key_values(to_config(cfg))).drift == 0.5);
  CHECK(error_kind_of([] { sim_config_from(parse_key_values("bogus = 1\n")); }) == ErrorKind::kConfigInvalid);
  CHECK(error_kind_of([] { sim_config_from(parse_key_values("t0 = 99\n")); }) == ErrorKind::kConfigInvalid);
}

TEST_CASE("bundle files round trip") {
  auto cfg = small_config(8);
  cfg.tau_true = 0.5;
  const auto bundle = simulate_panel(cfg);
  const auto dir = testing::scratch("bundle");
  write_bundle(bundle, dir);
  const auto back = load_bundle(dir / "outcomes.csv", dir / "treated.txt", dir / "covariates.csv",
                                dir / "control.txt", cfg.t0);
  CHECK(back.panel.unit_ids() == bundle.panel.unit_ids());
  CHECK(back.control == bundle.control);
  CHECK((back.panel.outcomes() - bundle.panel.outcomes()).cwiseAbs().maxCoeff() < 1e-12);
  std::ifstream in(dir / "truth.json");
  const auto truth = nlohmann::json::parse(in);
  CHECK(truth.at("tau_true").get<double>() == 0.5);
  CHECK(truth.at("t0").get<int>() == cfg.t0);
}

TEST_CASE("verdict CSV layout") {
  ValidationVerdict v;
  v.label = "C";
  v.model = "ridge(lambda=1)";
  const auto dir = testing::scratch("verdicts");
  write_verdicts_csv(std::span<const ValidationVerdict>(&v, 1), dir / "v.csv");
  std::ifstream in(dir / "v.csv");
  std::string header, line;
  std::getline(in, header);
  std::getline(in, line);
  CHECK(header.rfind("experiment,ab_tau,ab_p", 0) == 0);
  CHECK(line.rfind("C,", 0) == 0);
}
