#include <CLI11.hpp>

#include <iostream>

#include "cli.hpp"
#include "synthctl/error.hpp"
#include "synthctl/version.hpp"

using synthctl::cli::Invocation;

namespace {

struct Builder {
  Invocation& inv;
  CLI::App* sub;

  Builder& opt(const std::string& flag, const std::string& key, const std::string& help) {
    auto& flags = inv.flags;
    sub->add_option_function<std::string>(
        flag, [&flags, key](const std::string& v) { flags[key] = v; }, help);
    return *this;
  }
  Builder& on(const std::string& flag, const std::string& key, const std::string& value, const std::string& help) {
    auto& flags = inv.flags;
    sub->add_flag_callback(flag, [&flags, key, value] { flags[key] = value; }, help);
    return *this;
  }
};

void data_options(Builder b) {
  b.opt("--outcomes", "outcomes", "wide outcome CSV: unit_id,t1,...,tT")
      .opt("--treated", "treated", "treated unit ids, one per line")
      .opt("--covariates", "covariates", "covariate CSV: unit_id,x1,...,xp")
      .opt("--control", "control", "control-arm unit ids; never used as donors")
      .opt("--t0", "t0", "number of pre-treatment periods")
      .opt("--exclude-file", "exclude_file", "donor ids to drop (spillover)")
      .opt("--k", "k", "neighbors per treated unit")
      .opt("--trees", "trees", "random-projection trees")
      .opt("--leaf-size", "leaf_size", "points per tree leaf")
      .opt("--metric", "metric", "euclidean | cosine")
      .opt("--subsample", "subsample", "fraction of eligible donors kept at random")
      .on("--single-phase", "two_phase", "false", "skip covariate matching")
      .on("--exact", "exact", "true", "brute-force neighbor search")
      .on("--raw-covariates", "standardize", "false", "match on unscaled covariates");
}

void model_options(Builder b) {
  b.opt("--alpha", "alpha", "bias weight in the selection loss")
      .opt("--norm", "norm", "l1 | frobenius")
      .opt("--cv", "cv", "holdout | rolling")
      .opt("--folds", "folds", "rolling folds")
      .opt("--val-width", "val_width", "validation columns per fold (0: t0/5)")
      .opt("--grid", "grid", "key-value file overriding the candidate grid")
      .opt("--methods", "methods", "comma list: knn,pcr,ridge,pcr_ridge,pcr_lasso,lasso")
      .opt("--center", "center", "none | column")
      .opt("--pool-mode", "pool_mode", "union | per-unit")
      .opt("--debias", "debias", "none | split")
      .opt("--split-fraction", "split_fraction", "donor share used for fitting when debiasing")
      .opt("--inference", "inference", "ttest | placebo")
      .opt("--placebo-draws", "placebo_draws", "placebo replications")
      .opt("--train-end", "train_end", "training window end column (0: t0)")
      .opt("--stale-gap", "stale_gap", "columns between the training window and t0");
}

}  // namespace

int main(int argc, char** argv) {
  Invocation inv;
  CLI::App app{"Synthetic control estimation from large donor pools", "synthctl"};
  app.set_version_flag("--version", std::string(synthctl::kVersion));
  app.require_subcommand(1);
  app.fallthrough();

  std::string config;
  std::uint64_t seed = 0;
  app.add_option("--config", config, "key-value config file or a manifest.json to replay")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "master seed for every random choice");
  app.add_option("--threads", inv.threads, "worker threads (0: all cores)")->check(CLI::NonNegativeNumber);
  app.add_option("--out", inv.out, "output directory");

  auto* match = app.add_subcommand("match", "phase-1 donor filtering and alignment report");
  data_options({inv, match});

  auto* estimate = app.add_subcommand("estimate", "treatment effect estimate for the treated units");
  data_options({inv, estimate});
  model_options({inv, estimate});

  auto* validate = app.add_subcommand("validate", "A/B-ST and A/A-ST checks against a real control arm");
  data_options({inv, validate});
  model_options({inv, validate});
  Builder{inv, validate}.opt("--label", "label", "experiment name in the verdict table");

  auto* simulate = app.add_subcommand("simulate", "write a synthetic low-rank experiment bundle");
  Builder{inv, simulate}
      .opt("--units", "units", "total units N")
      .opt("--treated", "treated", "treated units n")
      .opt("--control", "control", "control-arm units")
      .opt("--periods", "periods", "periods T")
      .opt("--t0", "t0", "pre-treatment periods")
      .opt("--covariates", "covariates", "covariate count p")
      .opt("--rank", "rank", "latent factors")
      .opt("--factor-scale", "factor_scale", "factor path scale")
      .opt("--noise-scale", "noise_scale", "noise scale")
      .opt("--tau", "tau_true", "true treatment effect")
      .opt("--heterogeneity", "heterogeneity", "shift of the experimental covariate region")
      .opt("--drift", "drift", "covariate-driven trend strength");

  auto* diagnose = app.add_subcommand("diagnose", "plot data: per-model errors and unit series");
  data_options({inv, diagnose});
  model_options({inv, diagnose});
  Builder{inv, diagnose}.opt("--units", "units", "comma list of unit ids to export as series");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(synthctl::ErrorKind::kInvalidArgument);
  }
  inv.command = app.get_subcommands().front()->get_name();
  if (!config.empty()) inv.config_path = config;
  if (seed_opt->count() > 0) inv.seed = seed;

  try {
    return synthctl::cli::run_command(inv);
  } catch (const synthctl::Error& e) {
    std::cerr << "synthctl " << inv.command << ": " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "synthctl " << inv.command << ": " << e.what() << '\n';
    return 2;
  }
}
