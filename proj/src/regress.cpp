#include "synthctl/regress.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "csv.hpp"
#include "synthctl/error.hpp"
#include "synthctl/parallel.hpp"

namespace synthctl {

std::string method_name(Method method) {
  switch (method) {
    case Method::kKnn: return "knn";
    case Method::kPcr: return "pcr";
    case Method::kRidge: return "ridge";
    case Method::kPcrRidge: return "pcr_ridge";
    case Method::kPcrLasso: return "pcr_lasso";
    case Method::kLasso: return "lasso";
  }
  return "unknown";
}

Method parse_method(const std::string& name) {
  for (auto m : {Method::kKnn, Method::kPcr, Method::kRidge, Method::kPcrRidge, Method::kPcrLasso,
                 Method::kLasso}) {
    if (method_name(m) == name) return m;
  }
  throw Error(ErrorKind::kInvalidArgument, "unknown method '" + name + "'");
}

std::string centering_name(Centering center) { return center == Centering::kColumn ? "column" : "none"; }

Centering parse_centering(const std::string& name) {
  if (name == "none") return Centering::kNone;
  if (name == "column") return Centering::kColumn;
  throw Error(ErrorKind::kInvalidArgument, "unknown centering '" + name + "'");
}

int method_complexity(Method method) { return static_cast<int>(method); }

namespace {

bool is_pcr_family(Method m) { return m == Method::kPcr || m == Method::kPcrRidge || m == Method::kPcrLasso; }
bool uses_lambda(Method m) { return m == Method::kRidge || m == Method::kLasso || m == Method::kPcrRidge || m == Method::kPcrLasso; }

}  // namespace

void ModelSpec::validate() const {
  if (method == Method::kKnn && k < 1) throw Error(ErrorKind::kInvalidArgument, "knn needs k >= 1");
  if (uses_lambda(method) && !(lambda >= 0.0)) throw Error(ErrorKind::kInvalidArgument, "lambda must be >= 0");
  if (method == Method::kPcr && rank < 0) throw Error(ErrorKind::kInvalidArgument, "rank must be >= 0");
}

double ModelSpec::hyper_value() const {
  switch (method) {
    case Method::kKnn: return k;
    case Method::kPcr: return rank;
    default: return lambda;
  }
}

std::string ModelSpec::label() const {
  std::ostringstream os;
  os << method_name(method);
  switch (method) {
    case Method::kKnn: os << "(k=" << k << ")"; break;
    case Method::kPcr: os << "(rank=" << (rank > 0 ? std::to_string(rank) : std::string("auto")) << ")"; break;
    default: os << "(lambda=" << csv::format_real(lambda) << ")"; break;
  }
  return os.str();
}

std::string to_config(const ModelSpec& spec) {
  std::ostringstream os;
  os << "method = " << method_name(spec.method) << '\n'
     << "k = " << spec.k << '\n'
     << "lambda = " << csv::format_real(spec.lambda) << '\n'
     << "rank = " << spec.rank << '\n'
     << "intercept = " << (spec.intercept ? "true" : "false") << '\n'
     << "center = " << centering_name(spec.center) << '\n';
  return os.str();
}

ModelSpec spec_from_config(const std::map<std::string, std::string>& kv) {
  ModelSpec spec;
  auto get = [&](const char* key) -> const std::string* {
    const auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
  };
  try {
    if (auto v = get("method")) spec.method = parse_method(*v);
    if (auto v = get("k")) spec.k = std::stoi(*v);
    if (auto v = get("lambda")) spec.lambda = std::stod(*v);
    if (auto v = get("rank")) spec.rank = std::stoi(*v);
    if (auto v = get("intercept")) spec.intercept = (*v == "true" || *v == "1");
    if (auto v = get("center")) spec.center = parse_centering(*v);
  } catch (const std::logic_error& e) {
    throw Error(ErrorKind::kConfigInvalid, std::string("model spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

Eigen::MatrixXd FittedModel::predict(const Eigen::MatrixXd& donor_columns) const {
  if (donor_columns.rows() != weights.rows()) {
    throw Error(ErrorKind::kShapeMismatch, "donor block has " + std::to_string(donor_columns.rows()) +
                                               " rows, model expects " + std::to_string(weights.rows()));
  }
  Eigen::MatrixXd out;
  if (spec.center == Centering::kColumn && is_pcr_family(spec.method)) {
    Eigen::MatrixXd centered = donor_columns.rowwise() - donor_columns.colwise().mean();
    out.noalias() = weights.transpose() * centered;
  } else {
    out.noalias() = weights.transpose() * donor_columns;
  }
  out.colwise() += intercepts;
  return out;
}

namespace {

// Linear model on observation rows of `x` (T x p) for label columns of `y`
// (T x n).
struct LinearSolution {
  Eigen::MatrixXd coef;       // p x n
  Eigen::VectorXd intercept;  // n
  bool converged = true;
  int sweeps = 0;
};

struct Centered {
  Eigen::MatrixXd x;
  Eigen::MatrixXd y;
  Eigen::RowVectorXd x_mean;
  Eigen::RowVectorXd y_mean;
};

Centered center_observations(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, bool intercept) {
  Centered c;
  if (intercept) {
    c.x_mean = x.colwise().mean();
    c.y_mean = y.colwise().mean();
    c.x = x.rowwise() - c.x_mean;
    c.y = y.rowwise() - c.y_mean;
  } else {
    c.x_mean = Eigen::RowVectorXd::Zero(x.cols());
    c.y_mean = Eigen::RowVectorXd::Zero(y.cols());
    c.x = x;
    c.y = y;
  }
  return c;
}

LinearSolution ridge_core(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, double lambda, bool intercept) {
  if (!(lambda >= 0.0)) throw Error(ErrorKind::kInvalidArgument, "lambda must be >= 0");
  const Centered c = center_observations(x, y, intercept);
  const Index obs = x.rows();
  const Index p = x.cols();
  LinearSolution sol;

  auto factor = [&](Eigen::MatrixXd gram) {
    gram.diagonal().array() += lambda;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
    if (ldlt.info() != Eigen::Success ||
        (lambda == 0.0 && !(ldlt.rcond() > 1e3 * std::numeric_limits<double>::epsilon()))) {
      throw Error(ErrorKind::kSingularSystem, "Gram matrix is rank-deficient at lambda = 0");
    }
    return ldlt;
  };

  if (p <= obs) {
    const auto ldlt = factor(c.x.transpose() * c.x);
    sol.coef = ldlt.solve(c.x.transpose() * c.y);
  } else {
    // Dual form: w = X^T (X X^T + lambda I)^{-1} y, one T x T factorization
    // shared by every label.
    const auto ldlt = factor(c.x * c.x.transpose());
    sol.coef.noalias() = c.x.transpose() * ldlt.solve(c.y);
  }
  sol.intercept = (c.y_mean - c.x_mean * sol.coef).transpose();
  return sol;
}

double soft_threshold(double z, double gamma) {
  if (z > gamma) return z - gamma;
  if (z < -gamma) return z + gamma;
  return 0.0;
}

LinearSolution lasso_core(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, double lambda, bool intercept) {
  if (!(lambda >= 0.0)) throw Error(ErrorKind::kInvalidArgument, "lambda must be >= 0");
  const Centered c = center_observations(x, y, intercept);
  const Index obs = x.rows();
  const Index p = x.cols();
  const double inv_obs = 1.0 / static_cast<double>(obs);
  const Eigen::VectorXd col_sq = c.x.colwise().squaredNorm().transpose() * inv_obs;

  LinearSolution sol;
  sol.coef = Eigen::MatrixXd::Zero(p, y.cols());
  std::vector<char> converged(y.cols(), 1);
  std::vector<int> sweeps(y.cols(), 0);

  parallel_for(y.cols(), [&](std::int64_t label) {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(p);
    Eigen::VectorXd resid = c.y.col(label);
    auto update = [&](Index j, double penalty) {
      if (col_sq(j) <= 0.0) return 0.0;
      const double rho = c.x.col(j).dot(resid) * inv_obs + col_sq(j) * w(j);
      const double next = soft_threshold(rho, penalty) / col_sq(j);
      const double delta = next - w(j);
      if (delta == 0.0) return 0.0;
      resid.noalias() -= delta * c.x.col(j);
      w(j) = next;
      return std::abs(delta);
    };
    // Cyclic descent with an active-set inner loop; returns sweeps used, or
    // -1 when the budget ran out.
    auto descend = [&](double penalty, int budget) {
      std::vector<Index> active;
      bool full = true;
      for (int sweep = 1; sweep <= budget; ++sweep) {
        double max_change = 0.0;
        if (full) {
          for (Index j = 0; j < p; ++j) max_change = std::max(max_change, update(j, penalty));
          if (max_change < kLassoTolerance) return sweep;
          active.clear();
          for (Index j = 0; j < p; ++j) {
            if (w(j) != 0.0) active.push_back(j);
          }
          full = false;
        } else {
          for (Index j : active) max_change = std::max(max_change, update(j, penalty));
          if (max_change < kLassoTolerance) full = true;
        }
      }
      return -1;
    };

    // Warm start along a geometric path from the smallest all-zero penalty.
    const double lambda_max = (c.x.transpose() * c.y.col(label)).cwiseAbs().maxCoeff() * inv_obs;
    // At or above lambda_max (up to rounding of the threshold) the solution is all zero.
    if (lambda > 0.0 && lambda >= lambda_max * (1.0 - 1e-12)) {
      sol.coef.col(label).setZero();
      sweeps[label] = 1;
      return;
    }
    if (lambda > 0.0) {
      const int steps = static_cast<int>(std::ceil(kLassoPathPerDecade * std::log10(lambda_max / lambda)));
      for (int s = 1; s < steps; ++s) {
        descend(lambda_max * std::pow(lambda / lambda_max, static_cast<double>(s) / steps), kLassoMaxSweeps);
      }
    }
    const int used = descend(lambda, kLassoMaxSweeps);
    sol.coef.col(label) = w;
    converged[label] = used > 0;
    sweeps[label] = used > 0 ? used : kLassoMaxSweeps;
  });
  sol.intercept = (c.y_mean - c.x_mean * sol.coef).transpose();
  sol.converged = std::all_of(converged.begin(), converged.end(), [](char v) { return v != 0; });
  sol.sweeps = sweeps.empty() ? 0 : *std::max_element(sweeps.begin(), sweeps.end());
  return sol;
}

void check_training_shapes(const Eigen::MatrixXd& donor_train, const Eigen::MatrixXd& target_train) {
  if (donor_train.rows() < 1) throw Error(ErrorKind::kTooFewDonors, "need at least one donor");
  if (donor_train.cols() != target_train.cols()) {
    throw Error(ErrorKind::kShapeMismatch, "donor and target blocks cover different periods");
  }
  if (donor_train.cols() < 1) throw Error(ErrorKind::kInsufficientColumns, "no training periods");
}

FittedModel fit_knn(const ModelSpec& spec, const Eigen::MatrixXd& donors, const Eigen::MatrixXd& targets) {
  const Index m = donors.rows();
  if (spec.k > m) {
    throw Error(ErrorKind::kTooFewDonors, "knn k=" + std::to_string(spec.k) + " exceeds " + std::to_string(m) + " donors");
  }
  // With an intercept, neighbors are matched on level-free trajectories and
  // the level gap is carried by the intercept.
  Eigen::VectorXd donor_level = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd target_level = Eigen::VectorXd::Zero(targets.rows());
  if (spec.intercept) {
    donor_level = donors.rowwise().mean();
    target_level = targets.rowwise().mean();
  }
  const Eigen::MatrixXd shape = donors.colwise() - donor_level;
  FittedModel model;
  model.weights = Eigen::MatrixXd::Zero(m, targets.rows());
  model.intercepts = Eigen::VectorXd::Zero(targets.rows());
  const double share = 1.0 / spec.k;
  parallel_for(targets.rows(), [&](std::int64_t i) {
    const Eigen::RowVectorXd target = targets.row(i).array() - target_level(i);
    std::vector<std::pair<double, Index>> dist(static_cast<std::size_t>(m));
    for (Index d = 0; d < m; ++d) dist[d] = {(shape.row(d) - target).squaredNorm(), d};
    std::partial_sort(dist.begin(), dist.begin() + spec.k, dist.end());
    double level = 0.0;
    for (int j = 0; j < spec.k; ++j) {
      model.weights(dist[j].second, i) = share;
      level += share * donor_level(dist[j].second);
    }
    model.intercepts(i) = target_level(i) - level;
  });
  return model;
}

// Numerical rank of a singular value spectrum.
int numerical_rank(const Eigen::VectorXd& sv, Index rows, Index cols) {
  if (sv.size() == 0 || sv(0) <= 0.0) return 0;
  const double cutoff = sv(0) * static_cast<double>(std::max(rows, cols)) * std::numeric_limits<double>::epsilon();
  int r = 0;
  while (r < sv.size() && sv(r) > cutoff) ++r;
  return r;
}

FittedModel fit_pcr_family(const ModelSpec& spec, const Eigen::MatrixXd& donors, const Eigen::MatrixXd& targets) {
  Eigen::MatrixXd work = donors;
  if (spec.center == Centering::kColumn) work.rowwise() -= work.colwise().mean();
  // With an intercept the donor levels are projected out before the SVD, so
  // the latent donors carry variation only and stay orthogonal after the
  // regression centers them.
  Eigen::VectorXd donor_level = Eigen::VectorXd::Zero(work.rows());
  if (spec.intercept) {
    donor_level = work.rowwise().mean();
    work.colwise() -= donor_level;
  }
  const LatentDonors latent = latent_donors(work);
  const int usable = numerical_rank(latent.singular_values, work.rows(), work.cols());
  const Index n = targets.rows();

  FittedModel model;
  model.singular_values = latent.singular_values;
  if (usable == 0) {
    model.weights = Eigen::MatrixXd::Zero(donors.rows(), n);
    model.intercepts = spec.intercept ? Eigen::VectorXd(targets.rowwise().mean()) : Eigen::VectorXd::Zero(n);
    model.latent_coefficients = Eigen::MatrixXd::Zero(0, n);
    model.basis = Eigen::MatrixXd::Zero(0, donors.cols());
    return model;
  }

  int components = usable;
  if (spec.method == Method::kPcr) {
    const Index full = latent.singular_values.size();
    if (spec.rank > full) {
      throw Error(ErrorKind::kInvalidArgument, "rank override " + std::to_string(spec.rank) +
                                                   " exceeds min dims " + std::to_string(full));
    }
    const int chosen = spec.rank > 0 ? spec.rank
                                     : hard_threshold_rank(latent.singular_values, work.rows(), work.cols());
    components = std::min(chosen, usable);
  }
  const Eigen::MatrixXd u = latent.u.leftCols(components);
  const Eigen::VectorXd sigma = latent.singular_values.head(components);
  const Eigen::MatrixXd vt = latent.vt.topRows(components);
  const Eigen::MatrixXd y = targets.transpose();

  LinearSolution sol;
  Eigen::MatrixXd to_donors;  // maps latent coefficients to donor weights
  if (spec.method == Method::kPcr) {
    // OLS on the unscaled latent donors; minimum-norm when the centered
    // features are rank-deficient.
    const Eigen::MatrixXd features = vt.transpose();
    const Centered c = center_observations(features, y, spec.intercept);
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(c.x);
    sol.coef = cod.solve(c.y);
    sol.intercept = (c.y_mean - c.x_mean * sol.coef).transpose();
    to_donors = u * sigma.cwiseInverse().asDiagonal();
  } else {
    // Principal component scores V * Sigma as features.
    const Eigen::MatrixXd scores = vt.transpose() * sigma.asDiagonal();
    sol = spec.method == Method::kPcrRidge ? ridge_core(scores, y, spec.lambda, spec.intercept)
                                           : lasso_core(scores, y, spec.lambda, spec.intercept);
    to_donors = u;
  }
  model.weights = to_donors * sol.coef;
  model.intercepts = sol.intercept - model.weights.transpose() * donor_level;
  model.latent_coefficients = sol.coef;
  model.basis = vt;
  model.rank = components;
  model.converged = sol.converged;
  model.sweeps = sol.sweeps;
  return model;
}

}  // namespace

LatentDonors latent_donors(const Eigen::MatrixXd& donor_pre) {
  if (donor_pre.size() == 0) throw Error(ErrorKind::kInvalidArgument, "SVD of an empty matrix");
  Eigen::BDCSVD<Eigen::MatrixXd> svd(donor_pre, Eigen::ComputeThinU | Eigen::ComputeThinV);
  return LatentDonors{svd.singularValues(), svd.matrixU(), svd.matrixV().transpose()};
}

double hard_threshold_omega(double beta) {
  return 0.56 * beta * beta * beta - 0.95 * beta * beta + 1.82 * beta + 1.43;
}

int hard_threshold_rank(const Eigen::VectorXd& singular_values, Index rows, Index cols) {
  if (singular_values.size() == 0) return 1;
  const double beta = static_cast<double>(std::min(rows, cols)) / static_cast<double>(std::max(rows, cols));
  std::vector<double> sv(singular_values.data(), singular_values.data() + singular_values.size());
  std::sort(sv.begin(), sv.end());
  const std::size_t mid = sv.size() / 2;
  const double median = sv.size() % 2 == 1 ? sv[mid] : 0.5 * (sv[mid - 1] + sv[mid]);
  const double tau = hard_threshold_omega(beta) * median;
  const auto above = std::count_if(sv.begin(), sv.end(), [tau](double s) { return s > tau; });
  return std::max(1, static_cast<int>(above));
}

FittedModel ridge_fit(const Eigen::MatrixXd& donor_pre, const Eigen::MatrixXd& treated_pre, double lambda,
                      bool intercept) {
  check_training_shapes(donor_pre, treated_pre);
  auto sol = ridge_core(donor_pre.transpose(), treated_pre.transpose(), lambda, intercept);
  FittedModel model;
  model.spec = ModelSpec{Method::kRidge, 5, lambda, 0, intercept, Centering::kNone};
  model.weights = std::move(sol.coef);
  model.intercepts = std::move(sol.intercept);
  model.train_columns = donor_pre.cols();
  return model;
}

FittedModel lasso_fit(const Eigen::MatrixXd& donor_pre, const Eigen::MatrixXd& treated_pre, double lambda,
                      bool intercept) {
  check_training_shapes(donor_pre, treated_pre);
  auto sol = lasso_core(donor_pre.transpose(), treated_pre.transpose(), lambda, intercept);
  FittedModel model;
  model.spec = ModelSpec{Method::kLasso, 5, lambda, 0, intercept, Centering::kNone};
  model.weights = std::move(sol.coef);
  model.intercepts = std::move(sol.intercept);
  model.converged = sol.converged;
  model.sweeps = sol.sweeps;
  model.train_columns = donor_pre.cols();
  return model;
}

FittedModel fit_model(const ModelSpec& spec, const Eigen::MatrixXd& donor_train,
                      const Eigen::MatrixXd& target_train) {
  spec.validate();
  check_training_shapes(donor_train, target_train);
  FittedModel model;
  switch (spec.method) {
    case Method::kKnn: model = fit_knn(spec, donor_train, target_train); break;
    case Method::kRidge: model = ridge_fit(donor_train, target_train, spec.lambda, spec.intercept); break;
    case Method::kLasso: model = lasso_fit(donor_train, target_train, spec.lambda, spec.intercept); break;
    case Method::kPcr:
    case Method::kPcrRidge:
    case Method::kPcrLasso: model = fit_pcr_family(spec, donor_train, target_train); break;
  }
  model.spec = spec;
  model.train_columns = donor_train.cols();
  return model;
}

CounterfactualPrediction predict_counterfactual(const PanelMatrix& panel, const IndexSet& donors,
                                                const IndexSet& targets, const ModelSpec& spec) {
  return predict_counterfactual(panel, donors, targets, spec, panel.pre_range());
}

CounterfactualPrediction predict_counterfactual(const PanelMatrix& panel, const IndexSet& donors,
                                                const IndexSet& targets, const ModelSpec& spec,
                                                ColumnRange train) {
  check_index_set(donors, panel.units(), "donors");
  check_index_set(targets, panel.units(), "targets");
  if (donors.empty()) throw Error(ErrorKind::kTooFewDonors, "empty donor set");
  if (targets.empty()) throw Error(ErrorKind::kInvalidArgument, "no target units");
  if (train.begin < 0 || train.end > panel.t0() || train.size() < 1) {
    throw Error(ErrorKind::kInsufficientColumns, "training columns must lie inside the pre-period");
  }
  if (set_difference(donors, targets).size() != donors.size()) {
    throw Error(ErrorKind::kInvalidArgument, "a target unit is also listed as a donor");
  }
  const ColumnRange all{0, panel.periods()};
  const Eigen::MatrixXd donor_mat = gather(panel.outcomes(), donors, all);
  const Eigen::MatrixXd target_train = gather(panel.outcomes(), targets, train);

  auto model = std::make_shared<FittedModel>(
      fit_model(spec, donor_mat.middleCols(train.begin, train.size()), target_train));
  const Eigen::MatrixXd yhat = model->predict(donor_mat);

  CounterfactualPrediction pred;
  pred.targets = targets;
  pred.donors = donors;
  pred.yhat_pre = yhat.leftCols(panel.t0());
  pred.yhat_post = yhat.rightCols(panel.post_periods());
  pred.model = std::move(model);
  if (!pred.yhat_post.allFinite() || !pred.yhat_pre.allFinite()) {
    throw Error(ErrorKind::kSingularSystem, spec.label() + " produced non-finite predictions");
  }
  return pred;
}

CounterfactualPrediction knn_predict(const PanelMatrix& panel, const IndexSet& donors, int k) {
  ModelSpec spec;
  spec.method = Method::kKnn;
  spec.k = k;
  return predict_counterfactual(panel, donors, panel.treated(), spec);
}

CounterfactualPrediction pcr_predict(const PanelMatrix& panel, const IndexSet& donors, int rank_override) {
  ModelSpec spec;
  spec.method = Method::kPcr;
  spec.rank = rank_override;
  return predict_counterfactual(panel, donors, panel.treated(), spec);
}

CounterfactualPrediction pcr_ridge_predict(const PanelMatrix& panel, const IndexSet& donors, double lambda) {
  ModelSpec spec;
  spec.method = Method::kPcrRidge;
  spec.lambda = lambda;
  return predict_counterfactual(panel, donors, panel.treated(), spec);
}

CounterfactualPrediction pcr_lasso_predict(const PanelMatrix& panel, const IndexSet& donors, double lambda) {
  ModelSpec spec;
  spec.method = Method::kPcrLasso;
  spec.lambda = lambda;
  return predict_counterfactual(panel, donors, panel.treated(), spec);
}

void write_coefficients_csv(const CounterfactualPrediction& pred, const PanelMatrix& panel,
                            const std::filesystem::path& path) {
  auto out = csv::open_out(path);
  out << "treated_id,donor_id_or_pc,coefficient\n";
  const FittedModel& model = *pred.model;
  const bool latent = is_pcr_family(model.spec.method);
  for (Index i = 0; i < static_cast<Index>(pred.targets.size()); ++i) {
    const std::string& tid = panel.unit_ids()[pred.targets[i]];
    out << tid << ",(intercept)," << csv::format_real(model.intercepts(i)) << '\n';
    if (latent) {
      for (Index j = 0; j < model.latent_coefficients.rows(); ++j) {
        out << tid << ",pc" << (j + 1) << ',' << csv::format_real(model.latent_coefficients(j, i)) << '\n';
      }
    } else {
      for (Index d = 0; d < model.weights.rows(); ++d) {
        if (model.weights(d, i) == 0.0) continue;
        out << tid << ',' << panel.unit_ids()[pred.donors[d]] << ',' << csv::format_real(model.weights(d, i)) << '\n';
      }
    }
  }
}

}  // namespace synthctl
