#include "synthctl/matching.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <tuple>

#include "csv.hpp"
#include "synthctl/error.hpp"
#include "synthctl/parallel.hpp"
#include "synthctl/random.hpp"

namespace synthctl {

Metric parse_metric(const std::string& name) {
  if (name == "euclidean") return Metric::kEuclidean;
  if (name == "cosine") return Metric::kCosine;
  throw Error(ErrorKind::kInvalidArgument, "unknown metric '" + name + "'");
}

std::string metric_name(Metric metric) {
  return metric == Metric::kCosine ? "cosine" : "euclidean";
}

namespace {

using Positions = std::vector<std::int32_t>;

// Annoy-style tree: split on the hyperplane bisecting two random points;
// fall back to a random halving when every item lands on one side.
AnnIndex::Tree build_tree(const Eigen::MatrixXd& points, int leaf_size, std::mt19937_64& rng) {
  AnnIndex::Tree tree;
  Positions all(points.rows());
  std::iota(all.begin(), all.end(), 0);

  struct Pending {
    std::int32_t node;
    Positions items;
  };
  std::vector<Pending> stack;
  tree.emplace_back();
  stack.push_back({0, std::move(all)});

  while (!stack.empty()) {
    Pending job = std::move(stack.back());
    stack.pop_back();
    if (static_cast<int>(job.items.size()) <= leaf_size) {
      tree[job.node].items = std::move(job.items);
      continue;
    }
    std::uniform_int_distribution<std::size_t> pick(0, job.items.size() - 1);
    const auto a = job.items[pick(rng)];
    auto b = job.items[pick(rng)];
    for (int tries = 0; tries < 8 && b == a; ++tries) b = job.items[pick(rng)];

    Eigen::VectorXd normal = (points.row(a) - points.row(b)).transpose();
    double offset = normal.dot(0.5 * (points.row(a) + points.row(b)).transpose());
    Positions left, right;
    if (normal.squaredNorm() > 0.0) {
      for (auto item : job.items) {
        (points.row(item).dot(normal) - offset > 0.0 ? right : left).push_back(item);
      }
    }
    if (left.empty() || right.empty()) {
      // Degenerate (duplicates); zero normal gives both sides equal priority.
      normal.setZero();
      offset = 0.0;
      left.clear();
      right.clear();
      std::bernoulli_distribution coin(0.5);
      for (auto item : job.items) (coin(rng) ? right : left).push_back(item);
      if (left.empty() || right.empty()) {
        const auto half = static_cast<std::ptrdiff_t>(job.items.size() / 2);
        left.assign(job.items.begin(), job.items.begin() + half);
        right.assign(job.items.begin() + half, job.items.end());
      }
    }
    const auto left_id = static_cast<std::int32_t>(tree.size());
    tree.emplace_back();
    const auto right_id = static_cast<std::int32_t>(tree.size());
    tree.emplace_back();
    auto& node = tree[job.node];
    node.left = left_id;
    node.right = right_id;
    node.normal = std::move(normal);
    node.offset = offset;
    stack.push_back({right_id, std::move(right)});
    stack.push_back({left_id, std::move(left)});
  }
  return tree;
}

bool neighbor_less(const Neighbor& a, const Neighbor& b) {
  return std::tie(a.distance, a.row) < std::tie(b.distance, b.row);
}

}  // namespace

AnnIndex::AnnIndex(IndexSet rows, Eigen::MatrixXd points, Eigen::RowVectorXd center,
                   Eigen::RowVectorXd scale, AnnParams params, std::vector<Tree> trees)
    : rows_(std::move(rows)),
      points_(std::move(points)),
      center_(std::move(center)),
      scale_(std::move(scale)),
      params_(params),
      trees_(std::move(trees)) {}

Eigen::RowVectorXd AnnIndex::transform(const Eigen::Ref<const Eigen::RowVectorXd>& covariates) const {
  if (covariates.size() != center_.size()) {
    throw Error(ErrorKind::kShapeMismatch, "query has wrong covariate dimension");
  }
  Eigen::RowVectorXd z = (covariates - center_).cwiseQuotient(scale_);
  if (params_.metric == Metric::kCosine) {
    const double norm = z.norm();
    if (norm > 0.0) z /= norm;
  }
  return z;
}

std::vector<Neighbor> AnnIndex::rank(std::span<const std::int32_t> candidates,
                                     const Eigen::RowVectorXd& q, int k) const {
  std::vector<Neighbor> out;
  out.reserve(candidates.size());
  for (auto pos : candidates) {
    out.push_back({rows_[pos], (points_.row(pos) - q).norm()});
  }
  const auto keep = std::min<std::size_t>(static_cast<std::size_t>(k), out.size());
  std::partial_sort(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(keep), out.end(), neighbor_less);
  out.resize(keep);
  return out;
}

std::vector<Neighbor> AnnIndex::query_exact(const Eigen::Ref<const Eigen::RowVectorXd>& covariates,
                                            int k) const {
  if (k < 1) throw Error(ErrorKind::kInvalidArgument, "k must be >= 1");
  Positions all(points_.rows());
  std::iota(all.begin(), all.end(), 0);
  return rank(all, transform(covariates), k);
}

std::vector<Neighbor> AnnIndex::query(const Eigen::Ref<const Eigen::RowVectorXd>& covariates, int k) const {
  if (params_.exact || trees_.empty()) return query_exact(covariates, k);
  if (k < 1) throw Error(ErrorKind::kInvalidArgument, "k must be >= 1");
  const Eigen::RowVectorXd q = transform(covariates);
  const std::size_t budget = params_.search_k > 0
                                 ? static_cast<std::size_t>(params_.search_k)
                                 : static_cast<std::size_t>(4) * k * trees_.size();

  // Best-first descent over all trees, keyed on the smallest margin seen on
  // the path so far.
  using Entry = std::tuple<double, std::int32_t, std::int32_t>;  // priority, tree, node
  auto worse = [](const Entry& a, const Entry& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) < std::get<0>(b);
    return std::tie(std::get<1>(a), std::get<2>(a)) > std::tie(std::get<1>(b), std::get<2>(b));
  };
  std::priority_queue<Entry, std::vector<Entry>, decltype(worse)> frontier(worse);
  const double inf = std::numeric_limits<double>::infinity();
  for (std::int32_t t = 0; t < static_cast<std::int32_t>(trees_.size()); ++t) frontier.emplace(inf, t, 0);

  std::vector<char> seen(points_.rows(), 0);
  Positions candidates;
  while (!frontier.empty() && candidates.size() < budget) {
    const auto [priority, t, id] = frontier.top();
    frontier.pop();
    const Node& node = trees_[t][id];
    if (node.is_leaf()) {
      for (auto pos : node.items) {
        if (!seen[pos]) {
          seen[pos] = 1;
          candidates.push_back(pos);
        }
      }
      continue;
    }
    const double margin = q.dot(node.normal) - node.offset;
    frontier.emplace(std::min(priority, margin), t, node.right);
    frontier.emplace(std::min(priority, -margin), t, node.left);
  }
  return rank(candidates, q, k);
}

AnnIndex build_index(const CovariateTable& cov, const IndexSet& donor_rows, const AnnParams& params) {
  if (donor_rows.empty()) throw Error(ErrorKind::kEmptyDonorSet, "no donors to index");
  if (params.tree_count < 1) throw Error(ErrorKind::kInvalidArgument, "tree_count must be >= 1");
  if (params.leaf_size < 1) throw Error(ErrorKind::kInvalidArgument, "leaf_size must be >= 1");
  check_index_set(donor_rows, cov.covariates().rows(), "donor rows");

  const Index p = cov.dims();
  Eigen::MatrixXd raw(static_cast<Index>(donor_rows.size()), p);
  for (Index i = 0; i < raw.rows(); ++i) raw.row(i) = cov.covariates().row(donor_rows[i]);

  Eigen::RowVectorXd center = Eigen::RowVectorXd::Zero(p);
  Eigen::RowVectorXd scale = Eigen::RowVectorXd::Ones(p);
  if (params.standardize) {
    center = raw.colwise().mean();
    for (Index j = 0; j < p; ++j) {
      const double var = raw.rows() > 1
                             ? (raw.col(j).array() - center(j)).square().sum() / static_cast<double>(raw.rows() - 1)
                             : 0.0;
      scale(j) = var > 0.0 ? std::sqrt(var) : 1.0;
    }
  }
  AnnIndex shell(donor_rows, Eigen::MatrixXd(), center, scale, params, {});
  Eigen::MatrixXd points(raw.rows(), p);
  for (Index i = 0; i < raw.rows(); ++i) points.row(i) = shell.transform(raw.row(i));

  std::vector<AnnIndex::Tree> trees;
  if (!params.exact) {
    trees.resize(static_cast<std::size_t>(params.tree_count));
    parallel_for(params.tree_count, [&](std::int64_t t) {
      auto rng = make_rng(params.seed, static_cast<std::uint64_t>(t));
      trees[static_cast<std::size_t>(t)] = build_tree(points, params.leaf_size, rng);
    });
  }
  return AnnIndex(donor_rows, std::move(points), std::move(center), std::move(scale), params,
                  std::move(trees));
}

DonorFilter match_donors(const AnnIndex& index, const CovariateTable& cov, const IndexSet& treated, int k) {
  if (k < 1) throw Error(ErrorKind::kInvalidArgument, "k must be >= 1");
  check_index_set(treated, cov.covariates().rows(), "treated");
  if (!std::is_sorted(index.rows().begin(), index.rows().end())) {
    throw Error(ErrorKind::kInvalidArgument, "index rows unsorted");
  }
  for (Index r : treated) {
    if (std::binary_search(index.rows().begin(), index.rows().end(), r)) {
      throw Error(ErrorKind::kInvalidArgument, "treated row " + std::to_string(r) + " is indexed as a donor");
    }
  }
  std::vector<std::vector<Neighbor>> lists(treated.size());
  parallel_for(static_cast<std::int64_t>(treated.size()), [&](std::int64_t i) {
    lists[static_cast<std::size_t>(i)] = index.query(cov.covariates().row(treated[static_cast<std::size_t>(i)]), k);
  });
  DonorFilter filter;
  for (std::size_t i = 0; i < treated.size(); ++i) {
    for (const auto& nb : lists[i]) filter.donor_union.push_back(nb.row);
    filter.neighbors.emplace(treated[i], std::move(lists[i]));
  }
  std::sort(filter.donor_union.begin(), filter.donor_union.end());
  filter.donor_union.erase(std::unique(filter.donor_union.begin(), filter.donor_union.end()),
                           filter.donor_union.end());
  return filter;
}

DonorFilter exclude_spillover(DonorFilter filter, std::span<const std::string> excluded_ids,
                              const PanelMatrix& panel) {
  IndexSet drop;
  for (const auto& id : excluded_ids) {
    const Index row = panel.row_of(id);
    if (panel.is_treated(row)) throw Error(ErrorKind::kExcludedIsTreated, id);
    drop.push_back(row);
  }
  std::sort(drop.begin(), drop.end());
  drop.erase(std::unique(drop.begin(), drop.end()), drop.end());

  auto dropped = [&](Index r) { return std::binary_search(drop.begin(), drop.end(), r); };
  for (auto& [row, list] : filter.neighbors) {
    std::erase_if(list, [&](const Neighbor& nb) { return dropped(nb.row); });
  }
  std::erase_if(filter.donor_union, dropped);
  IndexSet merged;
  std::set_union(filter.excluded.begin(), filter.excluded.end(), drop.begin(), drop.end(),
                 std::back_inserter(merged));
  filter.excluded = std::move(merged);
  return filter;
}

IndexSet subsample_donors(const IndexSet& pool, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw Error(ErrorKind::kBadFraction, "fraction must lie in (0, 1]");
  }
  if (pool.empty()) throw Error(ErrorKind::kEmptyDonorSet, "no donors to subsample");
  const auto count = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(pool.size()))));
  IndexSet work = pool;
  auto rng = make_rng(seed, 0x5b5a);
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, work.size() - 1);
    std::swap(work[i], work[pick(rng)]);
  }
  work.resize(count);
  std::sort(work.begin(), work.end());
  return work;
}

IndexSet subsample_donors(const PanelMatrix& panel, double fraction, std::uint64_t seed) {
  return subsample_donors(panel.donors(), fraction, seed);
}

double lower_quantile(std::vector<double> values, double q) {
  if (values.empty()) throw Error(ErrorKind::kEmptyGroup, "quantile of empty sample");
  const auto pos = static_cast<std::size_t>(std::floor(q * static_cast<double>(values.size() - 1)));
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(pos), values.end());
  return values[pos];
}

const QuantileRow& AlignmentReport::row(const std::string& group) const {
  for (const auto& r : rows) {
    if (r.group == group) return r;
  }
  throw Error(ErrorKind::kEmptyGroup, "no group '" + group + "' in alignment report");
}

AlignmentReport quantile_alignment(const PanelMatrix& panel, const IndexSet& donors,
                                   const std::vector<double>& quantiles,
                                   const std::optional<IndexSet>& control, std::string approach) {
  for (std::size_t i = 0; i < quantiles.size(); ++i) {
    if (!(quantiles[i] > 0.0 && quantiles[i] < 1.0) || (i > 0 && quantiles[i] <= quantiles[i - 1])) {
      throw Error(ErrorKind::kInvalidArgument, "quantiles must be sorted and inside (0, 1)");
    }
  }
  auto group_row = [&](const std::string& label, const IndexSet& rows) {
    if (rows.empty()) throw Error(ErrorKind::kEmptyGroup, label);
    std::vector<double> pooled;
    pooled.reserve(rows.size() * static_cast<std::size_t>(panel.t0()));
    for (Index r : rows) {
      for (Index t = 0; t < panel.t0(); ++t) pooled.push_back(panel.outcomes()(r, t));
    }
    QuantileRow row{label, {}};
    for (double q : quantiles) row.values.push_back(lower_quantile(pooled, q));
    return row;
  };
  AlignmentReport report{std::move(approach), quantiles, {}};
  report.rows.push_back(group_row("Donor Units", donors));
  if (control) report.rows.push_back(group_row("Experimental Control", *control));
  report.rows.push_back(group_row("Experimental Treatment", panel.treated()));
  return report;
}

void write_alignment_csv(std::span<const AlignmentReport> reports, const std::filesystem::path& path) {
  auto out = csv::open_out(path);
  out << "group";
  if (!reports.empty()) {
    for (double q : reports.front().quantiles) out << ',' << csv::format_real(q);
  }
  out << ",approach\n";
  for (const auto& report : reports) {
    for (const auto& row : report.rows) {
      out << row.group;
      for (double v : row.values) out << ',' << csv::format_real(v);
      out << ',' << report.approach << '\n';
    }
  }
}

void write_neighbors_csv(const DonorFilter& filter, const PanelMatrix& panel,
                         const std::filesystem::path& path) {
  auto out = csv::open_out(path);
  out << "treated_id,donor_ids,distances\n";
  for (const auto& [row, list] : filter.neighbors) {
    out << panel.unit_ids()[row] << ',';
    for (std::size_t i = 0; i < list.size(); ++i) out << (i ? ";" : "") << panel.unit_ids()[list[i].row];
    out << ',';
    for (std::size_t i = 0; i < list.size(); ++i) out << (i ? ";" : "") << csv::format_real(list[i].distance);
    out << '\n';
  }
}

}  // namespace synthctl
