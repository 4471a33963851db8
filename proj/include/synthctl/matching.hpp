#pragma once

// Phase 1: covariate-space donor filtering with a random-projection forest.

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "synthctl/panel.hpp"

namespace synthctl {

enum class Metric { kEuclidean, kCosine };

Metric parse_metric(const std::string& name);
std::string metric_name(Metric metric);

struct AnnParams {
  int tree_count = 16;
  int leaf_size = 16;
  Metric metric = Metric::kEuclidean;
  std::uint64_t seed = 0;
  // z-score each covariate with donor-pool mean/std before indexing.
  bool standardize = true;
  // Brute-force search over every donor; answers are exact.
  bool exact = false;
  // Candidate budget per query before exact re-ranking; 0 picks
  // 4 * k * tree_count.
  int search_k = 0;
};

struct Neighbor {
  Index row = 0;
  double distance = 0.0;

  bool operator==(const Neighbor&) const = default;
};

class AnnIndex {
 public:
  struct Node {
    // Leaf when `items` is non-empty or both children are -1.
    std::int32_t left = -1;
    std::int32_t right = -1;
    Eigen::VectorXd normal;
    double offset = 0.0;
    std::vector<std::int32_t> items;  // positions into rows()

    bool is_leaf() const { return left < 0; }
  };
  using Tree = std::vector<Node>;

  // Prefer build_index(); this is public for the Python bindings.
  AnnIndex(IndexSet rows, Eigen::MatrixXd points, Eigen::RowVectorXd center,
           Eigen::RowVectorXd scale, AnnParams params, std::vector<Tree> trees);

  // Up to k donors nearest to a raw covariate vector, sorted by
  // (distance, row).
  std::vector<Neighbor> query(const Eigen::Ref<const Eigen::RowVectorXd>& covariates, int k) const;
  std::vector<Neighbor> query_exact(const Eigen::Ref<const Eigen::RowVectorXd>& covariates, int k) const;

  const IndexSet& rows() const { return rows_; }
  const AnnParams& params() const { return params_; }
  const std::vector<Tree>& trees() const { return trees_; }
  Index size() const { return static_cast<Index>(rows_.size()); }

  // Applies the index's covariate transform (standardize, normalize).
  Eigen::RowVectorXd transform(const Eigen::Ref<const Eigen::RowVectorXd>& covariates) const;

 private:
  std::vector<Neighbor> rank(std::span<const std::int32_t> candidates,
                             const Eigen::RowVectorXd& q, int k) const;

  IndexSet rows_;
  Eigen::MatrixXd points_;  // transformed, one donor per row
  Eigen::RowVectorXd center_;
  Eigen::RowVectorXd scale_;
  AnnParams params_;
  std::vector<Tree> trees_;
};

AnnIndex build_index(const CovariateTable& cov, const IndexSet& donor_rows, const AnnParams& params);

struct DonorFilter {
  std::map<Index, std::vector<Neighbor>> neighbors;  // treated row -> neighbors
  IndexSet donor_union;
  IndexSet excluded;
};

DonorFilter match_donors(const AnnIndex& index, const CovariateTable& cov, const IndexSet& treated, int k);

// Drops the listed donors from every neighbor list and from the union.
DonorFilter exclude_spillover(DonorFilter filter, std::span<const std::string> excluded_ids,
                              const PanelMatrix& panel);

// Uniform sample without replacement of max(1, round(fraction * |pool|))
// rows, returned sorted.
IndexSet subsample_donors(const IndexSet& pool, double fraction, std::uint64_t seed);
IndexSet subsample_donors(const PanelMatrix& panel, double fraction, std::uint64_t seed);

// Lower-interpolation empirical quantile: sorted[floor(q * (n - 1))].
double lower_quantile(std::vector<double> values, double q);

inline const std::vector<double> kAlignmentQuantiles = {0.01, 0.05, 0.10, 0.90, 0.95, 0.99};

struct QuantileRow {
  std::string group;
  std::vector<double> values;
};

struct AlignmentReport {
  std::string approach;
  std::vector<double> quantiles;
  std::vector<QuantileRow> rows;  // donor, [control], treatment

  const QuantileRow& row(const std::string& group) const;
};

// Quantiles of all pre-period outcomes pooled over (unit, period), per group.
AlignmentReport quantile_alignment(const PanelMatrix& panel, const IndexSet& donors,
                                   const std::vector<double>& quantiles,
                                   const std::optional<IndexSet>& control = std::nullopt,
                                   std::string approach = "");

// CSV layout: group,<q1>,...,<qk>,approach
void write_alignment_csv(std::span<const AlignmentReport> reports, const std::filesystem::path& path);
void write_neighbors_csv(const DonorFilter& filter, const PanelMatrix& panel,
                         const std::filesystem::path& path);

}  // namespace synthctl
