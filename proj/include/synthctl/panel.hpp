#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace synthctl {

using Index = Eigen::Index;
using IndexSet = std::vector<Index>;  // sorted, unique

// Half-open range of period columns [begin, end), zero-based.
struct ColumnRange {
  Index begin = 0;
  Index end = 0;

  Index size() const { return end - begin; }
  bool operator==(const ColumnRange&) const = default;
};

// N x T outcome panel with a block treatment: rows in `treated` are treated
// from column t0 onward (t0 counts the pre-treatment periods). Immutable once
// built; the constructor enforces every invariant.
class PanelMatrix {
 public:
  PanelMatrix(std::vector<std::string> unit_ids, Eigen::MatrixXd outcomes,
              Index t0, IndexSet treated);

  const std::vector<std::string>& unit_ids() const { return unit_ids_; }
  const Eigen::MatrixXd& outcomes() const { return outcomes_; }
  Index t0() const { return t0_; }
  const IndexSet& treated() const { return treated_; }
  const IndexSet& donors() const { return donors_; }

  Index units() const { return outcomes_.rows(); }
  Index periods() const { return outcomes_.cols(); }
  Index post_periods() const { return periods() - t0_; }
  ColumnRange pre_range() const { return {0, t0_}; }
  ColumnRange post_range() const { return {t0_, periods()}; }

  bool is_treated(Index row) const;
  // Throws UnknownUnitId.
  Index row_of(const std::string& id) const;
  bool contains(const std::string& id) const { return row_lookup_.count(id) > 0; }
  IndexSet rows_of(std::span<const std::string> ids) const;

 private:
  std::vector<std::string> unit_ids_;
  Eigen::MatrixXd outcomes_;
  Index t0_;
  IndexSet treated_;
  IndexSet donors_;
  std::vector<char> treated_mask_;
  std::unordered_map<std::string, Index> row_lookup_;
};

// N x p unit covariates, rows aligned with a PanelMatrix.
class CovariateTable {
 public:
  CovariateTable(std::vector<std::string> unit_ids, Eigen::MatrixXd covariates);

  const std::vector<std::string>& unit_ids() const { return unit_ids_; }
  const Eigen::MatrixXd& covariates() const { return covariates_; }
  Index dims() const { return covariates_.cols(); }

 private:
  std::vector<std::string> unit_ids_;
  Eigen::MatrixXd covariates_;
};

// Read-only rectangular slice (row subset x column range) of a matrix that
// remembers where it came from. The parent must outlive the view.
class OutcomeView {
 public:
  OutcomeView(const Eigen::MatrixXd& parent, IndexSet rows, ColumnRange cols);

  Index rows() const { return static_cast<Index>(rows_.size()); }
  Index cols() const { return cols_.size(); }
  double operator()(Index i, Index j) const { return (*parent_)(rows_[i], cols_.begin + j); }

  const IndexSet& row_provenance() const { return rows_; }
  const ColumnRange& column_provenance() const { return cols_; }
  Eigen::MatrixXd materialize() const;

 private:
  const Eigen::MatrixXd* parent_;
  IndexSet rows_;
  ColumnRange cols_;
};

struct SplitViews {
  OutcomeView treated_pre;
  OutcomeView treated_post;
  OutcomeView donor_pre;
  OutcomeView donor_post;
};

SplitViews split_views(const PanelMatrix& panel);

// Copies the given rows and column range into a dense matrix.
Eigen::MatrixXd gather(const Eigen::MatrixXd& m, std::span<const Index> rows, ColumnRange cols);

// Validates that `rows` is sorted, unique and within [0, limit).
void check_index_set(std::span<const Index> rows, Index limit, const char* what);
IndexSet set_difference(std::span<const Index> a, std::span<const Index> b);

// File formats: wide outcome CSV `unit_id,t1,...,tT`; id lists with one id
// per line; covariate CSV `unit_id,x1,...,xp`.
PanelMatrix load_panel(const std::filesystem::path& outcome_path,
                       const std::filesystem::path& treated_path, Index t0);
void write_panel(const PanelMatrix& panel, const std::filesystem::path& outcome_path,
                 const std::filesystem::path& treated_path);
CovariateTable load_covariates(const std::filesystem::path& path, const PanelMatrix& panel);
void write_covariates(const CovariateTable& table, const std::filesystem::path& path);

std::vector<std::string> read_id_list(const std::filesystem::path& path);
void write_id_list(std::span<const std::string> ids, const std::filesystem::path& path);

}  // namespace synthctl
