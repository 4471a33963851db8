#include "synthctl/panel.hpp"

#include <algorithm>
#include <string>
#include <unordered_set>

#include "csv.hpp"
#include "synthctl/error.hpp"

namespace synthctl {

std::string_view error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kIo: return "IoError";
    case ErrorKind::kParse: return "ParseError";
    case ErrorKind::kMissingValue: return "MissingValue";
    case ErrorKind::kDuplicateUnitId: return "DuplicateUnitId";
    case ErrorKind::kUnknownTreatedId: return "UnknownTreatedId";
    case ErrorKind::kBadT0: return "BadT0";
    case ErrorKind::kRowMismatch: return "RowMismatch";
    case ErrorKind::kInvalidArgument: return "InvalidArgument";
    case ErrorKind::kEmptyDonorSet: return "EmptyDonorSet";
    case ErrorKind::kUnknownUnitId: return "UnknownUnitId";
    case ErrorKind::kExcludedIsTreated: return "ExcludedIsTreated";
    case ErrorKind::kBadFraction: return "BadFraction";
    case ErrorKind::kEmptyGroup: return "EmptyGroup";
    case ErrorKind::kTooFewDonors: return "TooFewDonors";
    case ErrorKind::kSingularSystem: return "SingularSystem";
    case ErrorKind::kShapeMismatch: return "ShapeMismatch";
    case ErrorKind::kZeroActualNorm: return "ZeroActualNorm";
    case ErrorKind::kInsufficientColumns: return "InsufficientColumns";
    case ErrorKind::kAllCandidatesFailed: return "AllCandidatesFailed";
    case ErrorKind::kTooFewUnits: return "TooFewUnits";
    case ErrorKind::kInsufficientDonors: return "InsufficientDonors";
    case ErrorKind::kEmptySplit: return "EmptySplit";
    case ErrorKind::kEmptyControl: return "EmptyControl";
    case ErrorKind::kConfigInvalid: return "ConfigInvalid";
  }
  return "Error";
}

void check_index_set(std::span<const Index> rows, Index limit, const char* what) {
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= limit) {
      throw Error(ErrorKind::kInvalidArgument,
                  std::string(what) + ": index " + std::to_string(rows[i]) + " out of range");
    }
    if (i > 0 && rows[i] <= rows[i - 1]) {
      throw Error(ErrorKind::kInvalidArgument, std::string(what) + ": indices must be sorted and unique");
    }
  }
}

IndexSet set_difference(std::span<const Index> a, std::span<const Index> b) {
  IndexSet out;
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

PanelMatrix::PanelMatrix(std::vector<std::string> unit_ids, Eigen::MatrixXd outcomes, Index t0,
                         IndexSet treated)
    : unit_ids_(std::move(unit_ids)),
      outcomes_(std::move(outcomes)),
      t0_(t0),
      treated_(std::move(treated)) {
  const Index n_units = outcomes_.rows();
  if (static_cast<Index>(unit_ids_.size()) != n_units) {
    throw Error(ErrorKind::kShapeMismatch, "unit id count does not match outcome rows");
  }
  if (t0_ < 1 || t0_ >= outcomes_.cols()) {
    throw Error(ErrorKind::kBadT0, "t0=" + std::to_string(t0_) + " not in [1, " +
                                       std::to_string(outcomes_.cols() - 1) + "]");
  }
  check_index_set(treated_, n_units, "treated");
  if (treated_.empty() || static_cast<Index>(treated_.size()) >= n_units) {
    throw Error(ErrorKind::kInvalidArgument, "need 1 <= treated count < unit count");
  }
  for (Index i = 0; i < n_units; ++i) {
    for (Index t = 0; t < outcomes_.cols(); ++t) {
      if (!std::isfinite(outcomes_(i, t))) {
        throw Error(ErrorKind::kMissingValue,
                    "row " + std::to_string(i) + ", col " + std::to_string(t));
      }
    }
  }
  row_lookup_.reserve(unit_ids_.size());
  for (Index i = 0; i < n_units; ++i) {
    if (!row_lookup_.emplace(unit_ids_[i], i).second) {
      throw Error(ErrorKind::kDuplicateUnitId, unit_ids_[i]);
    }
  }
  treated_mask_.assign(n_units, 0);
  for (Index r : treated_) treated_mask_[r] = 1;
  donors_.reserve(n_units - treated_.size());
  for (Index i = 0; i < n_units; ++i) {
    if (!treated_mask_[i]) donors_.push_back(i);
  }
}

bool PanelMatrix::is_treated(Index row) const { return treated_mask_.at(row) != 0; }

Index PanelMatrix::row_of(const std::string& id) const {
  const auto it = row_lookup_.find(id);
  if (it == row_lookup_.end()) throw Error(ErrorKind::kUnknownUnitId, id);
  return it->second;
}

IndexSet PanelMatrix::rows_of(std::span<const std::string> ids) const {
  IndexSet rows;
  rows.reserve(ids.size());
  for (const auto& id : ids) rows.push_back(row_of(id));
  std::sort(rows.begin(), rows.end());
  rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
  return rows;
}

CovariateTable::CovariateTable(std::vector<std::string> unit_ids, Eigen::MatrixXd covariates)
    : unit_ids_(std::move(unit_ids)), covariates_(std::move(covariates)) {
  if (static_cast<Index>(unit_ids_.size()) != covariates_.rows()) {
    throw Error(ErrorKind::kShapeMismatch, "unit id count does not match covariate rows");
  }
  if (covariates_.cols() < 1) throw Error(ErrorKind::kInvalidArgument, "covariates need p >= 1");
  if (!covariates_.allFinite()) throw Error(ErrorKind::kMissingValue, "covariate table has missing entries");
}

OutcomeView::OutcomeView(const Eigen::MatrixXd& parent, IndexSet rows, ColumnRange cols)
    : parent_(&parent), rows_(std::move(rows)), cols_(cols) {
  check_index_set(rows_, parent.rows(), "view rows");
  if (cols_.begin < 0 || cols_.end > parent.cols() || cols_.begin > cols_.end) {
    throw Error(ErrorKind::kInvalidArgument, "view columns out of range");
  }
}

Eigen::MatrixXd OutcomeView::materialize() const { return gather(*parent_, rows_, cols_); }

Eigen::MatrixXd gather(const Eigen::MatrixXd& m, std::span<const Index> rows, ColumnRange cols) {
  Eigen::MatrixXd out(static_cast<Index>(rows.size()), cols.size());
  for (Index i = 0; i < out.rows(); ++i) {
    out.row(i) = m.row(rows[i]).segment(cols.begin, cols.size());
  }
  return out;
}

SplitViews split_views(const PanelMatrix& panel) {
  const auto& y = panel.outcomes();
  return SplitViews{
      OutcomeView(y, panel.treated(), panel.pre_range()),
      OutcomeView(y, panel.treated(), panel.post_range()),
      OutcomeView(y, panel.donors(), panel.pre_range()),
      OutcomeView(y, panel.donors(), panel.post_range()),
  };
}

std::vector<std::string> read_id_list(const std::filesystem::path& path) {
  auto in = csv::open_in(path);
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    const auto id = csv::trim(line);
    if (!id.empty()) ids.emplace_back(id);
  }
  return ids;
}

void write_id_list(std::span<const std::string> ids, const std::filesystem::path& path) {
  auto out = csv::open_out(path);
  for (const auto& id : ids) out << id << '\n';
}

namespace {

struct WideTable {
  std::vector<std::string> ids;
  Eigen::MatrixXd values;
};

WideTable read_wide_csv(const std::filesystem::path& path, char expected_prefix) {
  auto in = csv::open_in(path);
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::kParse, path.string() + ": empty file");
  const auto header = csv::split(line);
  if (header.size() < 2 || header[0] != "unit_id") {
    throw Error(ErrorKind::kParse, path.string() + ": header must start with unit_id");
  }
  for (std::size_t c = 1; c < header.size(); ++c) {
    if (header[c].empty() || header[c][0] != expected_prefix) {
      throw Error(ErrorKind::kParse, path.string() + ": unexpected column '" + std::string(header[c]) + "'");
    }
  }
  const Index cols = static_cast<Index>(header.size()) - 1;
  std::vector<std::string> ids;
  std::vector<double> flat;
  Index row = 0;
  while (std::getline(in, line)) {
    if (csv::trim(line).empty()) continue;
    const auto cells = csv::split(line);
    if (static_cast<Index>(cells.size()) != cols + 1) {
      throw Error(ErrorKind::kParse, path.string() + ": row " + std::to_string(row) + " has " +
                                         std::to_string(cells.size()) + " fields, expected " +
                                         std::to_string(cols + 1));
    }
    ids.emplace_back(cells[0]);
    for (Index c = 0; c < cols; ++c) {
      const auto value = csv::parse_real(cells[c + 1]);
      if (!value) {
        throw Error(ErrorKind::kMissingValue,
                    "(" + std::to_string(row) + ", " + std::to_string(c) + ") unit " + ids.back());
      }
      flat.push_back(*value);
    }
    ++row;
  }
  WideTable table;
  table.ids = std::move(ids);
  table.values = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      flat.data(), row, cols);
  return table;
}

void write_wide_csv(const std::filesystem::path& path, char prefix,
                    const std::vector<std::string>& ids, const Eigen::MatrixXd& values) {
  auto out = csv::open_out(path);
  out << "unit_id";
  for (Index c = 0; c < values.cols(); ++c) out << ',' << prefix << (c + 1);
  out << '\n';
  for (Index i = 0; i < values.rows(); ++i) {
    out << ids[i];
    for (Index c = 0; c < values.cols(); ++c) out << ',' << csv::format_real(values(i, c));
    out << '\n';
  }
}

}  // namespace

PanelMatrix load_panel(const std::filesystem::path& outcome_path,
                       const std::filesystem::path& treated_path, Index t0) {
  auto table = read_wide_csv(outcome_path, 't');
  std::unordered_map<std::string, Index> lookup;
  for (Index i = 0; i < static_cast<Index>(table.ids.size()); ++i) {
    if (!lookup.emplace(table.ids[i], i).second) throw Error(ErrorKind::kDuplicateUnitId, table.ids[i]);
  }
  IndexSet treated;
  for (const auto& id : read_id_list(treated_path)) {
    const auto it = lookup.find(id);
    if (it == lookup.end()) throw Error(ErrorKind::kUnknownTreatedId, id);
    treated.push_back(it->second);
  }
  std::sort(treated.begin(), treated.end());
  if (std::adjacent_find(treated.begin(), treated.end()) != treated.end()) {
    throw Error(ErrorKind::kInvalidArgument, "treated list repeats a unit id");
  }
  return PanelMatrix(std::move(table.ids), std::move(table.values), t0, std::move(treated));
}

void write_panel(const PanelMatrix& panel, const std::filesystem::path& outcome_path,
                 const std::filesystem::path& treated_path) {
  write_wide_csv(outcome_path, 't', panel.unit_ids(), panel.outcomes());
  std::vector<std::string> ids;
  for (Index r : panel.treated()) ids.push_back(panel.unit_ids()[r]);
  write_id_list(ids, treated_path);
}

CovariateTable load_covariates(const std::filesystem::path& path, const PanelMatrix& panel) {
  auto table = read_wide_csv(path, 'x');
  Eigen::MatrixXd ordered(panel.units(), table.values.cols());
  std::vector<char> seen(panel.units(), 0);
  for (Index i = 0; i < static_cast<Index>(table.ids.size()); ++i) {
    if (!panel.contains(table.ids[i])) {
      throw Error(ErrorKind::kRowMismatch, "covariate unit '" + table.ids[i] + "' is not in the panel");
    }
    const Index row = panel.row_of(table.ids[i]);
    if (seen[row]) throw Error(ErrorKind::kDuplicateUnitId, table.ids[i]);
    seen[row] = 1;
    ordered.row(row) = table.values.row(i);
  }
  for (Index r = 0; r < panel.units(); ++r) {
    if (!seen[r]) {
      throw Error(ErrorKind::kRowMismatch, "panel unit '" + panel.unit_ids()[r] + "' has no covariate row");
    }
  }
  return CovariateTable(panel.unit_ids(), std::move(ordered));
}

void write_covariates(const CovariateTable& table, const std::filesystem::path& path) {
  write_wide_csv(path, 'x', table.unit_ids(), table.covariates());
}

}  // namespace synthctl
