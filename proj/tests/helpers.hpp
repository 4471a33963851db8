#pragma once

#include <doctest.h>

#include <Eigen/Dense>

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "synthctl/error.hpp"
#include "synthctl/panel.hpp"

namespace testing {

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("synthctl_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream(path) << text;
}

inline Eigen::MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> z;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = z(rng);
  return m;
}

inline std::vector<std::string> numbered_ids(Eigen::Index n, const std::string& prefix = "u") {
  std::vector<std::string> ids;
  for (Eigen::Index i = 0; i < n; ++i) ids.push_back(prefix + std::to_string(i));
  return ids;
}

inline synthctl::PanelMatrix make_panel(const Eigen::MatrixXd& y, Eigen::Index t0, synthctl::IndexSet treated) {
  return synthctl::PanelMatrix(numbered_ids(y.rows()), y, t0, std::move(treated));
}

template <typename F>
synthctl::ErrorKind error_kind_of(F&& f) {
  try {
    f();
  } catch (const synthctl::Error& e) {
    return e.kind();
  }
  FAIL("expected a synthctl::Error");
  return synthctl::ErrorKind::kIo;
}

}  // namespace testing
