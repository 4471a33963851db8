#include "synthctl/config.hpp"

#include <sstream>

#include "csv.hpp"
#include "synthctl/error.hpp"
#include "synthctl/parallel.hpp"

namespace synthctl {

namespace {
int g_threads = 0;
}

void set_thread_count(int threads) { g_threads = threads < 0 ? 0 : threads; }

int thread_count() {
  if (g_threads > 0) return g_threads;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto trimmed = csv::trim(line);
    if (trimmed.empty() || trimmed.front() == '[') continue;
    const auto eq = trimmed.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorKind::kConfigInvalid, "line " + std::to_string(line_no) + ": expected key = value");
    }
    std::string key(csv::trim(trimmed.substr(0, eq)));
    std::string value(csv::trim(trimmed.substr(eq + 1)));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    kv[std::move(key)] = std::move(value);
  }
  return kv;
}

KeyValues load_key_values(const std::filesystem::path& path) {
  auto in = csv::open_in(path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_key_values(buf.str());
}

std::vector<double> parse_real_list(const std::string& text) {
  std::vector<double> out;
  for (auto cell : csv::split(text)) {
    if (cell.empty()) continue;
    const auto v = csv::parse_real(cell);
    if (!v) throw Error(ErrorKind::kConfigInvalid, "non-finite value in list '" + text + "'");
    out.push_back(*v);
  }
  return out;
}

std::vector<std::string> parse_word_list(const std::string& text) {
  std::vector<std::string> out;
  for (auto cell : csv::split(text)) {
    if (!cell.empty()) out.emplace_back(cell);
  }
  return out;
}

}  // namespace synthctl
