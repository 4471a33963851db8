#pragma once

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "synthctl/config.hpp"

namespace synthctl::cli {

using Json = nlohmann::ordered_json;

enum class Source { kDefault, kConfig, kFlag };

// What the user typed, before defaults and the config file are merged in.
struct Invocation {
  std::string command;
  std::optional<std::filesystem::path> config_path;
  std::optional<std::uint64_t> seed;
  int threads = 0;
  std::filesystem::path out = ".";
  KeyValues flags;
};

// Effective settings with the origin of every value.
class Settings {
 public:
  void set(const std::string& key, std::string value, Source source);
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& text(const std::string& key) const;
  bool empty(const std::string& key) const { return text(key).empty(); }
  double real(const std::string& key) const;
  long long integer(const std::string& key) const;
  bool boolean(const std::string& key) const;
  std::filesystem::path path(const std::string& key) const { return text(key); }

  const KeyValues& values() const { return values_; }
  const std::map<std::string, Source>& sources() const { return sources_; }

 private:
  KeyValues values_;
  std::map<std::string, Source> sources_;
};

std::string source_name(Source source);
Source parse_source(const std::string& name);

// Every key a subcommand understands, with its default.
KeyValues defaults_for(const std::string& command);
bool is_path_key(const std::string& command, const std::string& key);

// Defaults < config file (key-value or a previous manifest) < flags.
// Relative paths resolve against the config file's directory or, for
// flags, the working directory.
Settings resolve_settings(const Invocation& inv, std::uint64_t& seed);

std::string sha256_file(const std::filesystem::path& path);

class StageTimer {
 public:
  void lap(const std::string& stage);
  void add(const std::vector<std::pair<std::string, double>>& stages);
  const std::vector<std::pair<std::string, double>>& stages() const { return stages_; }
  double total() const;

 private:
  std::vector<std::pair<std::string, double>> stages_;
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
  std::chrono::steady_clock::time_point last_ = start_;
};

struct RunRecord {
  std::string command;
  std::uint64_t seed = 0;
  Settings settings;
  Json inputs = Json::object();
  Json model;  // null when the command selects no model
  std::vector<std::string> outputs;
  StageTimer timer;
};

// Hashes the named input so the manifest pins the data it ran on.
void record_input(RunRecord& record, const std::string& key, const std::filesystem::path& path);

// manifest.json in `out`. Everything except "timings" is a pure function of
// the inputs, settings and seed.
void write_manifest(RunRecord& record, const std::filesystem::path& out);

// Returns the process exit status: 0, or 1 when validate saw a failing verdict.
int run_command(const Invocation& inv);

}  // namespace synthctl::cli
