#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <charconv>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "cli.hpp"
#include "synthctl/error.hpp"
#include "synthctl/version.hpp"

namespace synthctl::cli {

namespace fs = std::filesystem;

namespace {

Error invalid(const std::string& key, const std::string& value, const char* expected) {
  return Error(ErrorKind::kConfigInvalid, "setting '" + key + "' = '" + value + "' is not " + expected);
}

const KeyValues& data_defaults() {
  static const KeyValues kv = {
      {"outcomes", ""}, {"treated", ""}, {"covariates", ""}, {"control", ""}, {"t0", ""},
      {"exclude_file", ""}, {"k", "10"}, {"trees", "16"}, {"leaf_size", "16"}, {"metric", "euclidean"},
      {"standardize", "true"}, {"exact", "false"}, {"subsample", "1"}, {"two_phase", "true"},
  };
  return kv;
}

const KeyValues& model_defaults() {
  static const KeyValues kv = {
      {"alpha", "20"}, {"norm", "l1"}, {"cv", "holdout"}, {"folds", "3"}, {"val_width", "0"},
      {"grid", ""}, {"methods", ""}, {"center", "none"}, {"pool_mode", "union"}, {"debias", "none"},
      {"split_fraction", "0.5"}, {"inference", "ttest"}, {"placebo_draws", "100"}, {"train_end", "0"},
      {"stale_gap", "0"},
  };
  return kv;
}

const KeyValues& sim_defaults() {
  static const KeyValues kv = {
      {"units", "5000"}, {"treated", "200"}, {"control", "200"}, {"periods", "60"}, {"t0", "40"},
      {"covariates", "4"}, {"rank", "3"}, {"factor_scale", "1"}, {"noise_scale", "1"}, {"tau_true", "0"},
      {"heterogeneity", "1"}, {"drift", "0"},
  };
  return kv;
}

// Short names written by the simulator's own config dump.
const std::map<std::string, std::string>& sim_aliases() {
  static const std::map<std::string, std::string> m = {
      {"N", "units"}, {"n", "treated"}, {"T", "periods"}, {"p", "covariates"}, {"r", "rank"}};
  return m;
}

std::string canonical_key(const std::string& command, std::string key) {
  std::replace(key.begin(), key.end(), '-', '_');
  if (command == "simulate") {
    if (auto it = sim_aliases().find(key); it != sim_aliases().end()) return it->second;
  }
  return key;
}

bool looks_like_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open config file " + path.string());
  char c = 0;
  while (in.get(c)) {
    if (!std::isspace(static_cast<unsigned char>(c))) return c == '{';
  }
  return false;
}

std::string absolute_path(const fs::path& p, const fs::path& base) {
  if (p.empty()) return "";
  return (p.is_absolute() ? p : base / p).lexically_normal().string();
}

std::uint64_t parse_seed(const std::string& text) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) throw invalid("seed", text, "an unsigned integer");
  return v;
}

}  // namespace

std::string source_name(Source source) {
  switch (source) {
    case Source::kDefault: return "default";
    case Source::kConfig: return "config";
    case Source::kFlag: return "flag";
  }
  return "default";
}

Source parse_source(const std::string& name) {
  if (name == "flag") return Source::kFlag;
  if (name == "config") return Source::kConfig;
  if (name == "default") return Source::kDefault;
  throw Error(ErrorKind::kConfigInvalid, "unknown setting source '" + name + "'");
}

void Settings::set(const std::string& key, std::string value, Source source) {
  values_[key] = std::move(value);
  sources_[key] = source;
}

const std::string& Settings::text(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw Error(ErrorKind::kConfigInvalid, "no setting named '" + key + "'");
  return it->second;
}

double Settings::real(const std::string& key) const {
  const auto& s = text(key);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) throw invalid(key, s, "a number");
  return v;
}

long long Settings::integer(const std::string& key) const {
  const auto& s = text(key);
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) throw invalid(key, s, "an integer");
  return v;
}

bool Settings::boolean(const std::string& key) const {
  const auto& s = text(key);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw invalid(key, s, "a boolean");
}

KeyValues defaults_for(const std::string& command) {
  if (command == "simulate") return sim_defaults();
  KeyValues kv = data_defaults();
  if (command == "match") return kv;
  kv.insert(model_defaults().begin(), model_defaults().end());
  if (command == "validate") kv["label"] = "experiment";
  if (command == "diagnose") kv["units"] = "";
  return kv;
}

bool is_path_key(const std::string& command, const std::string& key) {
  if (command == "simulate") return false;
  return key == "outcomes" || key == "treated" || key == "covariates" || key == "control" ||
         key == "exclude_file" || key == "grid";
}

Settings resolve_settings(const Invocation& inv, std::uint64_t& seed) {
  Settings settings;
  const KeyValues defaults = defaults_for(inv.command);
  for (const auto& [key, value] : defaults) settings.set(key, value, Source::kDefault);
  seed = 0;

  auto accept = [&](const std::string& raw_key, const std::string& value, Source source, const fs::path& base,
                    const std::string& origin) {
    const std::string key = canonical_key(inv.command, raw_key);
    if (!defaults.count(key)) {
      throw Error(ErrorKind::kConfigInvalid, origin + ": '" + inv.command + "' has no setting '" + raw_key + "'");
    }
    settings.set(key, is_path_key(inv.command, key) ? absolute_path(value, base) : value, source);
  };

  if (inv.config_path) {
    const fs::path& path = *inv.config_path;
    const fs::path base = fs::absolute(path).parent_path();
    if (looks_like_json(path)) {
      Json manifest;
      try {
        std::ifstream in(path);
        manifest = Json::parse(in);
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::kParse, path.string() + ": " + e.what());
      }
      if (manifest.value("command", "") != inv.command) {
        throw Error(ErrorKind::kConfigInvalid, path.string() + " records a '" + manifest.value("command", "") +
                                                   "' run, not '" + inv.command + "'");
      }
      const Json sources = manifest.value("sources", Json::object());
      for (const auto& [key, value] : manifest.at("config").items()) {
        const Source src = sources.contains(key) ? parse_source(sources.at(key).get<std::string>()) : Source::kConfig;
        accept(key, value.get<std::string>(), src, base, path.string());
      }
      seed = manifest.at("seed").get<std::uint64_t>();
    } else {
      for (const auto& [key, value] : load_key_values(path)) {
        if (key == "seed") {
          seed = parse_seed(value);
          continue;
        }
        accept(key, value, Source::kConfig, base, path.string());
      }
    }
  }
  const fs::path cwd = fs::current_path();
  for (const auto& [key, value] : inv.flags) accept(key, value, Source::kFlag, cwd, "flag --" + key);
  if (inv.seed) seed = *inv.seed;
  return settings;
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot read " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md.data(), &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int{md[i]};
  return hex.str();
}

void StageTimer::lap(const std::string& stage) {
  const auto now = std::chrono::steady_clock::now();
  stages_.emplace_back(stage, std::chrono::duration<double>(now - last_).count());
  last_ = now;
}

void StageTimer::add(const std::vector<std::pair<std::string, double>>& stages) {
  stages_.insert(stages_.end(), stages.begin(), stages.end());
  last_ = std::chrono::steady_clock::now();
}

double StageTimer::total() const {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
}

void record_input(RunRecord& record, const std::string& key, const fs::path& path) {
  record.inputs[key] = Json{{"path", path.string()}, {"sha256", sha256_file(path)}};
}

void write_manifest(RunRecord& record, const fs::path& out) {
  Json j;
  j["tool"] = "synthctl";
  j["version"] = std::string(kVersion);
  j["command"] = record.command;
  j["seed"] = record.seed;
  Json config = Json::object(), sources = Json::object();
  for (const auto& [key, value] : record.settings.values()) config[key] = value;
  for (const auto& [key, src] : record.settings.sources()) sources[key] = source_name(src);
  j["config"] = std::move(config);
  j["sources"] = std::move(sources);
  j["inputs"] = record.inputs;
  j["model"] = record.model;
  Json outputs = Json::object();
  for (const auto& name : record.outputs) outputs[name] = sha256_file(out / name);
  j["outputs"] = std::move(outputs);
  Json timings = Json::object();
  for (const auto& [stage, seconds] : record.timer.stages()) timings[stage] = seconds;
  timings["total"] = record.timer.total();
  j["timings"] = std::move(timings);

  std::ofstream os(out / "manifest.json");
  if (!os) throw Error(ErrorKind::kIo, "cannot write " + (out / "manifest.json").string());
  os << j.dump(2) << '\n';
}

}  // namespace synthctl::cli
