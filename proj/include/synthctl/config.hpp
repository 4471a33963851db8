#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace synthctl {

using KeyValues = std::map<std::string, std::string>;

// `key = value` lines; `#` starts a comment; blank lines and [section]
// headers are ignored.
KeyValues parse_key_values(const std::string& text);
KeyValues load_key_values(const std::filesystem::path& path);

std::vector<double> parse_real_list(const std::string& text);
std::vector<std::string> parse_word_list(const std::string& text);

}  // namespace synthctl
