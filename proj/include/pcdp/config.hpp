// SPDX-License-Identifier: Apache-2.0
//
// Flat `key = value` experiment configuration. Every key has a documented
// default; unknown keys and unparsable values are errors.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace pcdp::io {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ConfigKey {
  std::string name;
  std::string default_value;
  std::string help;
};

// All recognised keys in documentation order.
const std::vector<ConfigKey>& config_keys();

class Config {
 public:
  Config();

  static Config from_file(const std::filesystem::path& path);
  // Parses `key = value` lines; '#' starts a comment. `origin` names the
  // source in error messages.
  static Config from_string(const std::string& text, const std::string& origin = "<string>");

  void set(const std::string& key, const std::string& value);
  // `key=value`
  void apply_override(const std::string& assignment);

  const std::string& raw(const std::string& key) const;
  std::string str(const std::string& key) const { return raw(key); }
  double real(const std::string& key) const;
  std::int64_t integer(const std::string& key) const;
  std::size_t count(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<std::string> list(const std::string& key) const;

  const std::map<std::string, std::string>& values() const { return values_; }
  // Resolved values with numbers and booleans typed where they parse.
  nlohmann::ordered_json to_json() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace pcdp::io
