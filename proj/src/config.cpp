// SPDX-License-Identifier: Apache-2.0
#include "pcdp/config.hpp"

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace pcdp::io {

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      // data
      {"dataset", "mnist", "mnist | synthetic"},
      {"mnist_images", "data/mnist/images-idx3-ubyte.gz", "IDX image file (plain or gzip)"},
      {"mnist_labels", "data/mnist/labels-idx1-ubyte.gz", "IDX label file (plain or gzip)"},
      {"synthetic_classes", "2", "synthetic: class count"},
      {"synthetic_features", "20", "synthetic: feature dimension"},
      {"synthetic_separation", "5", "synthetic: distance between class means"},
      {"synthetic_noise_decay", "1", "synthetic: noise std of feature i is decay^i"},
      {"synthetic_samples", "4000", "synthetic: samples generated before splitting"},
      {"private_size", "2000", "private training set size |D|"},
      {"public_size", "100", "public pool size m"},
      {"holdout_size", "1000", "holdout public pool size M (skew diagnostics)"},
      {"test_size", "2000", "test set size"},
      // model
      {"model", "logistic", "logistic | mlp"},
      {"hidden", "64", "mlp hidden width"},
      // shared privacy / projection
      {"seed", "0", "root seed for every random stream"},
      {"clip", "abadi", "abadi | auto_s | nsgd | none"},
      {"clip_threshold", "0.01", "clipping threshold c"},
      {"clip_stabilizer", "0.01", "stabilizer r for auto_s / nsgd"},
      {"sigma", "10", "noise multiplier"},
      {"delta", "1e-5", "target delta"},
      {"k", "100", "projection dimension (per layer in layerwise mode)"},
      {"projection_mode", "layerwise", "layerwise | whole"},
      {"public_strategy", "rbs", "rbs | ibs public batch segmentation"},
      {"public_batch", "100", "public batch size per projection refresh"},
      {"omega", "0", "symmetrizing noise scale (pcdp, experimental)"},
      // centralized training
      {"method", "pcdp", "pcdp | dpsgd | pdp | rpdp | rsdp"},
      {"epochs", "80", "training epochs"},
      {"lot_size", "50", "lot size B (q = B / private_size)"},
      {"lr", "1", "learning rate"},
      {"beta", "1", "projection refresh interval in steps"},
      {"sampling", "poisson", "poisson | fixed_shuffle"},
      {"rp_dim", "800", "rpdp random projection dimension"},
      {"rsdp_keep", "0.3", "rsdp coordinate keep rate"},
      {"eval_every", "0", "steps between test evaluations (0 = once per epoch)"},
      {"eps_cap", "0", "halt before epsilon would exceed this (0 = no cap)"},
      {"diagnose_skew", "false", "record projector distance to a holdout projection"},
      {"holdout_batch", "512", "holdout batch size for skew diagnostics"},
      // federated
      {"fed_method", "fedpcdp", "fedpcdp | fedavg_dp | fedprox_dp | fedpdp"},
      {"clients", "10", "client count N"},
      {"sampled_clients", "8", "clients per round S"},
      {"rounds", "80", "communication rounds R"},
      {"local_steps", "5", "local private steps T per round"},
      {"lr_local", "1", "client learning rate"},
      {"lr_global", "1", "server learning rate"},
      {"partition", "extreme", "iid | shard | extreme"},
      {"local_lot", "64", "client lot size"},
      {"mu", "0.01", "fedprox proximal weight"},
      {"virtual_steps", "0", "virtual-client SGD steps (0 = local_steps)"},
      {"virtual_lr", "0", "virtual-client learning rate (0 = lr_local * clip_threshold)"},
      // accountant
      {"accountant_q", "0", "sampling rate (0 = lot_size / private_size)"},
      {"accountant_steps", "0", "composed steps (0 = epochs * ceil(private_size / lot_size))"},
      // grad2d dumps
      {"checkpoint", "", "parameter checkpoint for dump-grad2d"},
      {"dump_layers", "", "comma-separated layer names for dump-grad2d"},
      {"grad2d_samples", "64", "private samples per grad2d dump"},
  };
  return keys;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

Config::Config() {
  for (const auto& k : config_keys()) values_[k.name] = k.default_value;
}

Config Config::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_string(ss.str(), path.string());
}

Config Config::from_string(const std::string& text, const std::string& origin) {
  Config c;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value', got '" + line + "'");
    try {
      c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return c;
}

void Config::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second = value;
}

void Config::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not of the form key=value");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

const std::string& Config::raw(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

double Config::real(const std::string& key) const {
  const std::string& v = raw(key);
  char* end = nullptr;
  errno = 0;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size() || errno == ERANGE)
    throw ConfigError("config key '" + key + "': '" + v + "' is not a number");
  return d;
}

std::int64_t Config::integer(const std::string& key) const {
  const std::string& v = raw(key);
  std::int64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError("config key '" + key + "': '" + v + "' is not an integer");
  return out;
}

std::size_t Config::count(const std::string& key) const {
  const auto v = integer(key);
  if (v < 0) throw ConfigError("config key '" + key + "' must be non-negative");
  return static_cast<std::size_t>(v);
}

std::uint64_t Config::u64(const std::string& key) const {
  const std::string& v = raw(key);
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError("config key '" + key + "': '" + v + "' is not an unsigned integer");
  return out;
}

bool Config::flag(const std::string& key) const {
  std::string v = raw(key);
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char ch) { return std::tolower(ch); });
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "': '" + raw(key) + "' is not a boolean");
}

std::vector<std::string> Config::list(const std::string& key) const {
  std::vector<std::string> out;
  std::stringstream ss(raw(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

nlohmann::ordered_json Config::to_json() const {
  nlohmann::ordered_json j;
  for (const auto& k : config_keys()) {
    const std::string& v = values_.at(k.name);
    const auto parsed = nlohmann::json::parse(v, nullptr, false);
    if (!parsed.is_discarded() && (parsed.is_number() || parsed.is_boolean()))
      j[k.name] = parsed;
    else
      j[k.name] = v;
  }
  return j;
}

}  // namespace pcdp::io
