#include "ivl/config.hpp"

#include <fstream>
#include <sstream>

#include "ivl/error.hpp"

namespace ivl {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

Config Config::parse(const std::string& text) {
  Config cfg;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config: malformed line '" + line + "'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config: empty key in line '" + line + "'");
    cfg.values_[key] = value;
  }
  if (cfg.values_.count("format") && cfg.values_["format"] != "ivl-config/1")
    throw ConfigError("config: unsupported format '" + cfg.values_["format"] + "'");
  return cfg;
}

Config Config::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("config: cannot read " + path);
  std::ostringstream os;
  os << f.rdbuf();
  Config cfg = parse(os.str());
  if (!cfg.values_.count("format"))
    throw ConfigError("config: " + path + " is missing the 'format = ivl-config/1' tag");
  return cfg;
}

const std::string& Config::require(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("config: missing required key '" + key + "'");
  return it->second;
}

std::string Config::get_or(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

int64_t Config::get_int(const std::string& key, int64_t fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    return std::stoll(it->second);
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' is not an integer: " + it->second);
  }
}

double Config::get_double(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    return std::stod(it->second);
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' is not a number: " + it->second);
  }
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw ConfigError("config: key '" + key + "' is not a boolean: " + it->second);
}

std::string Config::serialize() const {
  std::ostringstream os;
  os << "format = ivl-config/1\n";
  for (const auto& [k, v] : values_)
    if (k != "format") os << k << " = " << v << "\n";
  return os.str();
}

}  // namespace ivl
