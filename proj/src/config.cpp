// Copyright 2026 The mfsr Authors
// SPDX-License-Identifier: Apache-2.0

#include "mfsr/config.hpp"

#include <charconv>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <vector>

namespace mfsr {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::string unquote(std::string_view v) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return std::string(v.substr(1, v.size() - 2));
  return std::string(v);
}

}  // namespace

ConfigFile ConfigFile::parse(std::string_view text) {
  ConfigFile cfg;
  std::string table;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = text.find('\n', pos);
    std::string_view line = text.substr(pos, end == std::string_view::npos ? text.size() - pos : end - pos);
    pos = end == std::string_view::npos ? text.size() + 1 : end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(line_no) + ": unterminated table header");
      table = std::string(trim(line.substr(1, line.size() - 2)));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    }
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    const std::string full = table.empty() ? std::string(key) : table + "." + std::string(key);
    cfg.entries_[full] = unquote(trim(line.substr(eq + 1)));
  }
  return cfg;
}

ConfigFile ConfigFile::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string ConfigFile::to_string() const {
  // Group by the table part (everything before the last dot).
  std::map<std::string, std::vector<std::pair<std::string, std::string>>> tables;
  for (const auto& [key, value] : entries_) {
    const auto dot = key.rfind('.');
    if (dot == std::string::npos) {
      tables[""].emplace_back(key, value);
    } else {
      tables[key.substr(0, dot)].emplace_back(key.substr(dot + 1), value);
    }
  }
  std::ostringstream os;
  for (const auto& [name, items] : tables) {
    if (!name.empty()) os << '[' << name << "]\n";
    for (const auto& [key, value] : items) os << key << " = " << value << '\n';
  }
  return os.str();
}

void ConfigFile::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config file: " + path.string());
  out << to_string();
}

const std::string& ConfigFile::get(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError("missing config key: " + key);
  return it->second;
}

std::string ConfigFile::get_or(const std::string& key, const std::string& fallback) const {
  const auto it = entries_.find(key);
  return it == entries_.end() ? fallback : it->second;
}

double ConfigFile::get_double(const std::string& key, double fallback) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " is not a number: " + it->second);
  }
}

long long ConfigFile::get_int(const std::string& key, long long fallback) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  long long v = 0;
  const auto& s = it->second;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw ConfigError("config key " + key + " is not an integer: " + s);
  }
  return v;
}

bool ConfigFile::get_bool(const std::string& key, bool fallback) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  if (it->second == "true" || it->second == "1" || it->second == "yes") return true;
  if (it->second == "false" || it->second == "0" || it->second == "no") return false;
  throw ConfigError("config key " + key + " is not a boolean: " + it->second);
}

void ConfigFile::set(const std::string& key, double value) {
  std::ostringstream os;
  os << std::setprecision(17) << value;
  entries_[key] = os.str();
}

ConfigFile ConfigFile::table(const std::string& prefix) const {
  ConfigFile out;
  const std::string p = prefix + ".";
  for (const auto& [key, value] : entries_) {
    if (key.rfind(p, 0) == 0) out.entries_[key.substr(p.size())] = value;
  }
  return out;
}

void ConfigFile::merge(const ConfigFile& other, const std::string& prefix) {
  for (const auto& [key, value] : other.entries_) {
    entries_[prefix.empty() ? key : prefix + "." + key] = value;
  }
}

}  // namespace mfsr
