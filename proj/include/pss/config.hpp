#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pss/io.hpp"

namespace pss::config {

/// Flat key-value configuration with section-prefixed keys (svm.c, lda.k).
/// Lines are `key = value`; '#' starts a comment. Consumers read keys through
/// the take_* accessors and finish with ensure_consumed(), which rejects
/// misspelled or unknown keys instead of silently ignoring them.
class Config {
 public:
  static Config parse(const std::string& text, const std::string& origin = "<config>") {
    Config c;
    c.origin_ = origin;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      std::size_t hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      std::size_t eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw std::runtime_error(origin + " line " + std::to_string(line_no) +
                                 ": expected key = value");
      std::string key = trim(trimmed.substr(0, eq));
      std::string value = trim(trimmed.substr(eq + 1));
      if (key.empty())
        throw std::runtime_error(origin + " line " + std::to_string(line_no) + ": empty key");
      if (!c.values_.emplace(key, value).second)
        throw std::runtime_error(origin + " line " + std::to_string(line_no) +
                                 ": duplicate key " + key);
    }
    return c;
  }

  static Config parse_file(const std::filesystem::path& path) {
    return parse(io::read_file_text(path), path.string());
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string take_string(const std::string& key, const std::string& fallback) {
    consumed_.insert(key);
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  std::string take_required(const std::string& key) {
    consumed_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end())
      throw std::runtime_error(origin_ + ": missing required key " + key);
    return it->second;
  }

  int take_int(const std::string& key, int fallback) {
    return static_cast<int>(parse_ll(key, fallback));
  }

  std::uint64_t take_u64(const std::string& key, std::uint64_t fallback) {
    consumed_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      return std::stoull(it->second);
    } catch (const std::exception&) {
      throw std::runtime_error(origin_ + ": key " + key + " is not an unsigned integer: " +
                               it->second);
    }
  }

  double take_double(const std::string& key, double fallback) {
    consumed_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      std::size_t pos = 0;
      double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw std::runtime_error(origin_ + ": key " + key + " is not a number: " + it->second);
    }
  }

  bool take_bool(const std::string& key, bool fallback) {
    consumed_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw std::runtime_error(origin_ + ": key " + key + " is not a boolean: " + it->second);
  }

  /// Comma-separated integer list.
  std::vector<int> take_int_list(const std::string& key, const std::vector<int>& fallback) {
    consumed_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<int> out;
    std::istringstream in(it->second);
    std::string part;
    while (std::getline(in, part, ',')) {
      try {
        out.push_back(std::stoi(trim(part)));
      } catch (const std::exception&) {
        throw std::runtime_error(origin_ + ": key " + key + " is not an integer list: " +
                                 it->second);
      }
    }
    if (out.empty())
      throw std::runtime_error(origin_ + ": key " + key + " is empty");
    return out;
  }

  void ensure_consumed() const {
    std::string unknown;
    for (const auto& [k, v] : values_)
      if (!consumed_.count(k)) unknown += (unknown.empty() ? "" : ", ") + k;
    if (!unknown.empty())
      throw std::runtime_error(origin_ + ": unknown keys: " + unknown);
  }

 private:
  static std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }

  long long parse_ll(const std::string& key, long long fallback) {
    consumed_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      std::size_t pos = 0;
      long long v = std::stoll(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw std::runtime_error(origin_ + ": key " + key + " is not an integer: " + it->second);
    }
  }

  std::map<std::string, std::string> values_;
  std::set<std::string> consumed_;
  std::string origin_;
};

}  // namespace pss::config
