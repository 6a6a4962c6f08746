#pragma once

// Line-oriented key=value documents. '#' starts a comment; blank lines are
// ignored; keys are unique; insertion order is preserved on output.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace sphereflow {

class KvConfig {
 public:
  static KvConfig parse(const std::string& text, const std::string& origin = "config");
  static KvConfig load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;
  std::optional<std::string> get(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;

  /// InvalidArgument naming the first key outside `allowed`.
  void require_known(const std::set<std::string>& allowed) const;

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }
  std::string serialize() const;
  void save(const std::filesystem::path& path) const;

 private:
  std::string origin_ = "config";
  std::vector<std::pair<std::string, std::string>> entries_;
};

/// Strict numeric parsing; the whole token must be consumed.
std::int64_t parse_int(const std::string& text, const std::string& what);
double parse_double(const std::string& text, const std::string& what);

}  // namespace sphereflow
