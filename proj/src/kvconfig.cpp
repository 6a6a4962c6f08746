#include "sphereflow/kvconfig.hpp"

#include <charconv>
#include <sstream>

#include "sphereflow/bytes.hpp"
#include "sphereflow/error.hpp"

namespace sphereflow {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::int64_t parse_int(const std::string& text, const std::string& what) {
  std::int64_t v = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (text.empty() || ec != std::errc() || ptr != end) {
    fail(ErrorKind::InvalidArgument, what + ": expected an integer, got '" + text + "'");
  }
  return v;
}

double parse_double(const std::string& text, const std::string& what) {
  double v = 0.0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (text.empty() || ec != std::errc() || ptr != end) {
    fail(ErrorKind::InvalidArgument, what + ": expected a number, got '" + text + "'");
  }
  return v;
}

KvConfig KvConfig::parse(const std::string& text, const std::string& origin) {
  KvConfig cfg;
  cfg.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      fail(ErrorKind::BadFormat, origin + ":" + std::to_string(lineno) + ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) fail(ErrorKind::BadFormat, origin + ":" + std::to_string(lineno) + ": empty key");
    if (cfg.has(key)) {
      fail(ErrorKind::BadFormat, origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
    cfg.entries_.emplace_back(key, value);
  }
  return cfg;
}

KvConfig KvConfig::load(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return parse(std::string(bytes.begin(), bytes.end()), path.string());
}

void KvConfig::set(const std::string& key, const std::string& value) {
  for (auto& [k, v] : entries_) {
    if (k == key) {
      v = value;
      return;
    }
  }
  entries_.emplace_back(key, value);
}

bool KvConfig::has(const std::string& key) const { return get(key).has_value(); }

std::optional<std::string> KvConfig::get(const std::string& key) const {
  for (const auto& [k, v] : entries_) {
    if (k == key) return v;
  }
  return std::nullopt;
}

std::string KvConfig::get_string(const std::string& key, const std::string& fallback) const {
  return get(key).value_or(fallback);
}

std::int64_t KvConfig::get_int(const std::string& key, std::int64_t fallback) const {
  const auto v = get(key);
  return v ? parse_int(*v, origin_ + ": " + key) : fallback;
}

double KvConfig::get_double(const std::string& key, double fallback) const {
  const auto v = get(key);
  return v ? parse_double(*v, origin_ + ": " + key) : fallback;
}

void KvConfig::require_known(const std::set<std::string>& allowed) const {
  for (const auto& [k, v] : entries_) {
    if (!allowed.contains(k)) fail(ErrorKind::InvalidArgument, origin_ + ": unknown key '" + k + "'");
  }
}

std::string KvConfig::serialize() const {
  std::string out;
  for (const auto& [k, v] : entries_) out += k + "=" + v + "\n";
  return out;
}

void KvConfig::save(const std::filesystem::path& path) const { write_file_text(path, serialize()); }

}  // namespace sphereflow
