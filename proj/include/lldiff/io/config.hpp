#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lldiff/core/error.hpp"

namespace lldiff::io {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

/// Flat key = value settings. Lines starting with '#' are comments. Later
/// assignments override earlier ones; every lookup is recorded so unused
/// keys (usually typos) can be reported.
/// Shortest text that parses back to the same value.
template <class N>
std::string format_number(N value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, ptr);
}

class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::istream& is, const std::string& origin) {
    KeyValueConfig cfg;
    std::string line;
    for (int lineno = 1; std::getline(is, line); ++lineno) {
      const std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      cfg.assign(t, origin + ":" + std::to_string(lineno));
    }
    return cfg;
  }

  static KeyValueConfig load(const std::filesystem::path& path) {
    std::ifstream is(path);
    require(static_cast<bool>(is), ErrorCode::io, "cannot open config " + path.string());
    return parse(is, path.string());
  }

  /// "key=value" as given on the command line or in a file.
  void assign(std::string_view assignment, const std::string& origin = "command line") {
    const auto eq = assignment.find('=');
    require(eq != std::string_view::npos, ErrorCode::config, origin + ": expected key = value, got '" +
                                                                 std::string(assignment) + "'");
    const std::string key = trim(assignment.substr(0, eq));
    require(!key.empty(), ErrorCode::config, origin + ": empty key");
    values_[key] = trim(assignment.substr(eq + 1));
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get(const std::string& key, const std::string& fallback) {
    used_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) {
      values_[key] = fallback;
      return fallback;
    }
    return it->second;
  }

  template <class N>
  N get_number(const std::string& key, N fallback) {
    const std::string text = get(key, format_number(fallback));
    return parse_number<N>(key, text);
  }

  bool get_bool(const std::string& key, bool fallback) {
    const std::string v = get(key, fallback ? "true" : "false");
    if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "off" || v == "no") return false;
    throw Error(ErrorCode::config, "key '" + key + "': expected a boolean, got '" + v + "'");
  }

  /// Comma-separated list; may be empty only when the fallback is.
  template <class N>
  std::vector<N> get_list(const std::string& key, const std::vector<N>& fallback) {
    std::string def;
    for (std::size_t i = 0; i < fallback.size(); ++i) def += (i ? "," : "") + format_number(fallback[i]);
    const std::string text = get(key, def);
    std::vector<N> out;
    std::istringstream is(text);
    std::string item;
    while (std::getline(is, item, ',')) out.push_back(parse_number<N>(key, trim(item)));
    require(!out.empty() || fallback.empty(), ErrorCode::config, "key '" + key + "': empty list");
    return out;
  }

  /// Comma-separated strings, possibly none.
  std::vector<std::string> get_string_list(const std::string& key) {
    std::vector<std::string> out;
    std::istringstream is(get(key, ""));
    std::string item;
    while (std::getline(is, item, ','))
      if (!trim(item).empty()) out.push_back(trim(item));
    return out;
  }

  std::vector<std::string> unused_keys() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_)
      if (!used_.count(k)) out.push_back(k);
    return out;
  }

  /// All settings, including defaults filled in by lookups, sorted by key.
  std::string dump() const {
    std::ostringstream os;
    for (const auto& [k, v] : values_) os << k << " = " << v << '\n';
    return os.str();
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  template <class N>
  static N parse_number(const std::string& key, const std::string& text) {
    N value{};
    const char* first = text.data();
    const char* last = first + text.size();
    const auto [ptr, ec] = std::from_chars(first, last, value);
    require(ec == std::errc() && ptr == last, ErrorCode::config,
            "key '" + key + "': cannot parse '" + text + "' as a number");
    return value;
  }

  std::map<std::string, std::string> values_;
  std::set<std::string> used_;
};

}  // namespace lldiff::io
