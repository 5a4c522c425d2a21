#pragma once

// Flat key = value config text with [section] headers. '#' and ';' start
// comments. Every entry remembers its line so semantic errors can point at
// the offending line.

#include <cctype>
#include <charconv>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "graspgen/error.hpp"

namespace graspgen {

class ConfigError : public InvalidInput {
 public:
  ConfigError(std::size_t line, const std::string& what)
      : InvalidInput(line ? "config line " + std::to_string(line) + ": " + what : "config: " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct ConfigEntry {
  std::string section;
  std::string key;
  std::string value;
  std::size_t line = 0;
};

namespace detail {
inline std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}
}  // namespace detail

/// Entries in file order. Duplicate keys within a section are rejected.
inline std::vector<ConfigEntry> parse_config_text(const std::string& text) {
  std::vector<ConfigEntry> out;
  std::map<std::string, std::size_t> seen;
  std::istringstream in(text);
  std::string raw, section;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find_first_of("#;");
    const std::string line = detail::trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(line_no, "unterminated section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ConfigError(line_no, "empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(line_no, "expected key = value");
    ConfigEntry e{section, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)), line_no};
    if (e.key.empty()) throw ConfigError(line_no, "empty key");
    const std::string full = section + "." + e.key;
    if (auto it = seen.find(full); it != seen.end())
      throw ConfigError(line_no, "duplicate key '" + full + "' (first set on line " + std::to_string(it->second) + ")");
    seen[full] = line_no;
    out.push_back(std::move(e));
  }
  return out;
}

// Value parsers; they throw InvalidInput, which callers attach a line to.

inline double parse_real(const std::string& s) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw InvalidInput("'" + s + "' is not a number");
  return v;
}

inline std::uint64_t parse_count(const std::string& s) {
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty())
    throw InvalidInput("'" + s + "' is not a non-negative integer");
  return v;
}

inline bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw InvalidInput("'" + s + "' is not a boolean");
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, ',')) {
    cur = detail::trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

inline std::vector<double> parse_real_list(const std::string& s) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) out.push_back(parse_real(item));
  if (out.empty()) throw InvalidInput("empty list");
  return out;
}

inline std::vector<std::uint64_t> parse_count_list(const std::string& s) {
  std::vector<std::uint64_t> out;
  for (const auto& item : split_list(s)) out.push_back(parse_count(item));
  if (out.empty()) throw InvalidInput("empty list");
  return out;
}

}  // namespace graspgen
