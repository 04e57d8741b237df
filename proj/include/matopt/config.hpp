#pragma once

// Minimal TOML subset for run and sweep files.
//
// Supported: [table] and [a.b] headers, bare or quoted keys (dotted allowed), basic and literal
// strings, integers, floats, booleans, and arrays of those (may span lines). `#` starts a comment.

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "matopt/harness.hpp"

namespace matopt {

struct TomlEntry {
  std::string key;  // full dotted path
  std::vector<ConfigValue> values;
  bool is_array = false;
  std::size_t line = 0;
};

using TomlDocument = std::vector<TomlEntry>;

namespace detail {

class TomlParser {
 public:
  explicit TomlParser(std::string text) : s_(std::move(text)) {}

  TomlDocument parse() {
    TomlDocument doc;
    std::string table;
    while (true) {
      skip_blank_lines();
      if (at_end()) break;
      if (peek() == '[') {
        ++i_;
        skip_ws();
        table = parse_key_path();
        skip_ws();
        expect(']');
        end_of_line();
        continue;
      }
      TomlEntry e;
      e.line = line_;
      const std::string k = parse_key_path();
      e.key = table.empty() ? k : table + "." + k;
      skip_ws();
      expect('=');
      skip_ws();
      if (peek() == '[') {
        e.is_array = true;
        e.values = parse_array();
      } else {
        e.values.push_back(parse_scalar());
      }
      end_of_line();
      for (const auto& other : doc)
        if (other.key == e.key) fail("duplicate key " + e.key);
      doc.push_back(std::move(e));
    }
    return doc;
  }

 private:
  std::string s_;
  std::size_t i_ = 0;
  std::size_t line_ = 1;

  [[noreturn]] void fail(const std::string& msg) const {
    throw Error(ErrorCode::InvalidConfig, "toml line " + std::to_string(line_) + ": " + msg);
  }
  bool at_end() const { return i_ >= s_.size(); }
  char peek() const { return at_end() ? '\0' : s_[i_]; }
  void expect(char c) {
    if (peek() != c) fail(std::string("expected '") + c + "'");
    ++i_;
  }
  void skip_ws() {
    while (!at_end() && (s_[i_] == ' ' || s_[i_] == '\t')) ++i_;
  }
  void skip_comment() {
    if (peek() == '#')
      while (!at_end() && s_[i_] != '\n') ++i_;
  }
  void newline() {
    if (peek() == '\r') ++i_;
    if (peek() == '\n') {
      ++i_;
      ++line_;
    }
  }
  void skip_blank_lines() {
    while (!at_end()) {
      skip_ws();
      skip_comment();
      if (peek() == '\n' || peek() == '\r') newline();
      else break;
    }
  }
  void end_of_line() {
    skip_ws();
    skip_comment();
    if (!at_end() && peek() != '\n' && peek() != '\r') fail("unexpected trailing characters");
    newline();
  }

  std::string parse_key_part() {
    if (peek() == '"' || peek() == '\'') return parse_string();
    std::string out;
    while (!at_end() && (std::isalnum(static_cast<unsigned char>(s_[i_])) || s_[i_] == '_' || s_[i_] == '-'))
      out += s_[i_++];
    if (out.empty()) fail("expected a key");
    return out;
  }
  std::string parse_key_path() {
    std::string out = parse_key_part();
    skip_ws();
    while (peek() == '.') {
      ++i_;
      skip_ws();
      out += "." + parse_key_part();
      skip_ws();
    }
    return out;
  }

  std::string parse_string() {
    const char q = peek();
    ++i_;
    std::string out;
    while (true) {
      if (at_end() || peek() == '\n') fail("unterminated string");
      char c = s_[i_++];
      if (c == q) break;
      if (q == '"' && c == '\\') {
        if (at_end()) fail("bad escape");
        const char e = s_[i_++];
        switch (e) {
          case 'n': out += '\n'; break;
          case 't': out += '\t'; break;
          case '\\': out += '\\'; break;
          case '"': out += '"'; break;
          default: fail(std::string("unsupported escape \\") + e);
        }
        continue;
      }
      out += c;
    }
    return out;
  }

  ConfigValue parse_scalar() {
    const char c = peek();
    if (c == '"' || c == '\'') return ConfigValue(parse_string());
    std::string tok;
    while (!at_end() && (std::isalnum(static_cast<unsigned char>(s_[i_])) || s_[i_] == '.' || s_[i_] == '+' ||
                         s_[i_] == '-' || s_[i_] == '_'))
      tok += s_[i_++];
    if (tok == "true") return ConfigValue(true);
    if (tok == "false") return ConfigValue(false);
    if (tok.empty()) fail("expected a value");
    std::string digits;
    for (char ch : tok)
      if (ch != '_') digits += ch;
    char* end = nullptr;
    const double d = std::strtod(digits.c_str(), &end);
    if (end == digits.c_str() || *end != '\0') fail("bad value '" + tok + "'");
    return ConfigValue(d);
  }

  void skip_array_space() {
    while (!at_end()) {
      skip_ws();
      skip_comment();
      if (peek() == '\n' || peek() == '\r') newline();
      else break;
    }
  }

  std::vector<ConfigValue> parse_array() {
    expect('[');
    std::vector<ConfigValue> out;
    skip_array_space();
    if (peek() == ']') {
      ++i_;
      return out;
    }
    while (true) {
      skip_array_space();
      if (peek() == '[') fail("nested arrays are not supported");
      out.push_back(parse_scalar());
      skip_array_space();
      if (peek() == ',') {
        ++i_;
        skip_array_space();
        if (peek() == ']') {
          ++i_;
          return out;
        }
        continue;
      }
      expect(']');
      return out;
    }
  }
};

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::Io, "cannot read " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

/// Keys outside any table belong to [run].
inline std::string qualified(const std::string& key) {
  const auto dot = key.find('.');
  if (dot == std::string::npos) return "run." + key;
  const std::string head = key.substr(0, dot);
  if (head == "run" || head == "problem" || head == "optimizer") return key;
  if (head == "grid") return qualified(key.substr(dot + 1));
  return key;
}

}  // namespace detail

inline TomlDocument parse_toml(const std::string& text) { return detail::TomlParser(text).parse(); }

inline RunConfig run_config_from_toml(const std::string& text, RunConfig base = {}) {
  for (const auto& e : parse_toml(text)) {
    if (e.is_array) throw Error(ErrorCode::InvalidConfig, "line " + std::to_string(e.line) + ": arrays belong in grid files");
    apply_setting(base, detail::qualified(e.key), e.values.at(0));
  }
  return base;
}

inline SweepGrid grid_from_toml(const std::string& text) {
  SweepGrid grid;
  for (const auto& e : parse_toml(text)) {
    const std::string key = detail::qualified(e.key);
    RunConfig probe;
    for (const auto& v : e.values) apply_setting(probe, key, v);  // validates key and value types
    grid.emplace_back(key, e.values);
  }
  if (grid.empty()) throw Error(ErrorCode::InvalidConfig, "grid file has no entries");
  return grid;
}

inline RunConfig load_run_config(const std::string& path) { return run_config_from_toml(detail::read_file(path)); }
inline SweepGrid load_grid(const std::string& path) { return grid_from_toml(detail::read_file(path)); }

}  // namespace matopt
