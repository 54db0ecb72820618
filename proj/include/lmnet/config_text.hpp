#pragma once

// Flat `key=value` text shared by checkpoints, CLI config files, and reports.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace lmnet {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Ordered lexicographically by key, which is the canonical rendering order.
using KeyValues = std::map<std::string, std::string>;

/// One `key=value` per line, LF-terminated, keys sorted.
std::string render_key_values(const KeyValues& kv);

/// Accepts blank lines and `#` comments; rejects lines without `=` and
/// repeated keys.
KeyValues parse_key_values(std::string_view text);

/// Nine significant digits, shortest `%g` form.
std::string format_float(double v);

double parse_double(std::string_view key, std::string_view text);
std::uint64_t parse_uint(std::string_view key, std::string_view text);
std::vector<std::uint64_t> parse_uint_list(std::string_view key, std::string_view text);

template <typename Int>
std::string join_list(const std::vector<Int>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(values[i]);
  }
  return out;
}

}  // namespace lmnet
