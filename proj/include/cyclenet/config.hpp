#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cyclenet/network.hpp"

namespace cyclenet {

// I/O failures carry exit-code-2 semantics at the CLI; validation failures
// (std::invalid_argument and friends) carry exit code 1.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// UTF-8 text, one `key = value` per line, `#` starts a comment. Later
// assignments to a key replace earlier ones; insertion order is preserved
// for serialization.
class KeyValueConfig {
 public:
  static KeyValueConfig from_text(const std::string& text);
  static KeyValueConfig from_file(const std::string& path);

  bool has(const std::string& key) const;
  void set(const std::string& key, std::string value);

  std::string get_string(const std::string& key) const;
  std::string get_string_or(const std::string& key, const std::string& fallback) const;
  long long get_int(const std::string& key) const;
  long long get_int_or(const std::string& key, long long fallback) const;
  double get_double(const std::string& key) const;
  double get_double_or(const std::string& key, double fallback) const;
  bool get_bool_or(const std::string& key, bool fallback) const;
  // comma-separated; empty value or "none" yields an empty list
  std::vector<std::string> get_list(const std::string& key) const;
  std::vector<long long> get_int_list(const std::string& key) const;

  std::string to_text() const;
  const std::vector<std::pair<std::string, std::string>>& items() const { return items_; }

 private:
  const std::string* find(const std::string& key) const;
  std::vector<std::pair<std::string, std::string>> items_;
};

// Network spec <-> config keys. Cycles serialize as one comma-separated list:
// a cubic cycle is its width ("32"), a non-cubic cycle is the three fully
// connected output extents joined by colons ("100:45:45"). cycle_kinds,
// kernel_size and dropout_rate accept a single value broadcast to all cycles
// or a comma-separated list aligned with `cycles`.
NetworkSpec network_spec_from_config(const KeyValueConfig& cfg);
void network_spec_to_config(const NetworkSpec& spec, KeyValueConfig& cfg);

// Canonical one-key-per-line form stored in checkpoints; equal specs produce
// byte-equal text.
std::string network_spec_text(const NetworkSpec& spec);

std::string format_double(double v);

}  // namespace cyclenet
