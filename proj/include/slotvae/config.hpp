#pragma once

// key=value run configuration: file parsing ('#' comments), flag overrides
// that beat file values, strict unknown-key checking, typed access, and
// resolved-snapshot writing so every run records exactly what it used.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "slotvae/tensor.hpp"  // fail()

namespace slotvae {

class RunConfig {
 public:
  RunConfig() = default;

  // parses key=value lines; '#' starts a comment (whole line or trailing);
  // malformed or duplicate keys fail with the file name and line number
  static RunConfig from_file(const std::string& path);

  // later values win: overrides from command-line flags beat file values
  void set(const std::string& key, const std::string& value);

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  // typed getters; the _or forms return the default when the key is absent.
  // Malformed values fail with the key name.
  std::string get_string(const std::string& key) const;
  std::string get_string_or(const std::string& key, const std::string& def) const;
  std::int64_t get_int(const std::string& key) const;
  std::int64_t get_int_or(const std::string& key, std::int64_t def) const;
  std::uint64_t get_u64_or(const std::string& key, std::uint64_t def) const;
  double get_double(const std::string& key) const;
  double get_double_or(const std::string& key, double def) const;
  bool get_bool_or(const std::string& key, bool def) const;

  // every present key must appear in `known`, otherwise fail naming the key
  void check_known(const std::vector<std::string>& known) const;

  // sorted key=value lines; the resolved snapshot written before work starts
  std::string to_string() const;
  void write_snapshot(const std::string& path) const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace slotvae
