#include "slotvae/config.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace slotvae {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("config: cannot open '" + path + "'");
  RunConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      fail("config: " + path + ":" + std::to_string(lineno) +
           ": expected key=value, got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      fail("config: " + path + ":" + std::to_string(lineno) + ": empty key");
    if (cfg.values_.count(key))
      fail("config: " + path + ":" + std::to_string(lineno) + ": duplicate key '" +
           key + "'");
    cfg.values_[key] = value;
  }
  return cfg;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  values_[key] = value;
}

std::string RunConfig::get_string(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) fail("config: missing required key '" + key + "'");
  return it->second;
}

std::string RunConfig::get_string_or(const std::string& key,
                                     const std::string& def) const {
  auto it = values_.find(key);
  return it == values_.end() ? def : it->second;
}

namespace {

std::int64_t parse_int(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  const long long r = std::strtoll(v.c_str(), &end, 10);
  if (errno != 0 || end == v.c_str() || *end != '\0')
    fail("config: key '" + key + "' has non-integer value '" + v + "'");
  return static_cast<std::int64_t>(r);
}

double parse_double(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  const double r = std::strtod(v.c_str(), &end);
  if (errno != 0 || end == v.c_str() || *end != '\0')
    fail("config: key '" + key + "' has non-numeric value '" + v + "'");
  return r;
}

}  // namespace

std::int64_t RunConfig::get_int(const std::string& key) const {
  return parse_int(key, get_string(key));
}

std::int64_t RunConfig::get_int_or(const std::string& key, std::int64_t def) const {
  auto it = values_.find(key);
  return it == values_.end() ? def : parse_int(key, it->second);
}

std::uint64_t RunConfig::get_u64_or(const std::string& key, std::uint64_t def) const {
  auto it = values_.find(key);
  if (it == values_.end()) return def;
  errno = 0;
  char* end = nullptr;
  const unsigned long long r = std::strtoull(it->second.c_str(), &end, 10);
  if (errno != 0 || end == it->second.c_str() || *end != '\0')
    fail("config: key '" + key + "' has non-integer value '" + it->second + "'");
  return static_cast<std::uint64_t>(r);
}

double RunConfig::get_double(const std::string& key) const {
  return parse_double(key, get_string(key));
}

double RunConfig::get_double_or(const std::string& key, double def) const {
  auto it = values_.find(key);
  return it == values_.end() ? def : parse_double(key, it->second);
}

bool RunConfig::get_bool_or(const std::string& key, bool def) const {
  auto it = values_.find(key);
  if (it == values_.end()) return def;
  const std::string& v = it->second;
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  fail("config: key '" + key + "' has non-boolean value '" + v + "'");
  return def;
}

void RunConfig::check_known(const std::vector<std::string>& known) const {
  for (const auto& [key, value] : values_) {
    bool ok = false;
    for (const std::string& k : known) ok = ok || k == key;
    if (!ok) fail("config: unknown key '" + key + "'");
  }
}

std::string RunConfig::to_string() const {
  std::ostringstream out;  // std::map iterates sorted, so snapshots are stable
  for (const auto& [key, value] : values_) out << key << " = " << value << "\n";
  return out.str();
}

void RunConfig::write_snapshot(const std::string& path) const {
  const std::string body = to_string();
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) fail("config: cannot write snapshot '" + path + "'");
  bool ok = std::fwrite(body.data(), 1, body.size(), f) == body.size();
  ok = (std::fclose(f) == 0) && ok;
  if (!ok) fail("config: snapshot write to '" + path + "' failed");
}

}  // namespace slotvae
