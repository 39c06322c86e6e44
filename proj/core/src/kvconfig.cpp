#include "vmseg/kvconfig.hpp"

#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "vmseg/errors.hpp"

namespace vmseg {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

KvMap parse_kv(const std::string& text) {
  KvMap kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + " has no '=': " + t);
    auto key = trim(t.substr(0, eq));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(lineno) + " has an empty key");
    kv[key] = trim(t.substr(eq + 1));
  }
  return kv;
}

std::string serialize_kv(const KvMap& kv) {
  std::string out;
  for (const auto& [k, v] : kv) {
    out += k;
    out += '=';
    out += v;
    out += '\n';
  }
  return out;
}

KvMap read_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_kv(buf.str());
}

void write_kv_file(const std::string& path, const KvMap& kv) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write config file " + path);
  out << serialize_kv(kv);
  if (!out) throw IoError("short write to config file " + path);
}

std::string kv_str(const KvMap& kv, const std::string& key, const std::string& fallback) {
  auto it = kv.find(key);
  return it == kv.end() ? fallback : it->second;
}

int64_t kv_int(const KvMap& kv, const std::string& key, int64_t fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  errno = 0;
  char* end = nullptr;
  long long v = std::strtoll(it->second.c_str(), &end, 10);
  if (errno != 0 || end == it->second.c_str() || *end != '\0')
    throw ConfigError("config key '" + key + "' is not an integer: " + it->second);
  return int64_t(v);
}

double kv_double(const KvMap& kv, const std::string& key, double fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  errno = 0;
  char* end = nullptr;
  double v = std::strtod(it->second.c_str(), &end);
  if (errno != 0 || end == it->second.c_str() || *end != '\0')
    throw ConfigError("config key '" + key + "' is not a number: " + it->second);
  return v;
}

bool kv_bool(const KvMap& kv, const std::string& key, bool fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  const auto& v = it->second;
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "' is not a boolean: " + v);
}

}  // namespace vmseg
