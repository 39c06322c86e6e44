#pragma once

#include <map>
#include <string>

namespace vmseg {

// Flat key=value config text: one pair per line, '#' starts a comment line,
// surrounding whitespace is insignificant. std::map keeps serialization
// order-stable so identical configs produce identical bytes.
using KvMap = std::map<std::string, std::string>;

KvMap parse_kv(const std::string& text);
std::string serialize_kv(const KvMap& kv);

KvMap read_kv_file(const std::string& path);
void write_kv_file(const std::string& path, const KvMap& kv);

// Typed lookups. A missing key yields the fallback; a present but unparsable
// value is a configuration error.
std::string kv_str(const KvMap& kv, const std::string& key, const std::string& fallback);
int64_t kv_int(const KvMap& kv, const std::string& key, int64_t fallback);
double kv_double(const KvMap& kv, const std::string& key, double fallback);
bool kv_bool(const KvMap& kv, const std::string& key, bool fallback);

}  // namespace vmseg
