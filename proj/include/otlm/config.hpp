#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace otlm {

// Canonical key=value text: one "key=value" per line, keys sorted, no blank
// values required. Used for config files and the checkpoint-embedded config.
using KvMap = std::map<std::string, std::string>;

KvMap parse_kv_text(const std::string& text);
KvMap read_kv_file(const std::string& path);
std::string serialize_kv(const KvMap& kv);

// Shortest round-trip decimal form (std::to_chars).
std::string format_double(double v);

double kv_double(const KvMap& kv, const std::string& key, double fallback);
std::int64_t kv_int(const KvMap& kv, const std::string& key, std::int64_t fallback);
bool kv_bool(const KvMap& kv, const std::string& key, bool fallback);

// Rejects keys outside `allowed`, naming the first offender.
void reject_unknown_keys(const KvMap& kv, const std::vector<std::string>& allowed);

} // namespace otlm
