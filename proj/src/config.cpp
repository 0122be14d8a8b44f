#include "otlm/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "otlm/error.hpp"

namespace otlm {

KvMap parse_kv_text(const std::string& text) {
    KvMap kv;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            fail("config line " + std::to_string(lineno) + " is not key=value: \"" + line + "\"");
        std::string key = line.substr(0, eq);
        std::string value = line.substr(eq + 1);
        if (key.empty()) fail("config line " + std::to_string(lineno) + " has an empty key");
        if (kv.count(key)) fail("config key \"" + key + "\" appears twice");
        kv[key] = value;
    }
    return kv;
}

KvMap read_kv_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("cannot read config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_kv_text(buf.str());
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

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

double kv_double(const KvMap& kv, const std::string& key, double fallback) {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    const std::string& s = it->second;
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        fail("config key \"" + key + "\": \"" + s + "\" is not a number");
    return v;
}

std::int64_t kv_int(const KvMap& kv, const std::string& key, std::int64_t fallback) {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    const std::string& s = it->second;
    std::int64_t v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        fail("config key \"" + key + "\": \"" + s + "\" is not an integer");
    return v;
}

bool kv_bool(const KvMap& kv, const std::string& key, bool fallback) {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    fail("config key \"" + key + "\": \"" + it->second + "\" is not a boolean");
}

void reject_unknown_keys(const KvMap& kv, const std::vector<std::string>& allowed) {
    for (const auto& [k, _] : kv) {
        if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
            fail("unknown config key: \"" + k + "\"");
    }
}

} // namespace otlm
