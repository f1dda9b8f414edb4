#include "kvconfig.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace plab {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace

KvConfig KvConfig::parse_string(const std::string& text) {
    KvConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        size_t eq = line.find('=');
        check(eq != std::string::npos, errc::format,
              "config line " + std::to_string(lineno) + " has no '='");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        check(!key.empty(), errc::format, "config line " + std::to_string(lineno) + " has empty key");
        check(cfg.values.emplace(key, value).second, errc::format, "duplicate config key: " + key);
    }
    return cfg;
}

KvConfig KvConfig::parse_file(const std::string& path) {
    std::ifstream in(path);
    check(in.good(), errc::io, "cannot open config: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_string(ss.str());
}

const std::string& KvConfig::get_str(const std::string& key) const {
    auto it = values.find(key);
    check(it != values.end(), errc::invalid_argument, "missing config key: " + key);
    return it->second;
}

std::string KvConfig::get_str(const std::string& key, const std::string& fallback) const {
    auto it = values.find(key);
    return it == values.end() ? fallback : it->second;
}

int64_t KvConfig::get_int(const std::string& key) const {
    const std::string& s = get_str(key);
    char* end = nullptr;
    long long v = std::strtoll(s.c_str(), &end, 10);
    check(end != s.c_str() && *end == '\0', errc::format, "config key " + key + " is not an integer");
    return v;
}

int64_t KvConfig::get_int(const std::string& key, int64_t fallback) const {
    return has(key) ? get_int(key) : fallback;
}

double KvConfig::get_double(const std::string& key) const {
    const std::string& s = get_str(key);
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    check(end != s.c_str() && *end == '\0', errc::format, "config key " + key + " is not a number");
    return v;
}

double KvConfig::get_double(const std::string& key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
}

bool KvConfig::get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const std::string& s = get_str(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    fail(errc::format, "config key " + key + " is not a boolean");
}

std::string KvConfig::to_string() const {
    std::string out;
    for (const auto& [k, v] : values) {
        out += k;
        out += " = ";
        out += v;
        out += "\n";
    }
    return out;
}

}  // namespace plab
