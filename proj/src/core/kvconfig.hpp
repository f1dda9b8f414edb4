#pragma once

#include <map>
#include <string>

#include "common.hpp"

namespace plab {

// Run configuration as a flat key=value file. Lines are `key = value`,
// `#` starts a comment, blank lines are ignored. Duplicate keys are an
// error so a config cannot silently override itself.
struct KvConfig {
    std::map<std::string, std::string> values;

    static KvConfig parse_string(const std::string& text);
    static KvConfig parse_file(const std::string& path);

    bool has(const std::string& key) const { return values.count(key) != 0; }
    void set(const std::string& key, const std::string& value) { values[key] = value; }

    const std::string& get_str(const std::string& key) const;
    std::string get_str(const std::string& key, const std::string& fallback) const;
    int64_t get_int(const std::string& key) const;
    int64_t get_int(const std::string& key, int64_t fallback) const;
    double get_double(const std::string& key) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    // serialized form, keys sorted
    std::string to_string() const;
};

}  // namespace plab
