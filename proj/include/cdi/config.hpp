#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace cdi {

// Hierarchical key/value config: INI-style sections with '#' comments, keys
// addressed as "section.key". CLI flags merge over file values.
class ConfigMap {
public:
    static ConfigMap parse_string(const std::string& text);
    static ConfigMap parse_file(const std::string& path);

    bool has(const std::string& key) const { return kv_.count(key) > 0; }
    void set(const std::string& key, const std::string& value) { kv_[key] = value; }
    void merge_from(const ConfigMap& overrides);

    std::string get_string(const std::string& key, const std::string& fallback) const;
    int get_int(const std::string& key, int fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    uint64_t get_u64(const std::string& key, uint64_t fallback) const;

    const std::map<std::string, std::string>& entries() const { return kv_; }
    std::string to_string() const;  // canonical serialized form, sorted keys

private:
    std::map<std::string, std::string> kv_;
};

}  // namespace cdi
