#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace patchfill::bench {

/// Plain `key = value` text. Blank lines and everything after `#` are
/// ignored; keys are unique. Typed getters throw ConfigError naming the key.
class KeyValueConfig {
public:
    static KeyValueConfig parse(const std::string& text);
    static KeyValueConfig load(const std::filesystem::path& path);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    std::string text(const std::string& key, const std::string& fallback) const;
    std::string text(const std::string& key) const;
    std::size_t count(const std::string& key, std::size_t fallback) const;
    std::uint64_t seed(const std::string& key, std::uint64_t fallback) const;
    double real(const std::string& key, double fallback) const;
    bool flag(const std::string& key, bool fallback) const;
    /// Comma-separated; empty items are dropped.
    std::vector<std::string> list(const std::string& key, const std::vector<std::string>& fallback) const;
    std::vector<double> reals(const std::string& key, const std::vector<double>& fallback) const;

    /// Throws ConfigError naming the first key outside `known`.
    void check_known(const std::set<std::string>& known) const;

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

} // namespace patchfill::bench
