#include "patchfill/bench/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "patchfill/error.hpp"

namespace patchfill::bench {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <typename N>
N parse_number(const std::string& key, const std::string& text) {
    N v{};
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end) throw ConfigError("config key '" + key + "': cannot parse '" + text + "'");
    return v;
}

} // namespace

KeyValueConfig KeyValueConfig::parse(const std::string& text) {
    KeyValueConfig c;
    std::istringstream in(text);
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(number) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError("config line " + std::to_string(number) + ": empty key");
        if (c.has(key)) throw ConfigError("config line " + std::to_string(number) + ": duplicate key '" + key + "'");
        c.values_[key] = trim(line.substr(eq + 1));
    }
    return c;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

std::string KeyValueConfig::text(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

std::string KeyValueConfig::text(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end() || it->second.empty()) throw ConfigError("config key '" + key + "' is required");
    return it->second;
}

std::size_t KeyValueConfig::count(const std::string& key, std::size_t fallback) const {
    return has(key) ? parse_number<std::size_t>(key, text(key)) : fallback;
}

std::uint64_t KeyValueConfig::seed(const std::string& key, std::uint64_t fallback) const {
    return has(key) ? parse_number<std::uint64_t>(key, text(key)) : fallback;
}

double KeyValueConfig::real(const std::string& key, double fallback) const {
    return has(key) ? parse_number<double>(key, text(key)) : fallback;
}

bool KeyValueConfig::flag(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const std::string v = text(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
}

std::vector<std::string> KeyValueConfig::list(const std::string& key, const std::vector<std::string>& fallback) const {
    if (!has(key)) return fallback;
    std::vector<std::string> out;
    std::istringstream in(text(key));
    std::string item;
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::vector<double> KeyValueConfig::reals(const std::string& key, const std::vector<double>& fallback) const {
    if (!has(key)) return fallback;
    std::vector<double> out;
    for (const auto& s : list(key, {})) out.push_back(parse_number<double>(key, s));
    return out;
}

void KeyValueConfig::check_known(const std::set<std::string>& known) const {
    for (const auto& [k, v] : values_) {
        if (!known.count(k)) throw ConfigError("unknown config key '" + k + "'");
    }
}

} // namespace patchfill::bench
