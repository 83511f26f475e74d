#pragma once

// Flat `key = value` configuration files. Lines starting with '#' are
// comments; keys are dotted; every key must be consumed or the load fails.

#include "emdtrade/common.hpp"
#include "emdtrade/csv.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace emdtrade {

class KeyValueConfig {
public:
    static KeyValueConfig parse(std::istream& in, const std::string& origin) {
        KeyValueConfig cfg;
        cfg.origin_ = origin;
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            const auto text = csv::trim(line);
            if (text.empty()) continue;
            const auto eq = text.find('=');
            if (eq == std::string::npos)
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
            const std::string key(csv::trim(text.substr(0, eq)));
            const std::string value(csv::trim(text.substr(eq + 1)));
            if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
            if (cfg.values_.count(key))
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
            cfg.values_[key] = {value, lineno};
        }
        return cfg;
    }

    static KeyValueConfig load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot read config '" + path + "'");
        auto cfg = parse(in, path);
        cfg.base_dir_ = std::filesystem::path(path).parent_path();
        return cfg;
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::optional<std::string> take_string(const std::string& key) {
        auto it = values_.find(key);
        if (it == values_.end()) return std::nullopt;
        used_.insert(key);
        echo_[key] = it->second.first;
        return it->second.first;
    }

    std::string get_string(const std::string& key, const std::string& fallback) {
        auto v = take_string(key);
        echo_[key] = v ? *v : fallback;
        return v ? *v : fallback;
    }

    std::string require_string(const std::string& key) {
        auto v = take_string(key);
        if (!v || v->empty()) throw ConfigError(origin_ + ": missing required key '" + key + "'");
        return *v;
    }

    double get_double(const std::string& key, double fallback) {
        auto v = take_string(key);
        if (!v) {
            echo_[key] = format_number(fallback, 17);
            return fallback;
        }
        auto d = csv::parse_double(*v);
        if (!d) throw ConfigError(where(key) + "expected a number, got '" + *v + "'");
        return *d;
    }

    long long get_int(const std::string& key, long long fallback) {
        auto v = take_string(key);
        if (!v) {
            echo_[key] = std::to_string(fallback);
            return fallback;
        }
        auto i = csv::parse_int(*v);
        if (!i) throw ConfigError(where(key) + "expected an integer, got '" + *v + "'");
        return *i;
    }

    std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) {
        auto v = take_string(key);
        if (!v) {
            echo_[key] = std::to_string(fallback);
            return fallback;
        }
        std::uint64_t out = 0;
        const auto* end = v->data() + v->size();
        auto [p, ec] = std::from_chars(v->data(), end, out);
        if (ec != std::errc{} || p != end) throw ConfigError(where(key) + "expected a non-negative integer, got '" + *v + "'");
        return out;
    }

    bool get_bool(const std::string& key, bool fallback) {
        auto v = take_string(key);
        if (!v) {
            echo_[key] = fallback ? "true" : "false";
            return fallback;
        }
        if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
        if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
        throw ConfigError(where(key) + "expected true/false, got '" + *v + "'");
    }

    std::vector<std::string> get_list(const std::string& key, const std::vector<std::string>& fallback) {
        auto v = take_string(key);
        if (!v) {
            std::string joined;
            for (const auto& s : fallback) joined += (joined.empty() ? "" : ",") + s;
            echo_[key] = joined;
            return fallback;
        }
        std::vector<std::string> out;
        for (auto& item : csv::split(*v, ',')) {
            std::string t(csv::trim(item));
            if (t.empty()) throw ConfigError(where(key) + "empty list item");
            out.push_back(std::move(t));
        }
        return out;
    }

    std::vector<double> get_double_list(const std::string& key, const std::vector<double>& fallback) {
        std::vector<std::string> fb;
        for (double d : fallback) fb.push_back(format_number(d, 17));
        std::vector<double> out;
        for (const auto& s : get_list(key, fb)) {
            auto d = csv::parse_double(s);
            if (!d) throw ConfigError(where(key) + "expected numbers, got '" + s + "'");
            out.push_back(*d);
        }
        return out;
    }

    /// Throws on the first key that nothing consumed.
    void reject_unknown() const {
        for (const auto& [key, v] : values_)
            if (!used_.count(key))
                throw ConfigError(origin_ + ":" + std::to_string(v.second) + ": unknown key '" + key + "'");
    }

    std::string resolve_path(const std::string& p) const {
        std::filesystem::path fp(p);
        if (fp.is_absolute() || base_dir_.empty()) return fp.string();
        return (base_dir_ / fp).string();
    }

    /// Every key read, with the effective value (defaults included).
    const std::map<std::string, std::string>& echo() const { return echo_; }

private:
    std::string where(const std::string& key) const {
        auto it = values_.find(key);
        return origin_ + ":" + std::to_string(it == values_.end() ? 0 : it->second.second) + ": " + key + ": ";
    }

    std::string origin_;
    std::filesystem::path base_dir_;
    std::map<std::string, std::pair<std::string, int>> values_;
    std::set<std::string> used_;
    std::map<std::string, std::string> echo_;
};

}  // namespace emdtrade
