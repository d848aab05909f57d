// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <charconv>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "locsense/core.hpp"

namespace locsense {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Flat typed key-value configuration with [section] headers.
///
/// Grammar: '#' starts a comment, sections are '[name]' lines, entries are
/// 'key = value'. Values are doubles, integers, booleans (true/false),
/// strings, or space-separated double lists. Physical quantities carry
/// their unit in the key name (_m, _s, _hz, _mhz, _db, _deg). Parsing is
/// strict: after the consumer has read its keys, finish() rejects any key
/// it never asked for.
class ConfigFile {
public:
    ConfigFile() = default;

    static ConfigFile from_file(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw ConfigError("cannot open config file: " + path);
        std::stringstream ss;
        ss << f.rdbuf();
        return from_string(ss.str(), path);
    }

    static ConfigFile from_string(const std::string& text, std::string origin = "<string>") {
        ConfigFile cfg;
        cfg.origin_ = std::move(origin);
        std::istringstream in(text);
        std::string line, section;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            line = trim(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']')
                    throw ConfigError(cfg.where(line_no) + "malformed section header");
                section = trim(line.substr(1, line.size() - 2));
                if (section.empty())
                    throw ConfigError(cfg.where(line_no) + "empty section name");
                continue;
            }
            auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError(cfg.where(line_no) + "expected 'key = value': " + line);
            std::string key = trim(line.substr(0, eq));
            std::string value = trim(line.substr(eq + 1));
            if (key.empty()) throw ConfigError(cfg.where(line_no) + "empty key");
            std::string full = section.empty() ? key : section + "." + key;
            if (cfg.values_.count(full))
                throw ConfigError(cfg.where(line_no) + "duplicate key: " + full);
            cfg.values_[full] = value;
        }
        return cfg;
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        consumed_.insert(key);
        return it == values_.end() ? fallback : it->second;
    }

    std::string require_string(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("missing required key: " + key);
        consumed_.insert(key);
        return it->second;
    }

    double get_double(const std::string& key, double fallback) const {
        auto it = values_.find(key);
        consumed_.insert(key);
        return it == values_.end() ? fallback : parse_double(it->second, key);
    }

    double require_double(const std::string& key) const {
        return parse_double(require_string(key), key);
    }

    long long get_int(const std::string& key, long long fallback) const {
        auto it = values_.find(key);
        consumed_.insert(key);
        return it == values_.end() ? fallback : parse_int(it->second, key);
    }

    bool get_bool(const std::string& key, bool fallback) const {
        auto it = values_.find(key);
        consumed_.insert(key);
        if (it == values_.end()) return fallback;
        if (it->second == "true") return true;
        if (it->second == "false") return false;
        throw ConfigError("key " + key + ": expected true or false, got '" + it->second + "'");
    }

    std::vector<double> get_doubles(const std::string& key,
                                    std::vector<double> fallback = {}) const {
        auto it = values_.find(key);
        consumed_.insert(key);
        if (it == values_.end()) return fallback;
        std::vector<double> out;
        std::istringstream ss(it->second);
        std::string tok;
        while (ss >> tok) out.push_back(parse_double(tok, key));
        if (out.empty()) throw ConfigError("key " + key + ": empty value list");
        return out;
    }

    /// Keys in a section matching a prefix (sorted); used for indexed
    /// entries like anchor.0.position_m.
    std::vector<std::string> keys_with_prefix(const std::string& prefix) const {
        std::vector<std::string> out;
        for (const auto& [k, v] : values_)
            if (k.rfind(prefix, 0) == 0) out.push_back(k);
        return out;
    }

    /// Strict schema check: every key in the file must have been consumed.
    void finish() const {
        for (const auto& [k, v] : values_)
            if (!consumed_.count(k))
                throw ConfigError("unknown key in " + origin_ + ": " + k);
    }

private:
    static std::string trim(const std::string& s) {
        auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return "";
        auto e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    }

    static double parse_double(const std::string& s, const std::string& key) {
        try {
            std::size_t used = 0;
            double v = std::stod(s, &used);
            if (used != s.size())
                throw ConfigError("key " + key + ": trailing characters in number '" + s + "'");
            return v;
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception&) {
            throw ConfigError("key " + key + ": cannot parse number '" + s + "'");
        }
    }

    static long long parse_int(const std::string& s, const std::string& key) {
        try {
            std::size_t used = 0;
            long long v = std::stoll(s, &used);
            if (used != s.size())
                throw ConfigError("key " + key + ": trailing characters in integer '" + s + "'");
            return v;
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception&) {
            throw ConfigError("key " + key + ": cannot parse integer '" + s + "'");
        }
    }

    std::string where(int line_no) const {
        return origin_ + ":" + std::to_string(line_no) + ": ";
    }

    std::string origin_ = "<none>";
    std::map<std::string, std::string> values_;
    mutable std::set<std::string> consumed_;
};

}  // namespace locsense
