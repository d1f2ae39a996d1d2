#pragma once

// Strict JSON object reading with JSON-pointer diagnostics. Internal header.

#include <cmath>
#include <initializer_list>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ordermerge/errors.hpp"

namespace ordermerge::detail {

using nlohmann::json;

inline std::string child_path(const std::string& path, const std::string& key) {
    return path + "/" + key;
}

inline std::string child_path(const std::string& path, std::size_t index) {
    return path + "/" + std::to_string(index);
}

/// Reads the members of one JSON object, rejecting unknown keys on finish().
class ObjectReader {
public:
    ObjectReader(const json& j, std::string path, std::initializer_list<const char*> allowed)
        : j_(j), path_(std::move(path)), allowed_(allowed.begin(), allowed.end()) {
        if (!j_.is_object()) {
            throw SchemaError(path_.empty() ? "/" : path_, "expected an object");
        }
        for (const auto& [key, _] : j_.items()) {
            bool known = false;
            for (const auto* a : allowed_) {
                if (key == a) {
                    known = true;
                    break;
                }
            }
            if (!known) throw SchemaError(child_path(path_, key), "unknown field");
        }
    }

    const std::string& path() const { return path_; }

    bool has(const char* key) const { return j_.contains(key); }

    const json& at(const char* key) const {
        auto it = j_.find(key);
        if (it == j_.end()) throw SchemaError(child_path(path_, key), "missing field");
        return *it;
    }

    double number(const char* key) const {
        const auto& v = at(key);
        if (!v.is_number()) throw SchemaError(child_path(path_, key), "expected a number");
        auto d = v.get<double>();
        if (!std::isfinite(d)) throw SchemaError(child_path(path_, key), "expected a finite number");
        return d;
    }

    std::optional<double> optional_number(const char* key) const {
        if (!has(key) || j_.at(key).is_null()) return std::nullopt;
        return number(key);
    }

    long long integer(const char* key) const {
        const auto& v = at(key);
        if (!v.is_number_integer()) throw SchemaError(child_path(path_, key), "expected an integer");
        return v.get<long long>();
    }

    std::string string(const char* key) const {
        const auto& v = at(key);
        if (!v.is_string()) throw SchemaError(child_path(path_, key), "expected a string");
        return v.get<std::string>();
    }

    std::optional<std::string> optional_string(const char* key) const {
        if (!has(key) || j_.at(key).is_null()) return std::nullopt;
        return string(key);
    }

    bool boolean(const char* key) const {
        const auto& v = at(key);
        if (!v.is_boolean()) throw SchemaError(child_path(path_, key), "expected a boolean");
        return v.get<bool>();
    }

    const json& array(const char* key) const {
        const auto& v = at(key);
        if (!v.is_array()) throw SchemaError(child_path(path_, key), "expected an array");
        return v;
    }

    const json& object(const char* key) const {
        const auto& v = at(key);
        if (!v.is_object()) throw SchemaError(child_path(path_, key), "expected an object");
        return v;
    }

    std::vector<std::string> string_list(const char* key) const {
        const auto& arr = array(key);
        std::vector<std::string> out;
        out.reserve(arr.size());
        for (std::size_t i = 0; i < arr.size(); ++i) {
            if (!arr[i].is_string()) {
                throw SchemaError(child_path(child_path(path_, key), i), "expected a string");
            }
            out.push_back(arr[i].get<std::string>());
        }
        return out;
    }

private:
    const json& j_;
    std::string path_;
    std::vector<const char*> allowed_;
};

/// Parses text into JSON, mapping syntax errors onto SchemaError at the root.
inline json parse_json(std::string_view text) {
    try {
        return json::parse(text.begin(), text.end());
    } catch (const json::parse_error& e) {
        throw SchemaError("/", std::string("malformed JSON: ") + e.what());
    }
}

} // namespace ordermerge::detail
