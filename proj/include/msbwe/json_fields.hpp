#pragma once

#include <set>
#include <string>

#include "json.hpp"
#include "msbwe/error.hpp"

namespace msbwe {

// Reads optional fields from a JSON object and rejects keys nobody asked for.
class FieldReader {
public:
    FieldReader(const nlohmann::json& obj, std::string section) : obj_(obj), section_(std::move(section)) {
        if (!obj_.is_object()) throw InvalidArgument("config section '" + section_ + "' must be an object");
    }

    template <typename V>
    void get(const std::string& key, V& out) {
        seen_.insert(key);
        if (!obj_.contains(key)) return;
        try {
            out = obj_.at(key).get<V>();
        } catch (const nlohmann::json::exception& e) {
            throw InvalidArgument("config key '" + qualified(key) + "' has the wrong type: " + e.what());
        }
    }

    const nlohmann::json* child(const std::string& key) {
        seen_.insert(key);
        return obj_.contains(key) ? &obj_.at(key) : nullptr;
    }

    std::string qualified(const std::string& key) const { return section_.empty() ? key : section_ + "." + key; }

    void finish() const {
        for (const auto& [key, value] : obj_.items())
            if (!seen_.count(key)) throw InvalidArgument("unknown config key '" + qualified(key) + "'");
    }

private:
    const nlohmann::json& obj_;
    std::string section_;
    std::set<std::string> seen_;
};

}  // namespace msbwe
