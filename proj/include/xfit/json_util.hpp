#pragma once

#include <json.hpp>

#include <initializer_list>
#include <string>
#include <string_view>

#include "xfit/errors.hpp"

namespace xfit {

using Json = nlohmann::ordered_json;

// Rejects keys outside `allowed`; configs are validated strictly.
inline void check_keys(const Json& j, std::initializer_list<std::string_view> allowed, std::string_view context) {
    if (!j.is_object()) throw UsageError(std::string(context) + ": expected a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (auto a : allowed) ok = ok || it.key() == a;
        if (!ok) throw UsageError(std::string(context) + ": unknown key '" + it.key() + "'");
    }
}

// Reads j[key] into out when present, leaving the default otherwise.
template <typename V>
void read_opt(const Json& j, const char* key, V& out, std::string_view context) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<V>();
    } catch (const nlohmann::json::exception& e) {
        throw UsageError(std::string(context) + "." + key + ": " + e.what());
    }
}

}  // namespace xfit
