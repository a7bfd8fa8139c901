#pragma once

#include <algorithm>
#include <initializer_list>
#include <nlohmann/json.hpp>
#include <string>

#include "cftwin/error.hpp"

namespace cftwin::detail {

inline void require_known_keys(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& where) {
    if (!j.is_object()) throw DomainError(where + ": expected an object");
    for (const auto& [key, _] : j.items())
        if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; }))
            throw DomainError(where + ": unknown key '" + key + "'");
}

}  // namespace cftwin::detail
