#pragma once

#include <algorithm>
#include <initializer_list>
#include <string>

#include <nlohmann/json.hpp>

#include "slicemap/error.hpp"

namespace slicemap::detail {

inline void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> known,
                                const std::string& context) {
  if (!j.is_object()) throw ConfigError(context + ": expected a JSON object");
  for (const auto& item : j.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return item.key() == k; })) {
      throw ConfigError(context + ": unknown key '" + item.key() + "'");
    }
  }
}

// Leaves `out` untouched when the key is absent.
template <typename V>
void read_optional(const nlohmann::json& j, const char* key, V& out, const std::string& context) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(context + "." + key + ": " + e.what());
  }
}

}  // namespace slicemap::detail
