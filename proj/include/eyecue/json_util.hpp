#pragma once

#include <initializer_list>
#include <string>
#include <type_traits>

#include <json.hpp>

#include "eyecue/errors.hpp"

namespace eyecue::json_util {

/// Rejects keys outside `allowed`.
inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                       const std::string& context) {
  if (!j.is_object()) throw ValidationError(context + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* a : allowed) known = known || it.key() == a;
    if (!known) {
      std::string list;
      for (const char* a : allowed) list += (list.empty() ? "" : ", ") + std::string(a);
      throw ValidationError(context + ": unknown key '" + it.key() + "' (allowed: " + list + ")");
    }
  }
}

/// Reads an optional field into `out`, checking its JSON type.
template <typename T>
void read(const nlohmann::json& j, const char* key, T& out, const std::string& context) {
  auto it = j.find(key);
  if (it == j.end()) return;
  const nlohmann::json& v = *it;
  bool ok = false;
  if constexpr (std::is_same_v<T, bool>) {
    ok = v.is_boolean();
  } else if constexpr (std::is_integral_v<T>) {
    ok = v.is_number_integer();
  } else if constexpr (std::is_floating_point_v<T>) {
    ok = v.is_number();
  } else if constexpr (std::is_same_v<T, std::string>) {
    ok = v.is_string();
  }
  if (!ok) throw ValidationError(context + ": field '" + key + "' has the wrong type");
  out = v.get<T>();
}

}  // namespace eyecue::json_util
