#pragma once

#include <initializer_list>
#include <string>
#include <string_view>

#include "hpc_sentinel/error.hpp"
#include "json.hpp"

namespace hpcs::jsonu {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

inline json parse(std::string_view text, std::string_view context) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw DecodeError(std::string(context) + ": " + e.what());
  }
}

// Requires `obj` to be an object carrying exactly `fields` (no more, no fewer).
inline void expect_exact_fields(const json& obj, std::initializer_list<std::string_view> fields,
                                std::string_view context) {
  if (!obj.is_object()) throw DecodeError(std::string(context) + ": expected a JSON object");
  for (auto f : fields)
    if (!obj.contains(std::string(f)))
      throw DecodeError(std::string(context) + ": missing field '" + std::string(f) + "'");
  for (const auto& [key, _] : obj.items()) {
    bool known = false;
    for (auto f : fields) known = known || key == f;
    if (!known) throw DecodeError(std::string(context) + ": unknown field '" + key + "'");
  }
}

template <typename T>
T get_as(const json& j, std::string_view key, std::string_view context) {
  try {
    return j.at(std::string(key)).get<T>();
  } catch (const json::exception& e) {
    throw DecodeError(std::string(context) + ": field '" + std::string(key) + "': " + e.what());
  }
}

}  // namespace hpcs::jsonu
