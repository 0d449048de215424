#pragma once

#include <algorithm>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <string_view>

#include "flnas/errors.hpp"
#include "json.hpp"

namespace flnas {

using Json = nlohmann::json;
using OrderedJson = nlohmann::ordered_json;

namespace detail {

// 1-based line of a byte offset reported by the JSON parser.
inline std::size_t line_of_offset(std::string_view text, std::size_t byte) {
  const std::size_t end = std::min(byte == 0 ? 0 : byte - 1, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(end), '\n'));
}

inline Json parse_json_text(std::string_view text) {
  try {
    return Json::parse(text.begin(), text.end());
  } catch (const Json::parse_error& e) {
    throw ParseError(line_of_offset(text, e.byte), e.what());
  }
}

inline std::string where(std::string_view ctx, std::string_view key) {
  std::string s(ctx);
  if (!s.empty()) s += '.';
  s += key;
  return s;
}

inline const Json& require(const Json& obj, std::string_view key, std::string_view ctx) {
  auto it = obj.find(std::string(key));
  if (it == obj.end()) throw SchemaError("missing field '" + where(ctx, key) + "'");
  return *it;
}

inline void reject_unknown_keys(const Json& obj, std::initializer_list<std::string_view> allowed,
                                std::string_view ctx) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
      throw SchemaError("unknown field '" + where(ctx, it.key()) + "'");
  }
}

inline std::int64_t as_int(const Json& v, std::string_view name) {
  if (!v.is_number_integer()) throw SchemaError("field '" + std::string(name) + "' must be an integer");
  return v.get<std::int64_t>();
}

inline std::int64_t get_int(const Json& obj, std::string_view key, std::string_view ctx) {
  return as_int(require(obj, key, ctx), where(ctx, key));
}

inline std::int64_t get_int_min(const Json& obj, std::string_view key, std::string_view ctx,
                                std::int64_t min) {
  const auto v = get_int(obj, key, ctx);
  if (v < min)
    throw SchemaError("field '" + where(ctx, key) + "' must be >= " + std::to_string(min) +
                      ", got " + std::to_string(v));
  return v;
}

inline double get_number(const Json& obj, std::string_view key, std::string_view ctx) {
  const Json& v = require(obj, key, ctx);
  if (!v.is_number()) throw SchemaError("field '" + where(ctx, key) + "' must be a number");
  return v.get<double>();
}

inline bool get_bool(const Json& obj, std::string_view key, std::string_view ctx) {
  const Json& v = require(obj, key, ctx);
  if (!v.is_boolean()) throw SchemaError("field '" + where(ctx, key) + "' must be a boolean");
  return v.get<bool>();
}

inline std::string get_string(const Json& obj, std::string_view key, std::string_view ctx) {
  const Json& v = require(obj, key, ctx);
  if (!v.is_string()) throw SchemaError("field '" + where(ctx, key) + "' must be a string");
  return v.get<std::string>();
}

inline const Json& require_object(const Json& v, std::string_view ctx) {
  if (!v.is_object()) throw SchemaError("'" + std::string(ctx) + "' must be an object");
  return v;
}

}  // namespace detail
}  // namespace flnas
