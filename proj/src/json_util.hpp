#pragma once

// Field accessors for the line-delimited JSON formats. Every failure names the
// offending field so loaders can report it with a line number.

#include <cmath>
#include <string>
#include <string_view>

#include "vgkit/core.hpp"
#include "vgkit/errors.hpp"

namespace vgkit::detail {

inline const Json& require_field(const Json& j, std::string_view key) {
  if (!j.is_object()) throw ValidationError("expected a JSON object");
  auto it = j.find(std::string(key));
  if (it == j.end()) throw ValidationError("missing field '" + std::string(key) + "'");
  return *it;
}

inline std::string get_string(const Json& j, std::string_view key) {
  const Json& v = require_field(j, key);
  if (!v.is_string()) throw ValidationError("field '" + std::string(key) + "' must be a string");
  return v.get<std::string>();
}

inline long long get_int(const Json& j, std::string_view key) {
  const Json& v = require_field(j, key);
  if (!v.is_number_integer()) {
    throw ValidationError("field '" + std::string(key) + "' must be an integer");
  }
  return v.get<long long>();
}

inline double as_finite_number(const Json& v, std::string_view what) {
  if (!v.is_number()) throw ValidationError(std::string(what) + " must be a number");
  double d = v.get<double>();
  if (!std::isfinite(d)) throw ValidationError(std::string(what) + " must be finite");
  return d;
}

inline double get_double(const Json& j, std::string_view key) {
  return as_finite_number(require_field(j, key), "field '" + std::string(key) + "'");
}

// Compact dump that replaces invalid UTF-8 instead of throwing; model output
// is not guaranteed to be valid text.
inline std::string dump_json(const Json& j) { return j.dump(-1, ' ', false, Json::error_handler_t::replace); }

// Formats a double with 17 significant digits; strtod reads it back bit-identically.
std::string format_double17(double v);

}  // namespace vgkit::detail
