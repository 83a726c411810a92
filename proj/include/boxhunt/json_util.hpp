#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

namespace boxhunt {

/// Integral values serialize as JSON integers, everything else as doubles.
inline nlohmann::json json_number(double v) {
  if (std::isfinite(v) && v == std::trunc(v) && std::fabs(v) < 9.0e15) {
    return static_cast<std::int64_t>(v);
  }
  return v;
}

/// Shortest decimal text that round-trips to `v`.
std::string format_double(double v);

}  // namespace boxhunt
