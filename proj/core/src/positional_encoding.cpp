#include "utilise/positional_encoding.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace utilise {

const char* to_string(PositionalEncodingMode mode) {
  switch (mode) {
    case PositionalEncodingMode::kDayOfYear: return "day_of_year";
    case PositionalEncodingMode::kDayInSequence: return "day_in_sequence";
    case PositionalEncodingMode::kEnumeration: return "enumeration";
    case PositionalEncodingMode::kNone: return "none";
  }
  return "none";
}

PositionalEncodingMode positional_encoding_mode_from_string(const std::string& name) {
  if (name == "day_of_year") return PositionalEncodingMode::kDayOfYear;
  if (name == "day_in_sequence") return PositionalEncodingMode::kDayInSequence;
  if (name == "enumeration") return PositionalEncodingMode::kEnumeration;
  if (name == "none") return PositionalEncodingMode::kNone;
  throw std::invalid_argument("unknown positional encoding mode '" + name + "'");
}

std::vector<double> encoding_positions(std::span<const int> days, PositionalEncodingMode mode) {
  std::vector<double> pos(days.size(), 0.0);
  for (std::size_t t = 0; t < days.size(); ++t) {
    switch (mode) {
      case PositionalEncodingMode::kDayOfYear: pos[t] = days[t]; break;
      case PositionalEncodingMode::kDayInSequence: pos[t] = days[t] - days[0]; break;
      case PositionalEncodingMode::kEnumeration: pos[t] = static_cast<double>(t); break;
      case PositionalEncodingMode::kNone: break;
    }
  }
  return pos;
}

std::vector<double> positional_encoding(std::span<const int> days, int depth, double tau,
                                        PositionalEncodingMode mode) {
  std::vector<double> pe(days.size() * static_cast<std::size_t>(depth), 0.0);
  if (mode == PositionalEncodingMode::kNone) return pe;
  const std::vector<double> pos = encoding_positions(days, mode);
  for (std::size_t t = 0; t < days.size(); ++t) {
    for (int k = 0; k < depth; ++k) {
      const double wavelength = std::pow(tau, 2.0 * k / depth);
      const double phase = (std::numbers::pi / 2.0) * (k % 2);
      pe[t * static_cast<std::size_t>(depth) + static_cast<std::size_t>(k)] =
          std::sin(pos[t] / wavelength + phase);
    }
  }
  return pe;
}

}  // namespace utilise
