#pragma once

#include <span>
#include <string>
#include <vector>

namespace utilise {

enum class PositionalEncodingMode { kDayOfYear, kDayInSequence, kEnumeration, kNone };

const char* to_string(PositionalEncodingMode mode);
PositionalEncodingMode positional_encoding_mode_from_string(const std::string& name);

// Temporal coordinate fed to the encoding for each frame:
// day-of-year as stored, offset from the first frame, ordinal index, or 0.
std::vector<double> encoding_positions(std::span<const int> days, PositionalEncodingMode mode);

// Sinusoidal encoding PE(t, k) = sin(pos(t) / tau^(2k/depth) + (pi/2) * (k mod 2)),
// row-major frames x depth. Mode kNone yields zeros.
std::vector<double> positional_encoding(std::span<const int> days, int depth, double tau,
                                        PositionalEncodingMode mode);

}  // namespace utilise
