#include <gtest/gtest.h>

#include <cmath>

#include "utilise/positional_encoding.hpp"

namespace utilise {
namespace {

TEST(PositionalEncoding, ZeroDayPhases) {
  const int days[] = {0};
  const std::vector<double> pe = positional_encoding(days, 8, 1000.0, PositionalEncodingMode::kDayOfYear);
  EXPECT_DOUBLE_EQ(pe[0], 0.0);
  EXPECT_DOUBLE_EQ(pe[1], 1.0);
}

TEST(PositionalEncoding, Day100MatchesScalarEvaluation) {
  const int days[] = {100};
  const std::vector<double> pe = positional_encoding(days, 16, 1000.0, PositionalEncodingMode::kDayOfYear);
  EXPECT_NEAR(pe[0], -0.50636564110975879, 1e-12);
  // k = 3: sin(100 / 1000^(6/16) + pi/2)
  EXPECT_NEAR(pe[3], std::cos(100.0 / std::pow(1000.0, 6.0 / 16.0)), 1e-12);
}

TEST(PositionalEncoding, ModesDeriveFromDays) {
  const int days[] = {40, 55, 93};
  EXPECT_EQ(encoding_positions(days, PositionalEncodingMode::kDayOfYear), (std::vector<double>{40, 55, 93}));
  EXPECT_EQ(encoding_positions(days, PositionalEncodingMode::kDayInSequence), (std::vector<double>{0, 15, 53}));
  EXPECT_EQ(encoding_positions(days, PositionalEncodingMode::kEnumeration), (std::vector<double>{0, 1, 2}));
  const std::vector<double> none = positional_encoding(days, 4, 1000.0, PositionalEncodingMode::kNone);
  for (double v : none) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(none.size(), 12u);
}

TEST(PositionalEncoding, DayInSequenceShiftInvariant) {
  const int a[] = {10, 20, 35};
  const int b[] = {110, 120, 135};
  EXPECT_EQ(positional_encoding(a, 8, 1000.0, PositionalEncodingMode::kDayInSequence),
            positional_encoding(b, 8, 1000.0, PositionalEncodingMode::kDayInSequence));
}

TEST(PositionalEncoding, ModeNamesRoundTrip) {
  for (auto m : {PositionalEncodingMode::kDayOfYear, PositionalEncodingMode::kDayInSequence,
                 PositionalEncodingMode::kEnumeration, PositionalEncodingMode::kNone}) {
    EXPECT_EQ(positional_encoding_mode_from_string(to_string(m)), m);
  }
  EXPECT_THROW(positional_encoding_mode_from_string("weekly"), std::invalid_argument);
}

}  // namespace
}  // namespace utilise
