#pragma once

#include <cstdint>
#include <string>

namespace lmpforge {

/// Days since 1970-01-01 for a proleptic Gregorian civil date.
int64_t days_from_civil(int y, int m, int d);
void civil_from_days(int64_t z, int& y, int& m, int& d);

/// Parses "YYYY-MM-DDTHH:MM:SS" (space separator and omitted seconds are
/// accepted) into epoch seconds. Throws IngestError on malformed input.
int64_t parse_timestamp(const std::string& s);

/// Formats epoch seconds as "YYYY-MM-DDTHH:MM:SS".
std::string format_timestamp(int64_t epoch_seconds);

inline constexpr int64_t kSecondsPerHour = 3600;
inline constexpr int64_t kSecondsPerDay = 86400;

}  // namespace lmpforge
