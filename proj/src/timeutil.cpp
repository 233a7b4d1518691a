#include "lmpforge/timeutil.hpp"

#include <cstdio>

#include "lmpforge/errors.hpp"

namespace lmpforge {

int64_t days_from_civil(int y, int m, int d) {
    y -= m <= 2;
    const int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = unsigned(y - era * 400);
    const unsigned doy = (153u * unsigned(m + (m > 2 ? -3 : 9)) + 2u) / 5u + unsigned(d) - 1u;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + int64_t(doe) - 719468;
}

void civil_from_days(int64_t z, int& y, int& m, int& d) {
    z += 719468;
    const int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = unsigned(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const int64_t yy = int64_t(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    d = int(doy - (153 * mp + 2) / 5 + 1);
    m = int(mp + (mp < 10 ? 3 : -9));
    y = int(yy + (m <= 2));
}

namespace {

int parse_int(const std::string& s, size_t pos, size_t len, const char* what) {
    if (pos + len > s.size()) throw IngestError(std::string("timestamp too short for ") + what +
                                                ": '" + s + "'");
    int v = 0;
    for (size_t i = pos; i < pos + len; ++i) {
        if (s[i] < '0' || s[i] > '9')
            throw IngestError(std::string("bad digit in timestamp ") + what + ": '" + s + "'");
        v = v * 10 + (s[i] - '0');
    }
    return v;
}

}  // namespace

int64_t parse_timestamp(const std::string& s) {
    // YYYY-MM-DD[T ]HH:MM[:SS]
    if (s.size() < 16) throw IngestError("timestamp too short: '" + s + "'");
    const int y = parse_int(s, 0, 4, "year");
    if (s[4] != '-') throw IngestError("expected '-' after year in '" + s + "'");
    const int mo = parse_int(s, 5, 2, "month");
    if (s[7] != '-') throw IngestError("expected '-' after month in '" + s + "'");
    const int d = parse_int(s, 8, 2, "day");
    if (s[10] != 'T' && s[10] != ' ')
        throw IngestError("expected 'T' or space date separator in '" + s + "'");
    const int h = parse_int(s, 11, 2, "hour");
    if (s[13] != ':') throw IngestError("expected ':' after hour in '" + s + "'");
    const int mi = parse_int(s, 14, 2, "minute");
    int sec = 0;
    if (s.size() > 16) {
        if (s[16] != ':' || s.size() < 19)
            throw IngestError("expected ':SS' after minutes in '" + s + "'");
        sec = parse_int(s, 17, 2, "second");
    }
    if (mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 || sec > 60)
        throw IngestError("timestamp field out of range: '" + s + "'");
    return days_from_civil(y, mo, d) * kSecondsPerDay + h * kSecondsPerHour + mi * 60 + sec;
}

std::string format_timestamp(int64_t epoch_seconds) {
    int64_t days = epoch_seconds / kSecondsPerDay;
    int64_t rem = epoch_seconds % kSecondsPerDay;
    if (rem < 0) {
        rem += kSecondsPerDay;
        --days;
    }
    int y, m, d;
    civil_from_days(days, y, m, d);
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02d", y, m, d, int(rem / 3600),
                  int((rem % 3600) / 60), int(rem % 60));
    return std::string(buf);
}

}  // namespace lmpforge
