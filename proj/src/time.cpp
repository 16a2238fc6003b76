#include "reframe/time.hpp"

#include <cstdio>
#include <memory>

#include "reframe/error.hpp"

namespace reframe {

using namespace std::chrono;

Timestamp now_utc() { return time_point_cast<milliseconds>(std::chrono::system_clock::now()); }

std::string format_utc(Timestamp t) {
  const auto day = floor<days>(t);
  const year_month_day ymd{day};
  const hh_mm_ss hms{t - day};
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02uT%02d:%02d:%02d.%03dZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(hms.hours().count()), static_cast<int>(hms.minutes().count()),
                static_cast<int>(hms.seconds().count()), static_cast<int>(hms.subseconds().count()));
  return buf;
}

Timestamp parse_utc(std::string_view text) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0, ms = 0;
  const std::string str(text);
  int consumed = 0;
  const int fields =
      std::sscanf(str.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d%n", &y, &mo, &d, &h, &mi, &s, &consumed);
  if (fields < 6) throw Error(ErrorCode::kInvalidRequest, "bad UTC timestamp '" + str + "'");
  std::string_view rest = text.substr(static_cast<size_t>(consumed));
  if (!rest.empty() && rest.front() == '.') {
    int digits = 0;
    size_t i = 1;
    for (; i < rest.size() && rest[i] >= '0' && rest[i] <= '9'; ++i) {
      if (digits < 3) {
        ms = ms * 10 + (rest[i] - '0');
        ++digits;
      }
    }
    while (digits++ < 3) ms *= 10;
    rest = rest.substr(i);
  }
  if (rest != "Z") throw Error(ErrorCode::kInvalidRequest, "timestamp must end in Z: '" + str + "'");
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || s > 60) {
    throw Error(ErrorCode::kInvalidRequest, "bad UTC timestamp '" + str + "'");
  }
  return sys_days{ymd} + hours{h} + minutes{mi} + seconds{s} + milliseconds{ms};
}

Clock system_clock() { return [] { return now_utc(); }; }

Clock logical_clock(Timestamp start, milliseconds step) {
  auto next = std::make_shared<Timestamp>(start);
  return [next, step] {
    const Timestamp t = *next;
    *next += step;
    return t;
  };
}

}  // namespace reframe
