#pragma once

#include <chrono>
#include <functional>
#include <string>
#include <string_view>

namespace reframe {

using Timestamp = std::chrono::sys_time<std::chrono::milliseconds>;
using Clock = std::function<Timestamp()>;

Timestamp now_utc();

// ISO-8601 with millisecond precision and a literal Z, e.g. 2024-01-15T10:00:00.000Z.
std::string format_utc(Timestamp t);
Timestamp parse_utc(std::string_view text);

Clock system_clock();

// Deterministic clock for reproducible runs: returns start, start+step, ...
// Each copy of the returned Clock shares one counter.
Clock logical_clock(Timestamp start, std::chrono::milliseconds step = std::chrono::seconds(1));

}  // namespace reframe
