#pragma once

#include <optional>
#include <string_view>

namespace reframe {

// Text shipped under data/ and compiled into the library (templates, rubric, PANAS script).
std::optional<std::string_view> embedded_asset(std::string_view name);

}  // namespace reframe
