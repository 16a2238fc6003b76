#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace reframe {

// Both throw IoError naming the path.
std::string read_text_file(const std::filesystem::path& path);
// Writes via a sibling temp file and rename, creating parent directories.
void write_text_file(const std::filesystem::path& path, std::string_view content);

}  // namespace reframe
