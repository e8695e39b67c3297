#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace scob {

// Writes `content` to a temporary sibling, flushes it and renames it over
// `path`, creating parent directories. Throws IoError naming the path.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

// Whole file as bytes. Throws IoError naming the path.
std::string read_file(const std::filesystem::path& path);

}  // namespace scob
