#pragma once

#include <string>
#include <string_view>

namespace weaver {

// Writes `content` to "<path>.tmp" and renames it over `path`; parent
// directories are created as needed.
void write_file_atomic(const std::string& path, std::string_view content);

std::string read_file(const std::string& path);

}  // namespace weaver
