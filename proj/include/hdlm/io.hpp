#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace hdlm::io {

// Writes to a sibling temp file, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

// Throws DataError if the file cannot be read.
std::string read_file(const std::filesystem::path& path);

}  // namespace hdlm::io
