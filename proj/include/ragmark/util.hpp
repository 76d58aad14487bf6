#pragma once

#include <string>
#include <string_view>

namespace ragmark {

/// Whole file as bytes; throws FileNotFound.
std::string read_file(const std::string& path);

/// Writes to a sibling temp file and renames it into place; throws IoError
/// and leaves nothing behind on failure.
void write_file_atomic(const std::string& path, std::string_view bytes);

std::string sha256_hex(std::string_view bytes);

}  // namespace ragmark
