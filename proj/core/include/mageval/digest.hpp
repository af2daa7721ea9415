#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace mageval {

// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);

// SHA-256 of a file's contents; throws ValidationError if unreadable.
std::string sha256_file(const std::filesystem::path& path);

// Reads a whole file into a string; throws ValidationError if unreadable.
std::string read_file(const std::filesystem::path& path);

// Writes bytes to a file, creating parent directories; throws ValidationError on failure.
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace mageval
