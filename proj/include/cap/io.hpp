#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace cap {

// Shortest representation that round-trips; "nan", "inf", "-inf" otherwise.
std::string format_double(double value);

// Throws ParseError (with the given line) unless the whole field is a number.
double parse_double(std::string_view field, std::size_t line);

std::string read_text_file(const std::filesystem::path& path);
// Creates parent directories; throws Error if the file cannot be written.
void write_text_file(const std::filesystem::path& path, std::string_view contents);

// Hex SHA-256 of the bytes.
std::string content_hash(std::string_view bytes);

}  // namespace cap
