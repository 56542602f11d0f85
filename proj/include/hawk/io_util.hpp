#pragma once

#include <string>

namespace hawk {

// Reads a whole file; throws IoError with the path on failure.
std::string read_file(const std::string& path);

// Writes via a temp file in the same directory followed by a rename, so
// readers never observe a partial file.
void write_file_atomic(const std::string& path, const std::string& content);

// Shortest decimal string that parses back to exactly the same double.
std::string format_double(double v);

}  // namespace hawk
