#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace coevo {

/// Writes to a sibling temp file, then renames over `path`.
void write_file_atomic(const std::string& path, std::string_view content);
/// Throws ParseError when the file cannot be read.
std::string read_file(const std::string& path);

/// Shortest text that parses back to the same double.
std::string format_double(double v);

/// Splits one CSV line on commas; fields never contain quotes or commas here.
std::vector<std::string> split_csv_line(std::string_view line);
/// Strict full-string parses; throw ParseError naming `what`.
double parse_double(std::string_view text, std::string_view what);
long long parse_int(std::string_view text, std::string_view what);

}  // namespace coevo
