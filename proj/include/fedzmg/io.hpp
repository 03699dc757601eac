#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace fedzmg::io {

// Shortest-roundtrip-safe fixed formatting: 17 significant digits.
std::string format_real(double v);
std::string hex64(std::uint64_t v);

std::vector<std::string> split(std::string_view line, char sep);
std::string trim(std::string_view s);

std::string read_file(const std::filesystem::path& path);
// Writes via a temporary file and rename so readers never see a torn file.
void write_file(const std::filesystem::path& path, std::string_view contents);

double parse_real(const std::string& text, const std::string& what);
std::uint64_t parse_uint(const std::string& text, const std::string& what);

}  // namespace fedzmg::io
