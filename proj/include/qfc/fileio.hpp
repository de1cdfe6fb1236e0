// fileio.hpp: atomic file output and small text helpers.

#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace qfc {

// Writes to a temporary sibling and renames it over `path`.
void atomic_write(const std::filesystem::path& path, std::string_view content);

std::string read_text(const std::filesystem::path& path);

// Shortest decimal form that reads back as the same double.
std::string format_double(double x);

}  // namespace qfc
