#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace lgcpcv::text {

std::string trim(std::string_view s);
std::string lower(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);
std::vector<std::string> split_ws(std::string_view s);

/// Strict conversions; return false on trailing garbage or overflow.
bool to_double(std::string_view s, double& out);
bool to_int(std::string_view s, long long& out);

/// Shortest round-trippable decimal form, stable across runs.
std::string format_double(double v);

/// Writes `content` to a sibling temp file and renames it over `path`.
void write_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace lgcpcv::text
