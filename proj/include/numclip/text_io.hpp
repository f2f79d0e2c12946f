#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace numclip {

/// Shortest decimal representation that parses back to the same double.
std::string format_double(double value);

/// Strict decimal parse of the whole field; Error(non_numeric_field) naming
/// `line_no` on failure.
double parse_double(std::string_view field, std::size_t line_no);

std::vector<std::string_view> split_fields(std::string_view line, char sep);

}  // namespace numclip
