#include "numclip/text_io.hpp"

#include <charconv>
#include <cmath>

#include "numclip/error.hpp"

namespace numclip {

std::string format_double(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view field, std::size_t line_no) {
  double value = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  if (first != last && *first == '+') ++first;
  const auto res = std::from_chars(first, last, value);
  if (field.empty() || res.ec != std::errc{} || res.ptr != last || !std::isfinite(value)) {
    throw Error(Errc::non_numeric_field,
                "line " + std::to_string(line_no) + ": '" + std::string(field) + "' is not a number");
  }
  return value;
}

std::vector<std::string_view> split_fields(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

}  // namespace numclip
