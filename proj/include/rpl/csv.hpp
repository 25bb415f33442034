#pragma once

#include <cstddef>
#include <istream>
#include <string>
#include <string_view>
#include <vector>

namespace rpl::csv {

std::vector<std::string> split(std::string_view line, char sep = ',');
std::string_view trim(std::string_view s);

// Reads lines, skipping blanks and `#` comments; tracks 1-based line numbers.
class LineReader {
 public:
  explicit LineReader(std::istream& in) : in_(in) {}
  bool next(std::vector<std::string>& fields);
  std::size_t line_number() const noexcept { return line_; }

 private:
  std::istream& in_;
  std::size_t line_ = 0;
};

}  // namespace rpl::csv
