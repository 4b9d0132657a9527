#pragma once

#include <string>
#include <vector>

namespace cohort::csv {

/// Splits one RFC-4180 style line (double-quote escaping, no embedded newlines).
std::vector<std::string> split_line(const std::string& line, std::size_t lineno = 0);
/// Quotes a field only when it contains a comma, quote, or newline.
std::string quote(const std::string& field);

}  // namespace cohort::csv
