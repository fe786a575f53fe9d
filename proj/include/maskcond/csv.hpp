#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace maskcond::csv {

using Row = std::vector<std::string>;

/// Minimal RFC-4180 reader: comma separated, double-quoted fields may contain
/// commas and doubled quotes. Blank lines are skipped.
std::vector<Row> read_file(const std::string& path);
std::vector<Row> parse(std::string_view text);

/// Quotes a field only when it needs quoting.
std::string escape(std::string_view field);
std::string join(const Row& fields);

/// Shortest decimal text that parses back to exactly `value`.
std::string format_double(double value);
/// Strict full-field parse; returns false on any trailing garbage.
bool parse_double(std::string_view text, double& out);

}  // namespace maskcond::csv
