#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mlta::csv {

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

/// Reads an RFC-4180-style CSV (quoted fields, embedded separators and
/// quotes, CRLF tolerated). Every row must match the header width.
Table read_file(const std::string& path);
Table read_stream(std::istream& in, const std::string& origin);

/// Quotes a field only when it needs quoting.
std::string escape(const std::string& field);

void write_row(std::ostream& out, const std::vector<std::string>& fields);

/// Round-trip-exact decimal rendering of a double ("%.17g").
std::string format_double(double v);

double parse_double(const std::string& s, const std::string& context);

}  // namespace mlta::csv
