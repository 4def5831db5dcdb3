#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace medose {

/// A parsed comma-separated table: one header row and string cells.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::optional<std::size_t> column(const std::string& name) const;
};

/// Reads a comma-separated table with a header row. Double-quoted fields may
/// contain commas and doubled quotes; CRLF line endings and a UTF-8 BOM are accepted.
CsvTable read_csv(std::istream& in);

/// Quotes a field only when it contains a comma, quote or line break.
std::string csv_escape(const std::string& field);

/// Shortest decimal rendering that parses back to the same double (17 significant digits).
std::string format_double(double value);

}  // namespace medose
