// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace rdpb::csv {

using Row = std::vector<std::string>;

/// RFC 4180: fields containing a comma, quote, CR or LF are quoted, quotes
/// doubled. Lines end in CRLF.
std::string format_row(const Row& row);

/// Parses RFC 4180 text. Accepts LF or CRLF line endings.
std::vector<Row> parse(const std::string& text);

std::vector<Row> read_file(const std::filesystem::path& path);

/// Shortest decimal that round-trips; "inf"/"-inf"/"nan" for non-finite.
std::string format_number(double v);
double parse_number(const std::string& s);

}  // namespace rdpb::csv
