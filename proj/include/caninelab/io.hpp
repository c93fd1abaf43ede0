// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace caninelab::io {

/// Whole-file read; throws Error{IoError} when the file cannot be opened.
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, std::string_view content);

/// Splits on '\n', dropping a trailing '\r' and blank lines are kept as empty
/// strings so callers can report 1-based line numbers.
std::vector<std::string> split_lines(std::string_view text);

/// Shortest text that round-trips a double ("%.17g" trimmed).
std::string format_double(double v);

/// Current UTC time as ISO-8601 with millisecond precision.
std::string utc_timestamp();

}  // namespace caninelab::io
