#pragma once

#include <string>

namespace mxfer {

/// Shortest decimal that parses back to exactly `v`.
std::string format_double(double v);

/// Quotes a CSV field when it contains a comma, quote or newline.
std::string csv_field(const std::string& s);

}  // namespace mxfer
