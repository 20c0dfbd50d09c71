#pragma once

#include <r4/types.hpp>

#include <iosfwd>
#include <string>
#include <vector>

namespace r4 {

/// Shortest-safe round-trip text for a double ("%.17g"); NaN prints as "nan".
std::string format_double(double v);

/// Splits one CSV line on commas (no quoting; fields here never contain commas).
std::vector<std::string> split_csv_line(const std::string& line);

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name) const;  ///< throws InputError when absent
};

/// Reads a table, skipping `#` comment lines; the first non-comment line is the header.
CsvTable read_csv(std::istream& is);

/// Numeric matrix with a header line; used for datasets written by `r4cli synth`.
void write_matrix_csv(std::ostream& os, const MatrixXd& M, const std::vector<std::string>& names);
MatrixXd read_matrix_csv(std::istream& is, std::vector<std::string>* names = nullptr);

} // namespace r4
