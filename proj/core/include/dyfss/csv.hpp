#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "dyfss/types.hpp"

namespace dyfss::csv {

/// Splits one line on commas and trims surrounding whitespace of each field.
std::vector<std::string_view> split(std::string_view line);

bool parse_int(std::string_view field, long& out);
bool parse_double(std::string_view field, double& out);

/// Shortest text that parses back to the identical double.
std::string format_double(double v);

void write_matrix(const std::filesystem::path& path, const Matrix& m,
                  const std::vector<std::string>& header = {});
Matrix read_matrix(const std::filesystem::path& path, bool has_header);

void write_labels(const std::filesystem::path& path, const Labels& labels, std::string_view column);

}  // namespace dyfss::csv
