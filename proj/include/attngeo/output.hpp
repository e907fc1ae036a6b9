#pragma once

// Machine-output formatting: 9 significant digits, fixed ordering, RFC 4180 CSV.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

namespace attngeo::output {

// "%.9g"; non-finite values become "nan", "inf" or "-inf".
std::string fmt(double v);
// v rounded to 9 significant digits; NaN and infinities become null.
nlohmann::json num(double v);
// Applies num() to every floating-point value in the tree.
void normalize_floats(nlohmann::json& j);

std::string csv_escape(const std::string& field);
std::string join_indices(const std::vector<std::size_t>& idx, char sep = ';');

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header);
  void row(const std::vector<std::string>& fields);

 private:
  std::ofstream out_;
  std::size_t width_;
};

// Normalizes floats, writes with 2-space indentation and a trailing newline.
void write_json(const std::filesystem::path& path, nlohmann::json j);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace attngeo::output
