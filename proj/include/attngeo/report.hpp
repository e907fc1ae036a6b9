#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

namespace attngeo::report {

// Markdown tables (topology, spectral signatures, sink/KL properties, value space, verdict)
// from an analysis summary.
std::string render_markdown(const nlohmann::json& summary);

// Reads `dir`/summary.json and writes report.md plus series_*.tsv into `dir`.
void render_report(const std::filesystem::path& dir);

}  // namespace attngeo::report
