#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace addint {

// Renders a metrics JSONL stream as a per-run table: label, seed, epochs,
// final accuracy, and delta against the same-seed baseline run.
std::string format_report(const std::vector<nlohmann::ordered_json>& lines);

std::string report_from_file(const std::string& path);

}  // namespace addint
