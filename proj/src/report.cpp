#include "addint/report.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace addint {

using nlohmann::ordered_json;

namespace {

struct RunRow {
  std::string name;
  std::string label;
  uint64_t seed = 0;
  int epochs = 0;
  double final_acc = 0.0;
  bool have_acc = false;
  bool diverged = false;
};

std::string fmt_acc(const RunRow& r) {
  if (r.diverged) return "fail";
  if (!r.have_acc) return "-";
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << r.final_acc;
  return os.str();
}

}  // namespace

std::string format_report(const std::vector<ordered_json>& lines) {
  std::vector<RunRow> rows;
  auto find_row = [&](const std::string& name, const std::string& label,
                      uint64_t seed) -> RunRow& {
    for (RunRow& r : rows)
      if (r.name == name && r.label == label && r.seed == seed) return r;
    rows.push_back(RunRow{name, label, seed, 0, 0.0, false, false});
    return rows.back();
  };

  for (const ordered_json& j : lines) {
    if (!j.is_object() || !j.contains("name") || !j.contains("mode_label") || !j.contains("seed"))
      throw std::runtime_error("invalid metrics record: " + j.dump());
    RunRow& r = find_row(j.at("name"), j.at("mode_label"), j.at("seed"));
    if (j.value("summary", false)) {
      if (j.value("diverged", false)) {
        r.diverged = true;
      } else if (j.contains("final_test_accuracy")) {
        r.final_acc = j.at("final_test_accuracy");
        r.have_acc = true;
      }
    } else if (j.contains("epoch")) {
      r.epochs = std::max(r.epochs, j.at("epoch").get<int>());
      if (j.contains("test_accuracy")) {
        r.final_acc = j.at("test_accuracy");
        r.have_acc = true;
      }
    }
  }

  if (rows.empty()) return "no runs\n";

  auto baseline_for = [&](const RunRow& row) -> const RunRow* {
    for (const RunRow& r : rows)
      if (r.seed == row.seed && r.label.rfind("baseline", 0) == 0 && r.have_acc && !r.diverged)
        return &r;
    return nullptr;
  };

  size_t wname = 4, wlabel = 5;
  for (const RunRow& r : rows) {
    wname = std::max(wname, r.name.size());
    wlabel = std::max(wlabel, r.label.size());
  }

  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(wname + 2)) << "name"
     << std::setw(static_cast<int>(wlabel + 2)) << "label" << std::setw(6) << "seed"
     << std::setw(8) << "epochs" << std::setw(11) << "final_acc" << "delta_vs_baseline\n";
  for (const RunRow& r : rows) {
    os << std::left << std::setw(static_cast<int>(wname + 2)) << r.name
       << std::setw(static_cast<int>(wlabel + 2)) << r.label << std::setw(6) << r.seed
       << std::setw(8) << r.epochs << std::setw(11) << fmt_acc(r);
    const RunRow* base = baseline_for(r);
    if (r.diverged || !r.have_acc || !base) {
      os << "-";
    } else {
      double d = r.final_acc - base->final_acc;
      os << (d < 0 ? "" : "+") << std::fixed << std::setprecision(4) << d;
    }
    os << "\n";
  }
  return os.str();
}

std::string report_from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open metrics file: " + path);
  std::vector<ordered_json> lines;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ordered_json j = ordered_json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": invalid metrics line");
    lines.push_back(std::move(j));
  }
  return format_report(lines);
}

}  // namespace addint
