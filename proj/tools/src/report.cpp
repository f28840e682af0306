#include "report.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

namespace tss::cli {

std::optional<double> ReportTable::cell(const std::string& row, const ReportColumn& col) const {
  auto it = cells.find({row, col});
  if (it == cells.end()) return std::nullopt;
  return it->second;
}

ReportTable build_report(std::span<const ResultRow> results) {
  ReportTable t;
  std::set<std::string> rows;
  std::set<ReportColumn> cols;
  std::map<std::pair<std::string, ReportColumn>, double> sums;
  for (const ResultRow& r : results) {
    const ReportColumn c{r.dataset, r.head, r.task};
    rows.insert(r.pathway);
    cols.insert(c);
    sums[{r.pathway, c}] += r.result.accuracy;
    ++t.runs[{r.pathway, c}];
  }
  t.rows.assign(rows.begin(), rows.end());
  t.columns.assign(cols.begin(), cols.end());
  for (const auto& [key, sum] : sums) t.cells[key] = sum / static_cast<double>(t.runs.at(key));
  return t;
}

std::string render_markdown(const ReportTable& table) {
  std::string out = "| pathway |";
  std::string rule = "|---|";
  for (const ReportColumn& c : table.columns) {
    out += " " + c.dataset + " " + std::string(to_string(c.head)) + " " +
           std::string(to_string(c.task)) + " |";
    rule += "---:|";
  }
  out += "\n" + rule + "\n";
  for (const std::string& r : table.rows) {
    out += "| " + r + " |";
    for (const ReportColumn& c : table.columns) {
      if (auto v = table.cell(r, c)) {
        char buf[32];
        std::snprintf(buf, sizeof buf, " %.2f |", 100.0 * *v);
        out += buf;
      } else {
        out += " - |";
      }
    }
    out += "\n";
  }
  return out;
}

}  // namespace tss::cli
