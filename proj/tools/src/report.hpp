#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "tss/eval.hpp"

namespace tss::cli {

struct ReportColumn {
  std::string dataset;
  EvalHead head = EvalHead::mlp;
  TaskKind task = TaskKind::tr;

  auto operator<=>(const ReportColumn&) const = default;
};

// Accuracy table with one row per pathway and one column per
// (dataset, head, task), averaged over seeds.
struct ReportTable {
  std::vector<std::string> rows;
  std::vector<ReportColumn> columns;
  std::map<std::pair<std::string, ReportColumn>, double> cells;  // mean accuracy
  std::map<std::pair<std::string, ReportColumn>, std::size_t> runs;

  std::optional<double> cell(const std::string& row, const ReportColumn& col) const;
  std::size_t filled() const noexcept { return cells.size(); }
};

ReportTable build_report(std::span<const ResultRow> results);
// Markdown; accuracies in percent with two decimals.
std::string render_markdown(const ReportTable& table);

}  // namespace tss::cli
