#pragma once

#include <string>
#include <utility>
#include <vector>

#include "skd/analysis.hpp"

// Post-hoc reporting over completed run directories: a method-by-accuracy
// comparison table with deltas against the matching vanilla run, plus
// variance-per-epoch and time-cost series. Every plot is data-first: the
// series is written as CSV next to the SVG.

namespace skd::report {

struct RunSummary {
  std::string dir;
  bool complete = false;
  std::string note;  // why the run is incomplete, if it is
  std::string method;
  std::string model_name;
  std::string dataset;
  std::uint64_t seed = 0;
  double final_test_top1 = 0.0;
  analysis::MetricsLog log;
};

RunSummary load_run(const std::string& dir);

// Writes report.md, table.csv, variance_series.csv, timecost.csv and SVG
// plots under out_dir. Incomplete runs are listed, never silently dropped.
void write_report(const std::vector<std::string>& run_dirs, const std::string& out_dir);

using Series = std::vector<std::pair<std::string, std::vector<double>>>;
void write_svg_lines(const std::string& path, const Series& series, const std::string& title);

}  // namespace skd::report
