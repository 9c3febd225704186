#include "skd/report.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

namespace skd::report {

namespace fs = std::filesystem;
using json = nlohmann::json;

RunSummary load_run(const std::string& dir) {
  RunSummary s;
  s.dir = dir;
  const fs::path manifest = fs::path(dir) / "manifest.json";
  const fs::path metrics = fs::path(dir) / "metrics.csv";
  if (!fs::exists(manifest)) {
    s.note = "missing manifest.json";
    return s;
  }
  std::ifstream in(manifest);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) {
    s.note = "unparseable manifest.json";
    return s;
  }
  s.method = j.value("method", "?");
  s.model_name = j.value("model", "?");
  s.dataset = j.value("dataset", "?");
  s.seed = j.value("seed", std::uint64_t{0});
  if (j.value("status", "") != "completed") {
    s.note = "status=" + j.value("status", "absent");
    return s;
  }
  if (!fs::exists(metrics)) {
    s.note = "missing metrics.csv";
    return s;
  }
  s.log = analysis::MetricsLog::from_csv(metrics.string());
  const auto accs = s.log.series("test", &analysis::MetricsRow::top1_accuracy);
  if (accs.empty()) {
    s.note = "no test rows in metrics.csv";
    return s;
  }
  s.final_test_top1 = accs.back();
  s.complete = true;
  return s;
}

namespace {

std::string pct(double frac) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * frac);
  return buf;
}

std::string delta_pct(double frac) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "(%+.2f%%)", 100.0 * frac);
  return buf;
}

}  // namespace

void write_svg_lines(const std::string& path, const Series& series, const std::string& title) {
  const int width = 640, height = 400, margin = 50;
  double lo = 1e300, hi = -1e300;
  size_t n = 0;
  for (const auto& [name, ys] : series) {
    n = std::max(n, ys.size());
    for (double y : ys) {
      lo = std::min(lo, y);
      hi = std::max(hi, y);
    }
  }
  if (n < 2 || !(hi > lo)) {
    hi = lo + 1.0;
  }
  const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='" << height
      << "'>\n<rect width='100%' height='100%' fill='white'/>\n"
      << "<text x='" << width / 2 << "' y='20' text-anchor='middle' font-size='14'>" << title
      << "</text>\n";
  size_t ci = 0;
  for (const auto& [name, ys] : series) {
    const std::string color = palette[ci % 6];
    out << "<polyline fill='none' stroke='" << color << "' stroke-width='1.5' points='";
    for (size_t i = 0; i < ys.size(); ++i) {
      const double x = margin + (width - 2.0 * margin) * (n > 1 ? double(i) / double(n - 1) : 0.0);
      const double y = height - margin - (height - 2.0 * margin) * (ys[i] - lo) / (hi - lo);
      out << x << ',' << y << ' ';
    }
    out << "'/>\n<text x='" << width - margin + 4 << "' y='" << 40 + 16 * ci
        << "' font-size='11' fill='" << color << "' text-anchor='end'>" << name << "</text>\n";
    ++ci;
  }
  out << "<text x='" << margin << "' y='" << height - margin + 16 << "' font-size='10'>min "
      << lo << "</text>\n<text x='" << margin << "' y='" << margin - 6 << "' font-size='10'>max "
      << hi << "</text>\n</svg>\n";
}

void write_report(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
  if (run_dirs.empty()) throw InvalidInput("report needs at least one run directory");
  fs::create_directories(out_dir);

  std::vector<RunSummary> runs;
  for (const auto& d : run_dirs) runs.push_back(load_run(d));

  // Mean accuracy per method over completed runs; deltas against the
  // vanilla mean with matching (model, dataset).
  struct Agg {
    double sum = 0;
    int n = 0;
  };
  std::map<std::string, Agg> by_method;
  std::map<std::string, Agg> vanilla_by_key;
  for (const auto& r : runs) {
    if (!r.complete) continue;
    auto& a = by_method[r.method];
    a.sum += r.final_test_top1;
    a.n += 1;
    if (r.method == "vanilla") {
      auto& v = vanilla_by_key[r.model_name + "|" + r.dataset];
      v.sum += r.final_test_top1;
      v.n += 1;
    }
  }

  std::ofstream md(fs::path(out_dir) / "report.md");
  std::ofstream csv(fs::path(out_dir) / "table.csv");
  md << "# Run comparison\n\n| method | runs | mean test top-1 | vs vanilla |\n"
     << "|---|---|---|---|\n";
  csv << "method,runs,mean_test_top1,delta_vs_vanilla\n";
  double vanilla_mean = std::nan("");
  if (!vanilla_by_key.empty()) {
    // Deltas only make sense against a single (model, dataset) group.
    const auto& v = vanilla_by_key.begin()->second;
    vanilla_mean = v.sum / v.n;
  }
  for (const auto& [method, agg] : by_method) {
    const double mean = agg.sum / agg.n;
    std::string delta = "-";
    if (method != "vanilla" && std::isfinite(vanilla_mean)) delta = delta_pct(mean - vanilla_mean);
    md << "| " << method << " | " << agg.n << " | " << pct(mean) << " | " << delta << " |\n";
    csv << method << ',' << agg.n << ',' << mean << ','
        << (method != "vanilla" && std::isfinite(vanilla_mean)
                ? std::to_string(mean - vanilla_mean)
                : "")
        << '\n';
  }
  md << "\n";
  bool any_incomplete = false;
  for (const auto& r : runs) {
    if (!r.complete) {
      if (!any_incomplete) md << "## Incomplete runs\n\n";
      any_incomplete = true;
      md << "- `" << r.dir << "`: " << r.note << "\n";
    }
  }

  // Variance-vs-epoch and time-cost series.
  std::ofstream vs(fs::path(out_dir) / "variance_series.csv");
  vs << "run,method,epoch,test_ranked_output_variance\n";
  Series var_series;
  std::ofstream tc(fs::path(out_dir) / "timecost.csv");
  tc << "run,method,mean_seconds_per_iteration\n";
  Series time_series;
  for (const auto& r : runs) {
    if (!r.complete) continue;
    const auto vars = r.log.series("test", &analysis::MetricsRow::ranked_output_variance);
    const std::string label = r.method + "/" + std::to_string(r.seed);
    for (size_t e = 0; e < vars.size(); ++e)
      vs << fs::path(r.dir).filename().string() << ',' << r.method << ',' << e << ',' << vars[e]
         << '\n';
    var_series.emplace_back(label, vars);
    const auto secs = r.log.series("train", &analysis::MetricsRow::seconds_per_iteration);
    double mean_sec = 0;
    for (double s : secs) mean_sec += s;
    if (!secs.empty()) mean_sec /= static_cast<double>(secs.size());
    tc << fs::path(r.dir).filename().string() << ',' << r.method << ',' << mean_sec << '\n';
    time_series.emplace_back(label, std::vector<double>{mean_sec, mean_sec});
  }
  write_svg_lines((fs::path(out_dir) / "variance_vs_epoch.svg").string(), var_series,
                  "ranked-output variance (test) per epoch");
  write_svg_lines((fs::path(out_dir) / "timecost.svg").string(), time_series,
                  "mean seconds per iteration");
}

}  // namespace skd::report
