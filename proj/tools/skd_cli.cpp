// Experiment CLI: train / eval / sweep / report.
// Exit codes: 0 success, 2 config error, 3 training divergence, 4 I/O error.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "skd/config.hpp"
#include "skd/report.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kVersion = "lightskd 0.1.0";

std::string timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

void write_manifest(const fs::path& dir, const skd::config::RunConfig& cfg,
                    const skd::data::Dataset& ds, const std::string& status,
                    const std::string& started, double final_test_top1 = -1.0) {
  json m;
  m["config_hash"] = cfg.run_id();
  m["code_version"] = kVersion;
  m["method"] = skd::train::to_string(cfg.training.method);
  m["model"] = cfg.model;
  m["dataset"] = cfg.dataset;
  m["dataset_stats"] = {{"k", ds.k},
                        {"n_train", ds.n_train()},
                        {"n_test", ds.n_test()},
                        {"image", std::to_string(ds.c) + "x" + std::to_string(ds.h) + "x" +
                                      std::to_string(ds.w)},
                        {"channel_mean", std::vector<double>(ds.channel_mean.data(),
                                                             ds.channel_mean.data() + ds.channel_mean.size())},
                        {"channel_std", std::vector<double>(ds.channel_std.data(),
                                                            ds.channel_std.data() + ds.channel_std.size())}};
  m["seed"] = cfg.training.seed;
  m["started"] = started;
  m["finished"] = status == "running" ? "" : timestamp();
  m["status"] = status;
  if (final_test_top1 >= 0.0) m["final_test_top1"] = final_test_top1;
  m["artifacts"] = {"config.resolved", "metrics.csv", "checkpoint.bin", "checkpoint.json"};
  // Atomic-enough: write then rename.
  const fs::path tmp = dir / "manifest.json.tmp";
  std::ofstream out(tmp);
  out << m.dump(2) << "\n";
  out.close();
  fs::rename(tmp, dir / "manifest.json");
}

// Runs one configured training; returns the run directory.
fs::path execute_run(const skd::config::RunConfig& cfg) {
  const fs::path run_dir = fs::path(cfg.output_dir) / ("run-" + cfg.run_id());
  fs::create_directories(run_dir);
  skd::config::write_resolved(cfg, (run_dir / "config.resolved").string());

  const auto ds =
      skd::data::load_dataset(cfg.dataset, cfg.resolve_dataset_root(), cfg.training.seed);
  const std::string started = timestamp();
  write_manifest(run_dir, cfg, ds, "running", started);

  auto model = skd::model::model_registry(cfg.model, ds.k, ds.c, cfg.training.seed);
  skd::train::Trainer trainer(model, ds, cfg.training);
  try {
    auto& result = trainer.run();
    result.log.to_csv((run_dir / "metrics.csv").string());
    trainer.save_checkpoint((run_dir / "checkpoint").string());
    const auto accs = result.log.series("test", &skd::analysis::MetricsRow::top1_accuracy);
    write_manifest(run_dir, cfg, ds, "completed", started, accs.empty() ? 0.0 : accs.back());
    std::cout << "run " << run_dir.string() << " completed; final test top-1 = "
              << (accs.empty() ? 0.0 : accs.back()) << "\n";
  } catch (const skd::Divergence&) {
    trainer.result().log.to_csv((run_dir / "metrics.csv").string());
    write_manifest(run_dir, cfg, ds, "diverged", started);
    throw;
  }
  return run_dir;
}

int cmd_eval(const std::string& checkpoint, const std::string& dataset_name,
             const std::string& root, const std::string& split, const std::string& metrics_csv) {
  const auto info = skd::train::read_checkpoint_info(checkpoint);
  const auto ds = skd::data::load_dataset(dataset_name, root);
  if (ds.k != info.k)
    throw skd::InvalidInput("checkpoint K=" + std::to_string(info.k) +
                            " does not match dataset K=" + std::to_string(ds.k));
  auto model = skd::model::model_registry(info.model_name, info.k, info.in_channels, info.seed);
  skd::train::TrainingConfig tc;
  tc.method = skd::train::method_from_string(info.method);
  tc.tap = info.tap > 0 ? info.tap : tc.tap;
  tc.aux_hidden = info.aux_hidden > 0 ? info.aux_hidden : tc.aux_hidden;
  tc.seed = info.seed;
  skd::train::Trainer trainer(model, ds, tc);
  trainer.load_checkpoint(checkpoint);
  const bool test = split == "test";
  auto ev = test ? trainer.evaluate_test()
                 : trainer.evaluate_split(ds.train_images, ds.train_labels);
  std::cout << "top1_accuracy " << ev.top1 << "\n";
  if (!metrics_csv.empty()) {
    skd::analysis::MetricsLog log;
    if (fs::exists(metrics_csv)) log = skd::analysis::MetricsLog::from_csv(metrics_csv);
    skd::analysis::MetricsRow row;
    row.epoch = info.epoch;
    row.split = split;
    row.top1_accuracy = ev.top1;
    row.mean_loss = ev.mean_loss;
    row.ranked_output_variance = ev.ranked_variance;
    log.append(row);
    log.to_csv(metrics_csv);
  }
  return 0;
}

struct Axis {
  std::string key;
  std::vector<std::string> values;
};

Axis parse_axis(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos)
    throw skd::InvalidInput("axis spec must be key=v1,v2,... got '" + spec + "'");
  Axis axis;
  axis.key = spec.substr(0, eq);
  std::istringstream ss(spec.substr(eq + 1));
  std::string item;
  while (std::getline(ss, item, ',')) axis.values.push_back(item);
  if (axis.values.empty()) throw skd::InvalidInput("axis '" + axis.key + "' has no values");
  return axis;
}

int cmd_sweep(const skd::config::RunConfig& base, const std::vector<std::string>& axis_specs,
              const std::string& out_dir) {
  std::vector<Axis> axes;
  for (const auto& s : axis_specs) axes.push_back(parse_axis(s));
  if (axes.empty()) throw skd::InvalidInput("sweep needs at least one --axis");

  // Cartesian grid over all axes.
  std::vector<std::vector<std::string>> grid{{}};
  for (const auto& axis : axes) {
    std::vector<std::vector<std::string>> next;
    for (const auto& g : grid)
      for (const auto& v : axis.values) {
        auto g2 = g;
        g2.push_back(v);
        next.push_back(g2);
      }
    grid = next;
  }

  fs::create_directories(out_dir);
  std::ofstream summary(fs::path(out_dir) / "sweep_summary.csv");
  for (const auto& axis : axes) summary << axis.key << ',';
  summary << "run_dir,status,final_test_top1\n";

  double best_acc = -1.0;
  std::string best_cell;
  for (const auto& cell : grid) {
    skd::config::RunConfig cfg = base;
    cfg.output_dir = out_dir;
    std::string cell_desc;
    for (size_t i = 0; i < axes.size(); ++i) {
      skd::config::apply_override(cfg, axes[i].key, cell[i]);
      cell_desc += (i ? " " : "") + axes[i].key + "=" + cell[i];
    }
    std::string status = "completed", run_dir;
    double acc = 0.0;
    try {
      run_dir = execute_run(cfg).string();
      const auto summary_run = skd::report::load_run(run_dir);
      acc = summary_run.final_test_top1;
    } catch (const std::exception& e) {
      status = "failed";
      std::cerr << "sweep cell [" << cell_desc << "] failed: " << e.what() << "\n";
    }
    for (const auto& v : cell) summary << v << ',';
    summary << run_dir << ',' << status << ',' << acc << '\n';
    summary.flush();
    if (status == "completed" && acc > best_acc) {
      best_acc = acc;
      best_cell = cell_desc;
    }
  }
  std::ofstream best(fs::path(out_dir) / "best.txt");
  best << best_cell << " -> " << best_acc << "\n";
  std::cout << "best cell: " << best_cell << " (" << best_acc << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{std::string(kVersion) + " - self-knowledge distillation experiments"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint, dataset, root, split = "test", metrics_csv;
  std::vector<std::string> overrides, axis_specs, run_dirs;
  long seed = -1;

  auto* train = app.add_subcommand("train", "train a model from a run config");
  train->add_option("--config", config_path, "run config file")->required();
  train->add_option("--out", out_dir, "output directory (overrides config)");
  train->add_option("--seed", seed, "seed (overrides config)");
  train->add_option("--set", overrides, "extra key=value overrides")->take_all();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", checkpoint, "checkpoint path prefix")->required();
  eval->add_option("--dataset", dataset, "dataset name")->required();
  eval->add_option("--root", root, "dataset root (default $SKD_DATA_ROOT or ./data)");
  eval->add_option("--split", split, "train or test");
  eval->add_option("--metrics-csv", metrics_csv, "append the result to this MetricsLog CSV");

  auto* sweep = app.add_subcommand("sweep", "grid of runs over one or more axes");
  sweep->add_option("--config", config_path, "base run config")->required();
  sweep->add_option("--axis", axis_specs, "axis spec key=v1,v2,...")->required()->take_all();
  sweep->add_option("--out", out_dir, "sweep output directory");

  auto* report = app.add_subcommand("report", "comparison table and plots from run dirs");
  report->add_option("--out", out_dir, "report output directory")->required();
  report->add_option("runs", run_dirs, "run directories")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train || *sweep) {
      auto cfg = skd::config::parse_file(config_path);
      if (!out_dir.empty()) cfg.output_dir = out_dir;
      if (seed >= 0) skd::config::apply_override(cfg, "seed", std::to_string(seed));
      for (const auto& ov : overrides) {
        const auto eq = ov.find('=');
        if (eq == std::string::npos)
          throw skd::InvalidInput("--set expects key=value, got '" + ov + "'");
        skd::config::apply_override(cfg, ov.substr(0, eq), ov.substr(eq + 1));
      }
      if (*train) {
        execute_run(cfg);
        return 0;
      }
      return cmd_sweep(cfg, axis_specs, out_dir.empty() ? "sweep" : out_dir);
    }
    if (*eval) {
      if (root.empty()) {
        const char* env = std::getenv("SKD_DATA_ROOT");
        root = env ? env : "./data";
      }
      return cmd_eval(checkpoint, dataset, root, split, metrics_csv);
    }
    if (*report) {
      skd::report::write_report(run_dirs, out_dir);
      return 0;
    }
  } catch (const skd::Divergence& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return 3;
  } catch (const skd::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 4;
  } catch (const skd::InvalidInput& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
