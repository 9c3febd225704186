#pragma once

#include <string>

#include "skd/trainer.hpp"

// Plain-text run configuration: `key = value` lines, '#' comments. Unknown
// keys are rejected with file:line positions. A resolved copy (defaults
// expanded, keys sorted) is written next to every run's outputs; the run id
// is a content hash of that resolved text.

namespace skd::config {

struct RunConfig {
  std::string dataset = "synthetic-gaussian-10";
  std::string dataset_root;  // empty -> $SKD_DATA_ROOT, then "./data"
  std::string model = "tiny-resnet-3block";
  std::string output_dir = "runs";
  train::TrainingConfig training;

  std::string resolved_text() const;
  std::string run_id() const;  // 16 hex digits
  std::string resolve_dataset_root() const;
};

RunConfig parse_file(const std::string& path);
RunConfig parse_text(const std::string& text, const std::string& origin);

// Single key override ("tap" -> "3"); same validation as the file parser.
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);

void write_resolved(const RunConfig& cfg, const std::string& path);

}  // namespace skd::config
