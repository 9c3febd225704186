#pragma once

#include <string>
#include <vector>

#include "skd/common.hpp"

// Measurement side of the toolkit: accuracy, ranked-output variance, the
// accuracy/variance Pearson correlation, per-run metrics logging, and
// profiling of training overhead.

namespace skd::analysis {

// Fraction of columns whose argmax equals the label; ties break to the
// lowest class index.
double top1_accuracy(const Mat& logits, const std::vector<int>& labels);

struct VarianceReport {
  Vec per_position;  // population variance per rank position, length K
  double mean = 0.0;
};

// Rank every column ascending, then the population variance of each rank
// position across samples; `mean` averages over the K positions.
VarianceReport ranked_output_variance(const Mat& logits);

// Same report computed on tau=1 softmax probabilities instead of raw logits.
VarianceReport ranked_output_variance_probs(const Mat& logits);

// Pearson product-moment coefficient; throws on constant input.
double pearson(const std::vector<double>& xs, const std::vector<double>& ys);

struct MetricsRow {
  int epoch = 0;
  std::string split;  // "train" or "test"
  double top1_accuracy = 0.0;
  double mean_loss = 0.0;
  double ranked_output_variance = 0.0;
  double seconds_per_iteration = 0.0;
  double learning_rate = 0.0;
};

struct MetricsLog {
  std::vector<MetricsRow> rows;
  void append(const MetricsRow& r) { rows.push_back(r); }
  void to_csv(const std::string& path) const;
  static MetricsLog from_csv(const std::string& path);
  std::vector<double> series(const std::string& split,
                             double MetricsRow::* field) const;
};

struct ProfileReport {
  double seconds_per_iteration = 0.0;
  int measured_iterations = 0;
  long model_parameter_count = 0;  // |theta|
  long aux_parameter_count = 0;    // |w|, 0 without a scaffold
  std::uint64_t checkpoint_bytes = 0;
};

// One row per sample: label then K logits, 17 significant digits.
void export_logits(const Mat& logits, const std::vector<int>& labels, const std::string& path);
Mat import_logits(const std::string& path, std::vector<int>* labels);

}  // namespace skd::analysis
