#pragma once

#include <memory>
#include <string>
#include <vector>

#include "skd/analysis.hpp"
#include "skd/common.hpp"
#include "skd/data.hpp"
#include "skd/model.hpp"

// Training loops: vanilla cross-entropy, DRG (reverse guidance from a
// shallow-tap auxiliary classifier), DSR (shape-wise regularization against
// the ranked logits of the previous iteration), and their combination.
// One SGD step per mini-batch; batch losses are arithmetic means over the
// batch. A (config.seed, epoch) pair fully determines shuffling and
// augmentation, so checkpoint/resume reproduces an uninterrupted run.

namespace skd::train {

enum class Method { kVanilla, kDrg, kDsr, kCombined };
enum class SrFirstStep { kSkip, kUniform };

Method method_from_string(const std::string& s);
std::string to_string(Method m);

struct LrSchedule {
  double base = 0.1;
  std::vector<int> milestones;  // strictly increasing epochs
  double factor = 0.2;
};

// Piecewise-constant: base * factor^(milestones passed).
double lr_at(int epoch, const LrSchedule& schedule);

struct TrainingConfig {
  Method method = Method::kVanilla;
  int epochs = 30;
  int batch_size = 128;
  bool drop_last = false;
  LrSchedule lr;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double tau_drg = 1.0;
  double tau_dsr = 4.0;
  double alpha = 0.2;
  double beta = 1.0;
  int tap = 2;           // 1-based block index the AC reads from
  int aux_hidden = 16;
  std::uint64_t seed = 1;
  bool teacher_detach = false;
  // Write 0 for seconds_per_iteration in the metrics log so that runs with
  // identical seeds produce byte-identical log files.
  bool deterministic_timing = false;
  SrFirstStep sr_first_step = SrFirstStep::kSkip;
  data::AugmentationPolicy aug{0, 0, 0.0};  // defaults to no augmentation

  void validate() const;
};

// Ranked logits stored at iteration t-1, the DSR target for iteration t.
struct RankedLogitsCache {
  Mat ranked;  // k x cached_batch, rows of each column non-decreasing
  long produced_at_iteration = -1;
  bool present() const { return ranked.size() > 0; }
};

struct EvalResult {
  double top1 = 0.0;
  double mean_loss = 0.0;
  double ranked_variance = 0.0;
  Mat logits;
};

struct TrainResult {
  analysis::MetricsLog log;
  std::vector<double> iteration_losses;  // batch-mean loss per SGD step
};

class SGD {
 public:
  SGD(std::vector<model::ParamRef> params, double momentum, double weight_decay);
  void step(double lr);
  std::vector<Mat>& velocities() { return velocity_; }
  const std::vector<model::ParamRef>& params() const { return params_; }

 private:
  std::vector<model::ParamRef> params_;
  std::vector<Mat> velocity_;
  double momentum_, weight_decay_;
};

class Trainer {
 public:
  Trainer(std::shared_ptr<model::BlockSequentialModel> m, const data::Dataset& dataset,
          TrainingConfig cfg);

  // Trains cfg.epochs - current_epoch epochs, appending per-epoch metrics.
  TrainResult& run();
  void train_epoch();

  EvalResult evaluate_split(const Mat& images, const std::vector<int>& labels);
  EvalResult evaluate_test() { return evaluate_split(dataset_->test_images, dataset_->test_labels); }
  Mat eval_logits(const Mat& images);

  void save_checkpoint(const std::string& path_prefix) const;  // prefix.bin + prefix.json
  void load_checkpoint(const std::string& path_prefix);

  int epoch() const { return epoch_; }
  long iteration() const { return iteration_; }
  const TrainingConfig& config() const { return cfg_; }
  model::BlockSequentialModel& model() { return *model_; }
  model::Scaffold* scaffold() { return scaffold_.get(); }
  RankedLogitsCache& cache() { return cache_; }
  TrainResult& result() { return result_; }
  long model_parameter_count();
  long aux_parameter_count();

  // Timed real training steps cycling over epoch-0 batches; mutates the model.
  double time_iterations(int warmup, int measured);

 private:
  struct StepOut {
    double loss;
    Mat logits;
  };
  StepOut step_batch(const std::vector<int>& batch, std::mt19937_64& aug_rng, double lr);
  model::Tensor assemble_batch(const std::vector<int>& batch, std::mt19937_64& aug_rng) const;
  model::Tensor wrap_test_batch(const Mat& images, Eigen::Index start, Eigen::Index count) const;

  std::shared_ptr<model::BlockSequentialModel> model_;
  std::unique_ptr<model::Scaffold> scaffold_;
  const data::Dataset* dataset_;
  TrainingConfig cfg_;
  std::unique_ptr<SGD> opt_;
  RankedLogitsCache cache_;
  int epoch_ = 0;
  long iteration_ = 0;
  TrainResult result_;
};

// Checkpoint identity needed to rebuild a trainer for evaluation.
struct CheckpointInfo {
  std::string model_name;
  int k = 0;
  int in_channels = 3;
  std::string method;
  int tap = 0;
  int aux_hidden = 0;
  int epoch = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string aux_spec;
};
CheckpointInfo read_checkpoint_info(const std::string& path_prefix);

// Wall-clock mean over `measured` iterations after `warmup` iterations.
analysis::ProfileReport profile_run(Trainer& trainer, const std::string& tmp_checkpoint_prefix,
                                    int warmup = 10, int measured = 50);

}  // namespace skd::train
