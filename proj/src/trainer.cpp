#include "skd/trainer.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "skd/losses.hpp"

namespace skd::train {

using json = nlohmann::json;

Method method_from_string(const std::string& s) {
  if (s == "vanilla") return Method::kVanilla;
  if (s == "drg") return Method::kDrg;
  if (s == "dsr") return Method::kDsr;
  if (s == "combined") return Method::kCombined;
  throw InvalidInput("unknown method '" + s + "' (vanilla, drg, dsr, combined)");
}

std::string to_string(Method m) {
  switch (m) {
    case Method::kVanilla: return "vanilla";
    case Method::kDrg: return "drg";
    case Method::kDsr: return "dsr";
    case Method::kCombined: return "combined";
  }
  return "?";
}

double lr_at(int epoch, const LrSchedule& schedule) {
  double lr = schedule.base;
  for (int m : schedule.milestones)
    if (epoch >= m) lr *= schedule.factor;
  return lr;
}

void TrainingConfig::validate() const {
  if (epochs <= 0) throw InvalidInput("epochs must be positive");
  if (batch_size <= 0) throw InvalidInput("batch_size must be positive");
  if (!(alpha >= 0.0)) throw InvalidInput("alpha must be >= 0");
  if (!(beta >= 0.0)) throw InvalidInput("beta must be >= 0");
  if (!(tau_drg > 0.0) || !(tau_dsr > 0.0)) throw InvalidInput("temperatures must be > 0");
  if (!(momentum >= 0.0) || !(weight_decay >= 0.0))
    throw InvalidInput("momentum and weight_decay must be >= 0");
  if (!(lr.base >= 0.0) || !(lr.factor > 0.0)) throw InvalidInput("invalid lr schedule");
  for (size_t i = 0; i < lr.milestones.size(); ++i) {
    if (lr.milestones[i] >= epochs)
      throw InvalidInput("lr milestone " + std::to_string(lr.milestones[i]) + " >= epochs");
    if (i > 0 && lr.milestones[i] <= lr.milestones[i - 1])
      throw InvalidInput("lr milestones must be strictly increasing");
  }
}

SGD::SGD(std::vector<model::ParamRef> params, double momentum, double weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
  velocity_.reserve(params_.size());
  for (const auto& p : params_) velocity_.push_back(Mat::Zero(p.value->rows(), p.value->cols()));
}

void SGD::step(double lr) {
  for (size_t i = 0; i < params_.size(); ++i) {
    Mat& v = velocity_[i];
    v = momentum_ * v + *params_[i].grad + weight_decay_ * (*params_[i].value);
    *params_[i].value -= lr * v;
  }
}

Trainer::Trainer(std::shared_ptr<model::BlockSequentialModel> m, const data::Dataset& dataset,
                 TrainingConfig cfg)
    : model_(std::move(m)), dataset_(&dataset), cfg_(cfg) {
  cfg_.validate();
  if (model_->k != dataset.k)
    throw InvalidInput("model K=" + std::to_string(model_->k) + " does not match dataset K=" +
                       std::to_string(dataset.k));
  const bool needs_aux = cfg_.method == Method::kDrg || cfg_.method == Method::kCombined;
  std::vector<model::ParamRef> params = model_->all_params();
  if (needs_aux) {
    std::mt19937_64 aux_rng(cfg_.seed ^ 0xAC0FFEEull);
    scaffold_ = std::make_unique<model::Scaffold>(model_, cfg_.tap,
                                                  model::AuxSpec{cfg_.aux_hidden}, aux_rng);
    for (auto& p : scaffold_->aux_params()) params.push_back(p);
  }
  opt_ = std::make_unique<SGD>(std::move(params), cfg_.momentum, cfg_.weight_decay);
}

model::Tensor Trainer::assemble_batch(const std::vector<int>& batch,
                                      std::mt19937_64& aug_rng) const {
  const bool augmenting =
      cfg_.aug.flip_prob > 0.0 || cfg_.aug.padding > 0 ||
      (cfg_.aug.crop_size > 0 && cfg_.aug.crop_size != dataset_->h);
  model::Tensor x;
  x.c = dataset_->c;
  x.h = cfg_.aug.crop_size > 0 ? cfg_.aug.crop_size : dataset_->h;
  x.w = cfg_.aug.crop_size > 0 ? cfg_.aug.crop_size : dataset_->w;
  x.data.resize(x.dim(), static_cast<Eigen::Index>(batch.size()));
  for (size_t i = 0; i < batch.size(); ++i) {
    if (augmenting) {
      x.data.col(static_cast<Eigen::Index>(i)) =
          data::augment(dataset_->train_images.col(batch[i]), dataset_->c, dataset_->h,
                        dataset_->w, cfg_.aug, aug_rng);
    } else {
      x.data.col(static_cast<Eigen::Index>(i)) = dataset_->train_images.col(batch[i]);
    }
  }
  return x;
}

Trainer::StepOut Trainer::step_batch(const std::vector<int>& batch, std::mt19937_64& aug_rng,
                                     double lr) {
  const model::Tensor x = assemble_batch(batch, aug_rng);
  const auto b = static_cast<Eigen::Index>(batch.size());
  const int k = model_->k;

  Mat z, z_aux;
  if (scaffold_) {
    auto out = scaffold_->forward_dual(x, true);
    z = std::move(out.main_logits);
    z_aux = std::move(out.aux_logits);
  } else {
    z = model_->forward(x, true);
  }
  if (!z.allFinite() || (scaffold_ && !z_aux.allFinite()))
    throw Divergence("non-finite logits at iteration " + std::to_string(iteration_) +
                     " (epoch " + std::to_string(epoch_) + ")");

  const bool uses_sr = cfg_.method == Method::kDsr || cfg_.method == Method::kCombined;
  // ~z^{-1} handling: skip the SR term entirely, or use the all-zero vector
  // whose softened form is the uniform distribution.
  Vec zero_target;
  if (uses_sr && !cache_.present() && cfg_.sr_first_step == SrFirstStep::kUniform)
    zero_target = Vec::Zero(k);

  Mat dz = Mat::Zero(k, b);
  Mat dz_aux;
  if (scaffold_) dz_aux = Mat::Zero(k, b);
  double loss_sum = 0.0;

  for (Eigen::Index s = 0; s < b; ++s) {
    const int y = dataset_->train_labels[static_cast<size_t>(batch[static_cast<size_t>(s)])];
    const Vec zs = z.col(s);
    Vec g(k), ga(k);
    const Vec* sr_target = nullptr;
    Vec cache_col;
    if (uses_sr) {
      if (cache_.present() && s < cache_.ranked.cols()) {
        cache_col = cache_.ranked.col(s);  // row-index-wise pairing with t-1
        sr_target = &cache_col;
      } else if (!cache_.present() && zero_target.size() > 0) {
        sr_target = &zero_target;
      }
    }
    switch (cfg_.method) {
      case Method::kVanilla:
        loss_sum += losses::ce_on_logits(zs, y, &g);
        break;
      case Method::kDrg:
        loss_sum += losses::drg_on_logits(z_aux.col(s), zs, y, cfg_.tau_drg, cfg_.alpha,
                                          cfg_.teacher_detach, &ga, &g);
        dz_aux.col(s) = ga / static_cast<double>(b);
        break;
      case Method::kDsr:
        loss_sum += losses::dsr_on_logits(zs, y, sr_target, cfg_.tau_dsr, cfg_.beta, &g);
        break;
      case Method::kCombined:
        loss_sum += losses::combined_on_logits(z_aux.col(s), zs, y, sr_target, cfg_.tau_drg,
                                               cfg_.tau_dsr, cfg_.alpha, cfg_.beta,
                                               cfg_.teacher_detach, &ga, &g);
        dz_aux.col(s) = ga / static_cast<double>(b);
        break;
    }
    dz.col(s) = g / static_cast<double>(b);
  }
  const double loss = loss_sum / static_cast<double>(b);
  if (!std::isfinite(loss))
    throw Divergence("non-finite loss at iteration " + std::to_string(iteration_) +
                     " (epoch " + std::to_string(epoch_) + ")");

  model::zero_grads(opt_->params());
  if (scaffold_) {
    scaffold_->backward_dual(dz, dz_aux);
  } else {
    // Reuse the cached activations of the forward above.
    model::Tensor d;
    d.c = k;
    d.h = 1;
    d.w = 1;
    d.data = dz;
    model::Tensor g = model_->head.backward(d);
    for (int i = model_->num_blocks() - 1; i >= 0; --i)
      g = model_->blocks[static_cast<size_t>(i)].backward(g);
  }
  opt_->step(lr);

  if (uses_sr) {
    cache_.ranked.resize(k, b);
    for (Eigen::Index s = 0; s < b; ++s)
      cache_.ranked.col(s) = losses::rank_ascending(z.col(s)).values;
    cache_.produced_at_iteration = iteration_;
  }
  ++iteration_;
  return {loss, std::move(z)};
}

void Trainer::train_epoch() {
  const double lr = lr_at(epoch_, cfg_.lr);
  const data::BatchPlan plan{cfg_.batch_size, cfg_.seed, cfg_.drop_last};
  const auto batches = data::build_batches(dataset_->n_train(), plan, epoch_);
  auto aug_rng = data::epoch_rng(cfg_.seed, epoch_, /*stream=*/1);

  Eigen::Index seen = 0;
  for (const auto& b : batches) seen += static_cast<Eigen::Index>(b.size());
  Mat train_logits(model_->k, seen);
  std::vector<int> train_labels;
  train_labels.reserve(static_cast<size_t>(seen));

  double loss_sum = 0.0;
  Eigen::Index at = 0;
  const auto t0 = std::chrono::steady_clock::now();
  for (const auto& batch : batches) {
    StepOut out = step_batch(batch, aug_rng, lr);
    loss_sum += out.loss * static_cast<double>(batch.size());
    result_.iteration_losses.push_back(out.loss);
    train_logits.middleCols(at, out.logits.cols()) = out.logits;
    at += out.logits.cols();
    for (int idx : batch) train_labels.push_back(dataset_->train_labels[static_cast<size_t>(idx)]);
  }
  const auto t1 = std::chrono::steady_clock::now();
  const double sec_per_iter =
      std::chrono::duration<double>(t1 - t0).count() / static_cast<double>(batches.size());

  analysis::MetricsRow train_row;
  train_row.epoch = epoch_;
  train_row.split = "train";
  train_row.top1_accuracy = analysis::top1_accuracy(train_logits, train_labels);
  train_row.mean_loss = loss_sum / static_cast<double>(seen);
  // Variance of the ranked class probabilities across samples.
  train_row.ranked_output_variance = analysis::ranked_output_variance_probs(train_logits).mean;
  train_row.seconds_per_iteration = cfg_.deterministic_timing ? 0.0 : sec_per_iter;
  train_row.learning_rate = lr;
  result_.log.append(train_row);

  EvalResult ev = evaluate_test();
  analysis::MetricsRow test_row;
  test_row.epoch = epoch_;
  test_row.split = "test";
  test_row.top1_accuracy = ev.top1;
  test_row.mean_loss = ev.mean_loss;
  test_row.ranked_output_variance = ev.ranked_variance;
  test_row.seconds_per_iteration = 0.0;
  test_row.learning_rate = lr;
  result_.log.append(test_row);

  ++epoch_;
}

TrainResult& Trainer::run() {
  while (epoch_ < cfg_.epochs) train_epoch();
  return result_;
}

model::Tensor Trainer::wrap_test_batch(const Mat& images, Eigen::Index start,
                                       Eigen::Index count) const {
  model::Tensor x;
  x.c = dataset_->c;
  x.h = dataset_->h;
  x.w = dataset_->w;
  x.data = images.middleCols(start, count);
  return x;
}

Mat Trainer::eval_logits(const Mat& images) {
  const Eigen::Index n = images.cols();
  Mat logits(model_->k, n);
  const Eigen::Index chunk = 256;
  for (Eigen::Index start = 0; start < n; start += chunk) {
    const Eigen::Index count = std::min(chunk, n - start);
    logits.middleCols(start, count) = model_->forward(wrap_test_batch(images, start, count), false);
  }
  return logits;
}

EvalResult Trainer::evaluate_split(const Mat& images, const std::vector<int>& labels) {
  EvalResult out;
  out.logits = eval_logits(images);
  out.top1 = analysis::top1_accuracy(out.logits, labels);
  double loss = 0.0;
  for (Eigen::Index s = 0; s < out.logits.cols(); ++s)
    loss += losses::ce_on_logits(out.logits.col(s), labels[static_cast<size_t>(s)], nullptr);
  out.mean_loss = loss / static_cast<double>(out.logits.cols());
  out.ranked_variance = analysis::ranked_output_variance_probs(out.logits).mean;
  return out;
}

namespace {

constexpr char kMagic[8] = {'S', 'K', 'D', 'C', 'K', '0', '0', '1'};

void write_mat(std::ofstream& out, const Mat& m) {
  const std::uint64_t rows = static_cast<std::uint64_t>(m.rows());
  const std::uint64_t cols = static_cast<std::uint64_t>(m.cols());
  out.write(reinterpret_cast<const char*>(&rows), 8);
  out.write(reinterpret_cast<const char*>(&cols), 8);
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * m.size()));
}

Mat read_mat(std::ifstream& in) {
  std::uint64_t rows = 0, cols = 0;
  in.read(reinterpret_cast<char*>(&rows), 8);
  in.read(reinterpret_cast<char*>(&cols), 8);
  Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  in.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(sizeof(double) * m.size()));
  if (!in) throw IoError("truncated checkpoint payload");
  return m;
}

}  // namespace

void Trainer::save_checkpoint(const std::string& path_prefix) const {
  std::ofstream out(path_prefix + ".bin", std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path_prefix + ".bin");
  out.write(kMagic, 8);

  std::vector<const Mat*> mats;
  for (const auto& p : opt_->params()) mats.push_back(p.value);
  auto buffers =
      scaffold_ ? scaffold_->all_buffers() : model_->all_buffers();
  for (const auto* b : buffers) mats.push_back(b);
  for (const auto& v : opt_->velocities()) mats.push_back(&v);
  mats.push_back(&cache_.ranked);

  const std::uint64_t count = mats.size();
  out.write(reinterpret_cast<const char*>(&count), 8);
  for (const auto* m : mats) write_mat(out, *m);
  const std::int64_t epoch = epoch_, iter = iteration_, stamp = cache_.produced_at_iteration;
  out.write(reinterpret_cast<const char*>(&epoch), 8);
  out.write(reinterpret_cast<const char*>(&iter), 8);
  out.write(reinterpret_cast<const char*>(&stamp), 8);
  if (!out) throw IoError("write failed for checkpoint " + path_prefix + ".bin");

  json info;
  info["model_name"] = model_->name;
  info["k"] = model_->k;
  info["in_channels"] = model_->in_channels;
  info["method"] = to_string(cfg_.method);
  info["tap"] = scaffold_ ? scaffold_->tap() : 0;
  info["aux_hidden"] = cfg_.aux_hidden;
  info["aux_spec"] = scaffold_ ? scaffold_->aux_spec().describe() : "";
  info["epoch"] = epoch_;
  info["iteration"] = iteration_;
  info["seed"] = cfg_.seed;
  info["dataset"] = dataset_->name;
  std::ofstream jf(path_prefix + ".json");
  if (!jf) throw IoError("cannot write checkpoint manifest " + path_prefix + ".json");
  jf << info.dump(2) << "\n";
}

void Trainer::load_checkpoint(const std::string& path_prefix) {
  std::ifstream in(path_prefix + ".bin", std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path_prefix + ".bin");
  char magic[8];
  in.read(magic, 8);
  if (!in || std::string(magic, 8) != std::string(kMagic, 8))
    throw IoError("bad checkpoint magic in " + path_prefix + ".bin");

  std::vector<Mat*> mats;
  for (const auto& p : opt_->params()) mats.push_back(p.value);
  auto buffers = scaffold_ ? scaffold_->all_buffers() : model_->all_buffers();
  for (auto* b : buffers) mats.push_back(b);
  for (auto& v : opt_->velocities()) mats.push_back(&v);
  mats.push_back(&cache_.ranked);

  std::uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&count), 8);
  if (count != mats.size())
    throw IoError("checkpoint matrix count mismatch: file has " + std::to_string(count) +
                  ", trainer expects " + std::to_string(mats.size()));
  for (auto* m : mats) {
    Mat loaded = read_mat(in);
    if (m != &cache_.ranked && (loaded.rows() != m->rows() || loaded.cols() != m->cols()))
      throw IoError("checkpoint shape mismatch");
    *m = std::move(loaded);
  }
  std::int64_t epoch = 0, iter = 0, stamp = 0;
  in.read(reinterpret_cast<char*>(&epoch), 8);
  in.read(reinterpret_cast<char*>(&iter), 8);
  in.read(reinterpret_cast<char*>(&stamp), 8);
  if (!in) throw IoError("truncated checkpoint tail");
  epoch_ = static_cast<int>(epoch);
  iteration_ = iter;
  cache_.produced_at_iteration = stamp;
}

long Trainer::model_parameter_count() { return model::parameter_count(model_->all_params()); }

long Trainer::aux_parameter_count() {
  return scaffold_ ? model::parameter_count(scaffold_->aux_params()) : 0;
}

double Trainer::time_iterations(int warmup, int measured) {
  if (warmup < 0 || measured <= 0) throw InvalidInput("bad profiling iteration counts");
  const data::BatchPlan plan{cfg_.batch_size, cfg_.seed, cfg_.drop_last};
  const auto batches = data::build_batches(dataset_->n_train(), plan, epoch_);
  auto aug_rng = data::epoch_rng(cfg_.seed, epoch_, /*stream=*/1);
  const double lr = lr_at(epoch_, cfg_.lr);
  size_t bi = 0;
  auto next = [&]() -> const std::vector<int>& {
    const auto& b = batches[bi];
    bi = (bi + 1) % batches.size();
    return b;
  };
  for (int i = 0; i < warmup; ++i) step_batch(next(), aug_rng, lr);
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < measured; ++i) step_batch(next(), aug_rng, lr);
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double>(t1 - t0).count() / measured;
}

CheckpointInfo read_checkpoint_info(const std::string& path_prefix) {
  std::ifstream in(path_prefix + ".json");
  if (!in) throw IoError("cannot open checkpoint manifest " + path_prefix + ".json");
  json j = json::parse(in);
  CheckpointInfo info;
  info.model_name = j.at("model_name").get<std::string>();
  info.k = j.at("k").get<int>();
  info.in_channels = j.at("in_channels").get<int>();
  info.method = j.at("method").get<std::string>();
  info.tap = j.at("tap").get<int>();
  info.aux_hidden = j.at("aux_hidden").get<int>();
  info.epoch = j.at("epoch").get<int>();
  info.seed = j.at("seed").get<std::uint64_t>();
  info.aux_spec = j.at("aux_spec").get<std::string>();
  return info;
}

analysis::ProfileReport profile_run(Trainer& trainer, const std::string& tmp_checkpoint_prefix,
                                    int warmup, int measured) {
  if (measured < 50 || warmup < 10)
    throw InvalidInput("profile_run needs >= 10 warmup and >= 50 measured iterations");
  analysis::ProfileReport rep;
  rep.seconds_per_iteration = trainer.time_iterations(warmup, measured);
  rep.measured_iterations = measured;
  rep.model_parameter_count = trainer.model_parameter_count();
  rep.aux_parameter_count = trainer.aux_parameter_count();
  trainer.save_checkpoint(tmp_checkpoint_prefix);
  rep.checkpoint_bytes =
      static_cast<std::uint64_t>(std::filesystem::file_size(tmp_checkpoint_prefix + ".bin"));
  return rep;
}

}  // namespace skd::train
