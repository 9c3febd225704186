#pragma once

#include <random>
#include <string>
#include <vector>

#include "skd/common.hpp"

// Dataset loading, augmentation, and batch planning. Everything here is
// deterministic: a (seed, epoch) pair fully determines batch order and
// augmentation draws, independent of machine or worker count.

namespace skd::data {

struct Dataset {
  std::string name;
  int k = 0;          // class count
  int c = 0, h = 0, w = 0;
  Mat train_images;   // (c*h*w) x n_train, normalized
  std::vector<int> train_labels;
  Mat test_images;
  std::vector<int> test_labels;
  Vec channel_mean;   // per-channel statistics of the raw train split
  Vec channel_std;

  Eigen::Index n_train() const { return train_images.cols(); }
  Eigen::Index n_test() const { return test_images.cols(); }
};

struct AugmentationPolicy {
  int crop_size = 0;   // output spatial size; 0 disables cropping
  int padding = 0;     // zero padding applied before the random crop
  double flip_prob = 0.5;
};

struct BatchPlan {
  int batch_size = 128;
  std::uint64_t shuffle_seed = 0;
  bool drop_last = false;
};

// Registered names:
//   synthetic-gaussian-10   separable Gaussian-blob fixture, 5000/1000, 16x16
//   synthetic-hard-10       noisy variant with jitter, overfit-prone
//   cifar10-subset-5k       stratified 5000/1000 CIFAR-10 subset, 16x16
//   cifar10 / cifar100      full binary datasets at 32x32
// CIFAR loaders expect the standard binary layout under `root`
// (cifar-10-batches-bin/, cifar-100-binary/). Subset index files are written
// next to the data, one index per line, and reused on later loads.
Dataset load_dataset(const std::string& name, const std::string& root,
                     std::uint64_t synth_seed = 9000);
std::vector<std::string> registered_datasets();

// Zero-pad, random-crop to crop_size, horizontal flip. Channel-major layout.
Vec augment(const Vec& image, int c, int h, int w, const AugmentationPolicy& policy,
            std::mt19937_64& rng);

// Deterministic permutation of [0, n) chunked into batches.
std::vector<std::vector<int>> build_batches(Eigen::Index n, const BatchPlan& plan, int epoch);

// RNG stream for epoch-scoped draws (augmentation, shuffling).
std::mt19937_64 epoch_rng(std::uint64_t seed, int epoch, std::uint64_t stream);

}  // namespace skd::data
