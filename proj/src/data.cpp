#include "skd/data.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace skd::data {

namespace fs = std::filesystem;

namespace {

constexpr int kSynthSize = 16;
constexpr int kSynthPerClassTrain = 500;
constexpr int kSynthPerClassTest = 100;

double smooth_bump(double r, double c, double cr, double cc, double width) {
  const double d2 = (r - cr) * (r - cr) + (c - cc) * (c - cc);
  return std::exp(-d2 / (2.0 * width * width));
}

// Per-class prototype: a few random smooth bumps per channel.
Mat make_prototypes(int k, int channels, int size, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> pos(0.0, size - 1.0);
  std::uniform_real_distribution<double> width(1.5, 4.0);
  std::uniform_real_distribution<double> amp(-2.0, 2.0);
  Mat protos(static_cast<Eigen::Index>(channels) * size * size, k);
  protos.setZero();
  for (int cls = 0; cls < k; ++cls) {
    for (int ch = 0; ch < channels; ++ch) {
      for (int bump = 0; bump < 3; ++bump) {
        const double cr = pos(rng), cc = pos(rng), wd = width(rng), a = amp(rng);
        for (int r = 0; r < size; ++r)
          for (int col = 0; col < size; ++col)
            protos((static_cast<Eigen::Index>(ch) * size + r) * size + col, cls) +=
                a * smooth_bump(r, col, cr, cc, wd);
      }
    }
  }
  return protos;
}

Vec shifted_prototype(const Mat& protos, int cls, int channels, int size, int dr, int dc) {
  Vec out = Vec::Zero(protos.rows());
  for (int ch = 0; ch < channels; ++ch)
    for (int r = 0; r < size; ++r) {
      const int sr = r - dr;
      if (sr < 0 || sr >= size) continue;
      for (int c = 0; c < size; ++c) {
        const int sc = c - dc;
        if (sc < 0 || sc >= size) continue;
        out((static_cast<Eigen::Index>(ch) * size + r) * size + c) =
            protos((static_cast<Eigen::Index>(ch) * size + sr) * size + sc, cls);
      }
    }
  return out;
}

void normalize(Dataset& d);

Dataset make_synthetic(const std::string& name, std::uint64_t seed, bool hard) {
  const int k = 10, channels = 3, size = kSynthSize;
  std::mt19937_64 rng(seed);
  const Mat protos = make_prototypes(k, channels, size, rng);
  std::normal_distribution<double> noise(0.0, hard ? 1.1 : 0.3);
  std::uniform_int_distribution<int> shift(hard ? -3 : 0, hard ? 3 : 0);
  std::uniform_real_distribution<double> contrast(hard ? 0.6 : 1.0, hard ? 1.4 : 1.0);

  Dataset d;
  d.name = name;
  d.k = k;
  d.c = channels;
  d.h = size;
  d.w = size;
  const int n_train = k * kSynthPerClassTrain;
  const int n_test = k * kSynthPerClassTest;
  d.train_images.resize(protos.rows(), n_train);
  d.test_images.resize(protos.rows(), n_test);
  d.train_labels.resize(n_train);
  d.test_labels.resize(n_test);

  auto fill = [&](Mat& images, std::vector<int>& labels, int per_class) {
    int idx = 0;
    for (int cls = 0; cls < k; ++cls) {
      for (int i = 0; i < per_class; ++i, ++idx) {
        Vec base = shifted_prototype(protos, cls, channels, size, shift(rng), shift(rng));
        const double a = contrast(rng);
        for (Eigen::Index j = 0; j < base.size(); ++j)
          images(j, idx) = a * base(j) + noise(rng);
        labels[static_cast<size_t>(idx)] = cls;
      }
    }
  };
  fill(d.train_images, d.train_labels, kSynthPerClassTrain);
  fill(d.test_images, d.test_labels, kSynthPerClassTest);
  normalize(d);
  return d;
}

struct RawCifar {
  Mat images;  // 3072 x n, raw [0,255]
  std::vector<int> labels;
};

RawCifar read_cifar_file(const fs::path& path, int label_bytes, int label_offset) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open " + path.string() +
                  "; expected standard CIFAR binary layout under the dataset root");
  const int record = label_bytes + 3072;
  const auto bytes = fs::file_size(path);
  if (bytes == 0 || bytes % static_cast<std::uintmax_t>(record) != 0)
    throw IoError(path.string() + ": size " + std::to_string(bytes) +
                  " is not a whole number of " + std::to_string(record) + "-byte records");
  const int n_records = static_cast<int>(bytes / static_cast<std::uintmax_t>(record));
  std::vector<char> buf(static_cast<size_t>(record));
  RawCifar out;
  out.images.resize(3072, n_records);
  out.labels.reserve(static_cast<size_t>(n_records));
  for (int i = 0; i < n_records; ++i) {
    if (!in.read(buf.data(), record))
      throw IoError(path.string() + ": truncated at record " + std::to_string(i));
    out.labels.push_back(static_cast<unsigned char>(buf[static_cast<size_t>(label_offset)]));
    for (int j = 0; j < 3072; ++j)
      out.images(j, i) = static_cast<double>(static_cast<unsigned char>(buf[static_cast<size_t>(label_bytes + j)]));
  }
  return out;
}

// 2x2 average pooling, 32x32 -> 16x16 per channel. Desk-scale datasets use
// this to keep CPU training runs inside the acceptance budget.
Mat downsample_2x(const Mat& images, int channels, int size) {
  const int half = size / 2;
  Mat out(static_cast<Eigen::Index>(channels) * half * half, images.cols());
  for (Eigen::Index s = 0; s < images.cols(); ++s)
    for (int ch = 0; ch < channels; ++ch)
      for (int r = 0; r < half; ++r)
        for (int c = 0; c < half; ++c) {
          auto at = [&](int rr, int cc) {
            return images((static_cast<Eigen::Index>(ch) * size + rr) * size + cc, s);
          };
          out((static_cast<Eigen::Index>(ch) * half + r) * half + c, s) =
              0.25 * (at(2 * r, 2 * c) + at(2 * r, 2 * c + 1) + at(2 * r + 1, 2 * c) +
                      at(2 * r + 1, 2 * c + 1));
        }
  return out;
}

void normalize(Dataset& d) {
  const int hw = d.h * d.w;
  d.channel_mean = Vec::Zero(d.c);
  d.channel_std = Vec::Zero(d.c);
  for (int ch = 0; ch < d.c; ++ch) {
    const auto block = d.train_images.middleRows(static_cast<Eigen::Index>(ch) * hw, hw);
    const double mean = block.mean();
    const double var = (block.array() - mean).square().mean();
    d.channel_mean[ch] = mean;
    d.channel_std[ch] = std::sqrt(std::max(var, 1e-12));
  }
  auto apply = [&](Mat& images) {
    for (int ch = 0; ch < d.c; ++ch) {
      auto block = images.middleRows(static_cast<Eigen::Index>(ch) * hw, hw);
      block = (block.array() - d.channel_mean[ch]) / d.channel_std[ch];
    }
  };
  apply(d.train_images);
  apply(d.test_images);
}

std::vector<int> read_index_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open index file " + path.string());
  std::vector<int> out;
  int v;
  while (in >> v) out.push_back(v);
  return out;
}

void write_index_file(const fs::path& path, const std::vector<int>& idx) {
  std::ofstream out(path);
  for (int v : idx) out << v << "\n";
}

// Stratified pick of per_class samples per class, seeded and order-stable.
std::vector<int> stratified_indices(const std::vector<int>& labels, int k, int per_class,
                                    std::uint64_t seed) {
  std::vector<std::vector<int>> by_class(static_cast<size_t>(k));
  for (size_t i = 0; i < labels.size(); ++i)
    by_class[static_cast<size_t>(labels[i])].push_back(static_cast<int>(i));
  std::mt19937_64 rng(seed);
  std::vector<int> out;
  for (auto& bucket : by_class) {
    for (size_t i = bucket.size(); i > 1; --i) {
      const size_t j = rng() % i;
      std::swap(bucket[i - 1], bucket[j]);
    }
    if (static_cast<int>(bucket.size()) < per_class)
      throw InvalidInput("class bucket smaller than requested subset size");
    out.insert(out.end(), bucket.begin(), bucket.begin() + per_class);
  }
  std::sort(out.begin(), out.end());
  return out;
}

Mat select_cols(const Mat& m, const std::vector<int>& idx) {
  Mat out(m.rows(), static_cast<Eigen::Index>(idx.size()));
  for (size_t i = 0; i < idx.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = m.col(idx[i]);
  return out;
}

std::vector<int> select_labels(const std::vector<int>& labels, const std::vector<int>& idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(labels[static_cast<size_t>(i)]);
  return out;
}

void load_cifar10_raw(const std::string& root, RawCifar* train, RawCifar* test) {
  const fs::path dir = fs::path(root) / "cifar-10-batches-bin";
  std::vector<RawCifar> parts;
  Eigen::Index n_train = 0;
  for (int b = 1; b <= 5; ++b) {
    parts.push_back(read_cifar_file(dir / ("data_batch_" + std::to_string(b) + ".bin"), 1, 0));
    n_train += parts.back().images.cols();
  }
  train->images.resize(3072, n_train);
  train->labels.clear();
  Eigen::Index at = 0;
  for (const auto& part : parts) {
    train->images.middleCols(at, part.images.cols()) = part.images;
    train->labels.insert(train->labels.end(), part.labels.begin(), part.labels.end());
    at += part.images.cols();
  }
  *test = read_cifar_file(dir / "test_batch.bin", 1, 0);
}

Dataset load_cifar10_full(const std::string& root) {
  RawCifar train, test;
  load_cifar10_raw(root, &train, &test);
  Dataset d;
  d.name = "cifar10";
  d.k = 10;
  d.c = 3;
  d.h = 32;
  d.w = 32;
  d.train_images = train.images;
  d.train_labels = train.labels;
  d.test_images = test.images;
  d.test_labels = test.labels;
  normalize(d);
  return d;
}

Dataset load_cifar10_subset(const std::string& root) {
  RawCifar train, test;
  load_cifar10_raw(root, &train, &test);

  const fs::path train_idx_path = fs::path(root) / "cifar10-subset-5k.train.idx";
  const fs::path test_idx_path = fs::path(root) / "cifar10-subset-5k.test.idx";
  std::vector<int> train_idx, test_idx;
  if (fs::exists(train_idx_path) && fs::exists(test_idx_path)) {
    train_idx = read_index_file(train_idx_path);
    test_idx = read_index_file(test_idx_path);
  } else {
    train_idx = stratified_indices(train.labels, 10, 500, 71001);
    test_idx = stratified_indices(test.labels, 10, 100, 71002);
    write_index_file(train_idx_path, train_idx);
    write_index_file(test_idx_path, test_idx);
  }

  Dataset d;
  d.name = "cifar10-subset-5k";
  d.k = 10;
  d.c = 3;
  d.h = 16;
  d.w = 16;
  d.train_images = downsample_2x(select_cols(train.images, train_idx), 3, 32);
  d.train_labels = select_labels(train.labels, train_idx);
  d.test_images = downsample_2x(select_cols(test.images, test_idx), 3, 32);
  d.test_labels = select_labels(test.labels, test_idx);
  normalize(d);
  return d;
}

Dataset load_cifar100(const std::string& root) {
  const fs::path dir = fs::path(root) / "cifar-100-binary";
  RawCifar train = read_cifar_file(dir / "train.bin", 2, 1);  // fine label is byte 2
  RawCifar test = read_cifar_file(dir / "test.bin", 2, 1);
  Dataset d;
  d.name = "cifar100";
  d.k = 100;
  d.c = 3;
  d.h = 32;
  d.w = 32;
  d.train_images = train.images;
  d.train_labels = train.labels;
  d.test_images = test.images;
  d.test_labels = test.labels;
  normalize(d);
  return d;
}

}  // namespace

std::vector<std::string> registered_datasets() {
  return {"synthetic-gaussian-10", "synthetic-hard-10", "cifar10-subset-5k", "cifar10",
          "cifar100"};
}

Dataset load_dataset(const std::string& name, const std::string& root, std::uint64_t synth_seed) {
  if (name == "synthetic-gaussian-10") return make_synthetic(name, synth_seed, false);
  if (name == "synthetic-hard-10") return make_synthetic(name, synth_seed, true);
  if (name == "cifar10-subset-5k") return load_cifar10_subset(root);
  if (name == "cifar10") return load_cifar10_full(root);
  if (name == "cifar100") return load_cifar100(root);
  std::string known;
  for (const auto& n : registered_datasets()) known += (known.empty() ? "" : ", ") + n;
  throw InvalidInput("unknown dataset '" + name + "'; registered datasets: " + known);
}

Vec augment(const Vec& image, int c, int h, int w, const AugmentationPolicy& policy,
            std::mt19937_64& rng) {
  const int crop = policy.crop_size > 0 ? policy.crop_size : h;
  if (crop > h + 2 * policy.padding || crop > w + 2 * policy.padding)
    throw InvalidInput("crop size exceeds padded image");

  // Draws happen unconditionally so the stream does not depend on outcomes.
  const int max_r = h + 2 * policy.padding - crop;
  const int max_c = w + 2 * policy.padding - crop;
  std::uniform_int_distribution<int> row_off(0, max_r), col_off(0, max_c);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const int r0 = row_off(rng) - policy.padding;
  const int c0 = col_off(rng) - policy.padding;
  const bool flip = unif(rng) < policy.flip_prob;

  Vec out = Vec::Zero(static_cast<Eigen::Index>(c) * crop * crop);
  for (int ch = 0; ch < c; ++ch)
    for (int r = 0; r < crop; ++r) {
      const int sr = r0 + r;
      if (sr < 0 || sr >= h) continue;
      for (int col = 0; col < crop; ++col) {
        const int sc = c0 + (flip ? crop - 1 - col : col);
        if (sc < 0 || sc >= w) continue;
        out((static_cast<Eigen::Index>(ch) * crop + r) * crop + col) =
            image((static_cast<Eigen::Index>(ch) * h + sr) * w + sc);
      }
    }
  return out;
}

std::mt19937_64 epoch_rng(std::uint64_t seed, int epoch, std::uint64_t stream) {
  std::uint64_t x = seed;
  x ^= 0x9E3779B97F4A7C15ull * (static_cast<std::uint64_t>(epoch) + 1);
  x ^= 0xBF58476D1CE4E5B9ull * (stream + 1);
  return std::mt19937_64(x);
}

std::vector<std::vector<int>> build_batches(Eigen::Index n, const BatchPlan& plan, int epoch) {
  if (plan.batch_size <= 0) throw InvalidInput("batch_size must be positive");
  if (plan.batch_size > n)
    throw InvalidInput("batch_size " + std::to_string(plan.batch_size) +
                       " exceeds dataset size " + std::to_string(n));
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  auto rng = epoch_rng(plan.shuffle_seed, epoch, /*stream=*/0);
  for (size_t i = order.size(); i > 1; --i) {
    const size_t j = rng() % i;  // Fisher-Yates, stable across standard libraries
    std::swap(order[i - 1], order[j]);
  }
  std::vector<std::vector<int>> batches;
  for (size_t start = 0; start < order.size(); start += static_cast<size_t>(plan.batch_size)) {
    const size_t end = std::min(order.size(), start + static_cast<size_t>(plan.batch_size));
    if (end - start < static_cast<size_t>(plan.batch_size) && plan.drop_last) break;
    batches.emplace_back(order.begin() + static_cast<long>(start),
                         order.begin() + static_cast<long>(end));
  }
  return batches;
}

}  // namespace skd::data
