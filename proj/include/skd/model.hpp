#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "skd/common.hpp"

// Block-sequential convolutional classifiers with an optional auxiliary
// classifier tapped after a shallow block. Forward/backward are explicit;
// every layer caches what its backward pass needs, so a layer instance is
// owned by exactly one trainer at a time. Double precision throughout.

namespace skd::model {

// Batch of feature maps. Per-sample layout is channel-major:
// element (ch, row, col) lives at index (ch*h + row)*w + col of its column.
struct Tensor {
  int c = 0, h = 0, w = 0;
  Mat data;  // (c*h*w) x batch
  Eigen::Index batch() const { return data.cols(); }
  Eigen::Index dim() const { return static_cast<Eigen::Index>(c) * h * w; }
};

struct ParamRef {
  Mat* value;
  Mat* grad;
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, bool train) = 0;
  virtual Tensor backward(const Tensor& dy) = 0;
  virtual std::vector<ParamRef> params() { return {}; }
  // Non-learnable state that checkpoints must carry (e.g. BN running stats).
  virtual std::vector<Mat*> buffers() { return {}; }
  virtual std::string kind() const = 0;
};

class Conv2d final : public Layer {
 public:
  Conv2d(int in_c, int out_c, int ksize, int stride, int pad, std::mt19937_64& rng);
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& dy) override;
  std::vector<ParamRef> params() override { return {{&weight_, &d_weight_}, {&bias_, &d_bias_}}; }
  std::string kind() const override { return "conv"; }

 private:
  int in_c_, out_c_, k_, stride_, pad_;
  Mat weight_, d_weight_;  // out_c x (in_c*k*k)
  Mat bias_, d_bias_;      // out_c x 1
  Mat col_;                // cached im2col of the last forward input
  int in_h_ = 0, in_w_ = 0, out_h_ = 0, out_w_ = 0;
  Eigen::Index last_batch_ = 0;
};

class BatchNorm2d final : public Layer {
 public:
  explicit BatchNorm2d(int channels);
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& dy) override;
  std::vector<ParamRef> params() override { return {{&gamma_, &d_gamma_}, {&beta_, &d_beta_}}; }
  std::vector<Mat*> buffers() override { return {&running_mean_, &running_var_}; }
  std::string kind() const override { return "bn"; }
  Mat& running_mean() { return running_mean_; }
  Mat& running_var() { return running_var_; }

 private:
  int c_;
  Mat gamma_, d_gamma_, beta_, d_beta_;       // c x 1
  Mat running_mean_, running_var_;            // c x 1
  Mat x_hat_;                                 // cached normalized input
  Mat inv_std_;                               // c x 1, batch statistics
  int hw_ = 0;
  static constexpr double kMomentum = 0.1;
  static constexpr double kEps = 1e-5;
};

class ReLU final : public Layer {
 public:
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& dy) override;
  std::string kind() const override { return "relu"; }

 private:
  Mat mask_;
};

class GlobalAvgPool final : public Layer {
 public:
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& dy) override;
  std::string kind() const override { return "gap"; }

 private:
  int c_ = 0, h_ = 0, w_ = 0;
};

class Linear final : public Layer {
 public:
  Linear(int in, int out, std::mt19937_64& rng);
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& dy) override;
  std::vector<ParamRef> params() override { return {{&weight_, &d_weight_}, {&bias_, &d_bias_}}; }
  std::string kind() const override { return "linear"; }

 private:
  Mat weight_, d_weight_;  // out x in
  Mat bias_, d_bias_;      // out x 1
  Mat x_;                  // cached input
};

// conv-bn-relu-conv-bn plus (projected) shortcut, relu on the sum.
class ResidualBlock final : public Layer {
 public:
  ResidualBlock(int in_c, int out_c, int stride, std::mt19937_64& rng);
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& dy) override;
  std::vector<ParamRef> params() override;
  std::vector<Mat*> buffers() override;
  std::string kind() const override { return "resblock"; }

 private:
  std::vector<std::unique_ptr<Layer>> body_;
  std::vector<std::unique_ptr<Layer>> proj_;  // empty for an identity shortcut
  Mat relu_mask_;
};

class Sequential {
 public:
  Sequential() = default;
  void add(std::unique_ptr<Layer> l) { layers_.push_back(std::move(l)); }
  Tensor forward(const Tensor& x, bool train);
  Tensor backward(const Tensor& dy);
  std::vector<ParamRef> params();
  std::vector<Mat*> buffers();
  bool empty() const { return layers_.empty(); }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

// Whole classifier h(theta, x): indexable feature blocks plus a logit head.
struct BlockSequentialModel {
  std::string name;
  int k = 0;                       // class count
  int in_channels = 3;
  std::vector<Sequential> blocks;  // block 1 is blocks[0]
  Sequential head;                 // GAP + Linear to k logits

  int num_blocks() const { return static_cast<int>(blocks.size()); }
  // Forward blocks [from, to) (0-based), then optionally the head.
  Tensor forward_blocks(int from, int to, const Tensor& x, bool train);
  Mat forward(const Tensor& x, bool train);  // all blocks + head -> k x B logits
  std::vector<ParamRef> all_params();
  std::vector<ParamRef> params_of_blocks(int from, int to);
  std::vector<ParamRef> head_params();
  std::vector<Mat*> all_buffers();
};

// Descriptor of the auxiliary head attached at the tap; recorded in manifests.
struct AuxSpec {
  int hidden_channels = 16;  // conv width of the single downsampling stage
  std::string describe() const;
};

// Scaffolded model: main path plus one auxiliary classifier g(theta_hat, w, x)
// reading the features that leave block `tap` (1-based).
class Scaffold {
 public:
  Scaffold(std::shared_ptr<BlockSequentialModel> m, int tap, const AuxSpec& spec,
           std::mt19937_64& rng);

  struct DualOut {
    Mat main_logits;  // z,  k x B
    Mat aux_logits;   // z', k x B
  };

  DualOut forward_dual(const Tensor& x, bool train);
  // Gradients w.r.t. both logit batches; shallow blocks are traversed once.
  void backward_dual(const Mat& d_main, const Mat& d_aux);

  Mat forward_main(const Tensor& x, bool train);  // identical to the unscaffolded model
  void backward_main(const Mat& d_main);

  BlockSequentialModel& model() { return *model_; }
  int tap() const { return tap_; }
  const AuxSpec& aux_spec() const { return aux_spec_; }

  std::vector<ParamRef> theta_hat();    // blocks 1..tap
  std::vector<ParamRef> theta_deep();   // remaining blocks + head
  std::vector<ParamRef> aux_params();   // w
  std::vector<ParamRef> all_params();
  std::vector<Mat*> all_buffers();      // model + aux non-learnable state

  // Number of times the shallow blocks were executed (instrumentation).
  long shallow_forward_count() const { return shallow_forward_count_; }

 private:
  std::shared_ptr<BlockSequentialModel> model_;
  int tap_;
  AuxSpec aux_spec_;
  Sequential aux_;
  Tensor tap_features_;
  long shallow_forward_count_ = 0;
  bool dual_cached_ = false;
};

long parameter_count(const std::vector<ParamRef>& params);
void zero_grads(const std::vector<ParamRef>& params);

// Known model names; throws InvalidInput listing alternatives otherwise.
std::shared_ptr<BlockSequentialModel> model_registry(const std::string& name, int k,
                                                     int in_channels, std::uint64_t seed);
std::vector<std::string> registered_models();

}  // namespace skd::model
