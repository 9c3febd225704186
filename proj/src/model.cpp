#include "skd/model.hpp"

#include <cmath>

namespace skd::model {

namespace {

Mat he_normal(Eigen::Index rows, Eigen::Index cols, double fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  Mat m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
  return m;
}

}  // namespace

// ---- Conv2d ----

Conv2d::Conv2d(int in_c, int out_c, int ksize, int stride, int pad, std::mt19937_64& rng)
    : in_c_(in_c), out_c_(out_c), k_(ksize), stride_(stride), pad_(pad) {
  const double fan_in = static_cast<double>(in_c) * ksize * ksize;
  weight_ = he_normal(out_c, in_c * ksize * ksize, fan_in, rng);
  bias_ = Mat::Zero(out_c, 1);
  d_weight_ = Mat::Zero(weight_.rows(), weight_.cols());
  d_bias_ = Mat::Zero(out_c, 1);
}

Tensor Conv2d::forward(const Tensor& x, bool /*train*/) {
  if (x.c != in_c_) throw InvalidInput("conv: expected " + std::to_string(in_c_) +
                                       " input channels, got " + std::to_string(x.c));
  in_h_ = x.h;
  in_w_ = x.w;
  out_h_ = (x.h + 2 * pad_ - k_) / stride_ + 1;
  out_w_ = (x.w + 2 * pad_ - k_) / stride_ + 1;
  const Eigen::Index b = x.batch();
  last_batch_ = b;
  const int out_hw = out_h_ * out_w_;
  const int patch = in_c_ * k_ * k_;

  col_.resize(patch, static_cast<Eigen::Index>(out_hw) * b);
  col_.setZero();
  for (Eigen::Index s = 0; s < b; ++s) {
    const double* src = x.data.col(s).data();
    for (int ic = 0; ic < in_c_; ++ic) {
      for (int kr = 0; kr < k_; ++kr) {
        for (int kc = 0; kc < k_; ++kc) {
          const int prow = (ic * k_ + kr) * k_ + kc;
          for (int orow = 0; orow < out_h_; ++orow) {
            const int irow = orow * stride_ + kr - pad_;
            if (irow < 0 || irow >= in_h_) continue;
            const Eigen::Index cbase = s * out_hw + static_cast<Eigen::Index>(orow) * out_w_;
            const double* srow = src + (static_cast<Eigen::Index>(ic) * in_h_ + irow) * in_w_;
            for (int ocol = 0; ocol < out_w_; ++ocol) {
              const int icol = ocol * stride_ + kc - pad_;
              if (icol >= 0 && icol < in_w_) col_(prow, cbase + ocol) = srow[icol];
            }
          }
        }
      }
    }
  }

  Mat prod = weight_ * col_;  // out_c x (out_hw*b)
  prod.colwise() += bias_.col(0);

  Tensor y;
  y.c = out_c_;
  y.h = out_h_;
  y.w = out_w_;
  y.data.resize(static_cast<Eigen::Index>(out_c_) * out_hw, b);
  for (Eigen::Index s = 0; s < b; ++s)
    for (int oc = 0; oc < out_c_; ++oc)
      y.data.col(s).segment(static_cast<Eigen::Index>(oc) * out_hw, out_hw) =
          prod.row(oc).segment(s * out_hw, out_hw).transpose();
  return y;
}

Tensor Conv2d::backward(const Tensor& dy) {
  const Eigen::Index b = last_batch_;
  const int out_hw = out_h_ * out_w_;

  Mat dprod(out_c_, static_cast<Eigen::Index>(out_hw) * b);
  for (Eigen::Index s = 0; s < b; ++s)
    for (int oc = 0; oc < out_c_; ++oc)
      dprod.row(oc).segment(s * out_hw, out_hw) =
          dy.data.col(s).segment(static_cast<Eigen::Index>(oc) * out_hw, out_hw).transpose();

  d_weight_ += dprod * col_.transpose();
  d_bias_.col(0) += dprod.rowwise().sum();

  const Mat dcol = weight_.transpose() * dprod;  // patch x (out_hw*b)

  Tensor dx;
  dx.c = in_c_;
  dx.h = in_h_;
  dx.w = in_w_;
  dx.data = Mat::Zero(static_cast<Eigen::Index>(in_c_) * in_h_ * in_w_, b);
  for (Eigen::Index s = 0; s < b; ++s) {
    double* dst = dx.data.col(s).data();
    for (int ic = 0; ic < in_c_; ++ic) {
      for (int kr = 0; kr < k_; ++kr) {
        for (int kc = 0; kc < k_; ++kc) {
          const int prow = (ic * k_ + kr) * k_ + kc;
          for (int orow = 0; orow < out_h_; ++orow) {
            const int irow = orow * stride_ + kr - pad_;
            if (irow < 0 || irow >= in_h_) continue;
            const Eigen::Index cbase = s * out_hw + static_cast<Eigen::Index>(orow) * out_w_;
            double* drow = dst + (static_cast<Eigen::Index>(ic) * in_h_ + irow) * in_w_;
            for (int ocol = 0; ocol < out_w_; ++ocol) {
              const int icol = ocol * stride_ + kc - pad_;
              if (icol >= 0 && icol < in_w_) drow[icol] += dcol(prow, cbase + ocol);
            }
          }
        }
      }
    }
  }
  return dx;
}

// ---- BatchNorm2d ----

BatchNorm2d::BatchNorm2d(int channels) : c_(channels) {
  gamma_ = Mat::Ones(c_, 1);
  beta_ = Mat::Zero(c_, 1);
  d_gamma_ = Mat::Zero(c_, 1);
  d_beta_ = Mat::Zero(c_, 1);
  running_mean_ = Mat::Zero(c_, 1);
  running_var_ = Mat::Ones(c_, 1);
}

Tensor BatchNorm2d::forward(const Tensor& x, bool train) {
  if (x.c != c_) throw InvalidInput("bn: channel mismatch");
  hw_ = x.h * x.w;
  const Eigen::Index b = x.batch();
  const Eigen::Index n = b * hw_;

  Tensor y;
  y.c = x.c;
  y.h = x.h;
  y.w = x.w;
  y.data.resize(x.data.rows(), b);
  if (train) {
    x_hat_.resize(x.data.rows(), b);
    inv_std_.resize(c_, 1);
    for (int ch = 0; ch < c_; ++ch) {
      double mean = 0.0, var = 0.0;
      for (Eigen::Index s = 0; s < b; ++s)
        mean += x.data.col(s).segment(static_cast<Eigen::Index>(ch) * hw_, hw_).sum();
      mean /= static_cast<double>(n);
      for (Eigen::Index s = 0; s < b; ++s)
        var += (x.data.col(s).segment(static_cast<Eigen::Index>(ch) * hw_, hw_).array() - mean)
                   .square()
                   .sum();
      var /= static_cast<double>(n);
      const double inv = 1.0 / std::sqrt(var + kEps);
      inv_std_(ch, 0) = inv;
      for (Eigen::Index s = 0; s < b; ++s) {
        auto seg = x.data.col(s).segment(static_cast<Eigen::Index>(ch) * hw_, hw_);
        x_hat_.col(s).segment(static_cast<Eigen::Index>(ch) * hw_, hw_) =
            (seg.array() - mean) * inv;
      }
      running_mean_(ch, 0) = (1.0 - kMomentum) * running_mean_(ch, 0) + kMomentum * mean;
      running_var_(ch, 0) = (1.0 - kMomentum) * running_var_(ch, 0) + kMomentum * var;
      for (Eigen::Index s = 0; s < b; ++s)
        y.data.col(s).segment(static_cast<Eigen::Index>(ch) * hw_, hw_) =
            gamma_(ch, 0) * x_hat_.col(s).segment(static_cast<Eigen::Index>(ch) * hw_, hw_).array() +
            beta_(ch, 0);
    }
  } else {
    for (int ch = 0; ch < c_; ++ch) {
      const double inv = 1.0 / std::sqrt(running_var_(ch, 0) + kEps);
      for (Eigen::Index s = 0; s < b; ++s) {
        auto seg = x.data.col(s).segment(static_cast<Eigen::Index>(ch) * hw_, hw_);
        y.data.col(s).segment(static_cast<Eigen::Index>(ch) * hw_, hw_) =
            gamma_(ch, 0) * ((seg.array() - running_mean_(ch, 0)) * inv) + beta_(ch, 0);
      }
    }
  }
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& dy) {
  const Eigen::Index b = dy.batch();
  const double n = static_cast<double>(b * hw_);

  Tensor dx;
  dx.c = dy.c;
  dx.h = dy.h;
  dx.w = dy.w;
  dx.data.resize(dy.data.rows(), b);
  for (int ch = 0; ch < c_; ++ch) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (Eigen::Index s = 0; s < b; ++s) {
      auto d = dy.data.col(s).segment(static_cast<Eigen::Index>(ch) * hw_, hw_);
      auto xh = x_hat_.col(s).segment(static_cast<Eigen::Index>(ch) * hw_, hw_);
      sum_dy += d.sum();
      sum_dy_xhat += (d.array() * xh.array()).sum();
    }
    d_gamma_(ch, 0) += sum_dy_xhat;
    d_beta_(ch, 0) += sum_dy;
    const double scale = gamma_(ch, 0) * inv_std_(ch, 0);
    const double mean_dy = sum_dy / n;
    const double mean_dy_xhat = sum_dy_xhat / n;
    for (Eigen::Index s = 0; s < b; ++s) {
      auto d = dy.data.col(s).segment(static_cast<Eigen::Index>(ch) * hw_, hw_);
      auto xh = x_hat_.col(s).segment(static_cast<Eigen::Index>(ch) * hw_, hw_);
      dx.data.col(s).segment(static_cast<Eigen::Index>(ch) * hw_, hw_) =
          scale * (d.array() - mean_dy - xh.array() * mean_dy_xhat);
    }
  }
  return dx;
}

// ---- ReLU ----

Tensor ReLU::forward(const Tensor& x, bool /*train*/) {
  mask_ = (x.data.array() > 0.0).cast<double>();
  Tensor y = x;
  y.data = x.data.cwiseProduct(mask_);
  return y;
}

Tensor ReLU::backward(const Tensor& dy) {
  Tensor dx = dy;
  dx.data = dy.data.cwiseProduct(mask_);
  return dx;
}

// ---- GlobalAvgPool ----

Tensor GlobalAvgPool::forward(const Tensor& x, bool /*train*/) {
  c_ = x.c;
  h_ = x.h;
  w_ = x.w;
  const int hw = h_ * w_;
  Tensor y;
  y.c = c_;
  y.h = 1;
  y.w = 1;
  y.data.resize(c_, x.batch());
  for (Eigen::Index s = 0; s < x.batch(); ++s)
    for (int ch = 0; ch < c_; ++ch)
      y.data(ch, s) = x.data.col(s).segment(static_cast<Eigen::Index>(ch) * hw, hw).mean();
  return y;
}

Tensor GlobalAvgPool::backward(const Tensor& dy) {
  const int hw = h_ * w_;
  Tensor dx;
  dx.c = c_;
  dx.h = h_;
  dx.w = w_;
  dx.data.resize(static_cast<Eigen::Index>(c_) * hw, dy.batch());
  for (Eigen::Index s = 0; s < dy.batch(); ++s)
    for (int ch = 0; ch < c_; ++ch)
      dx.data.col(s).segment(static_cast<Eigen::Index>(ch) * hw, hw).setConstant(dy.data(ch, s) /
                                                                                hw);
  return dx;
}

// ---- Linear ----

Linear::Linear(int in, int out, std::mt19937_64& rng) {
  weight_ = he_normal(out, in, in, rng);
  bias_ = Mat::Zero(out, 1);
  d_weight_ = Mat::Zero(out, in);
  d_bias_ = Mat::Zero(out, 1);
}

Tensor Linear::forward(const Tensor& x, bool /*train*/) {
  x_ = x.data;
  Tensor y;
  y.c = static_cast<int>(weight_.rows());
  y.h = 1;
  y.w = 1;
  y.data = weight_ * x.data;
  y.data.colwise() += bias_.col(0);
  return y;
}

Tensor Linear::backward(const Tensor& dy) {
  d_weight_ += dy.data * x_.transpose();
  d_bias_.col(0) += dy.data.rowwise().sum();
  Tensor dx;
  dx.c = static_cast<int>(weight_.cols());
  dx.h = 1;
  dx.w = 1;
  dx.data = weight_.transpose() * dy.data;
  return dx;
}

// ---- ResidualBlock ----

ResidualBlock::ResidualBlock(int in_c, int out_c, int stride, std::mt19937_64& rng) {
  body_.push_back(std::make_unique<Conv2d>(in_c, out_c, 3, stride, 1, rng));
  body_.push_back(std::make_unique<BatchNorm2d>(out_c));
  body_.push_back(std::make_unique<ReLU>());
  body_.push_back(std::make_unique<Conv2d>(out_c, out_c, 3, 1, 1, rng));
  body_.push_back(std::make_unique<BatchNorm2d>(out_c));
  if (in_c != out_c || stride != 1) {
    proj_.push_back(std::make_unique<Conv2d>(in_c, out_c, 1, stride, 0, rng));
    proj_.push_back(std::make_unique<BatchNorm2d>(out_c));
  }
}

Tensor ResidualBlock::forward(const Tensor& x, bool train) {
  Tensor t = x;
  for (auto& l : body_) t = l->forward(t, train);
  Tensor sk = x;
  for (auto& l : proj_) sk = l->forward(sk, train);
  t.data += sk.data;
  relu_mask_ = (t.data.array() > 0.0).cast<double>();
  t.data = t.data.cwiseProduct(relu_mask_);
  return t;
}

Tensor ResidualBlock::backward(const Tensor& dy) {
  Tensor d = dy;
  d.data = dy.data.cwiseProduct(relu_mask_);
  Tensor d_body = d;
  for (auto it = body_.rbegin(); it != body_.rend(); ++it) d_body = (*it)->backward(d_body);
  Tensor d_skip = d;
  for (auto it = proj_.rbegin(); it != proj_.rend(); ++it) d_skip = (*it)->backward(d_skip);
  d_body.data += d_skip.data;
  return d_body;
}

std::vector<ParamRef> ResidualBlock::params() {
  std::vector<ParamRef> out;
  for (auto& l : body_)
    for (auto& p : l->params()) out.push_back(p);
  for (auto& l : proj_)
    for (auto& p : l->params()) out.push_back(p);
  return out;
}

std::vector<Mat*> ResidualBlock::buffers() {
  std::vector<Mat*> out;
  for (auto& l : body_)
    for (auto* b : l->buffers()) out.push_back(b);
  for (auto& l : proj_)
    for (auto* b : l->buffers()) out.push_back(b);
  return out;
}

// ---- Sequential ----

Tensor Sequential::forward(const Tensor& x, bool train) {
  Tensor t = x;
  for (auto& l : layers_) t = l->forward(t, train);
  return t;
}

Tensor Sequential::backward(const Tensor& dy) {
  Tensor d = dy;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) d = (*it)->backward(d);
  return d;
}

std::vector<ParamRef> Sequential::params() {
  std::vector<ParamRef> out;
  for (auto& l : layers_)
    for (auto& p : l->params()) out.push_back(p);
  return out;
}

std::vector<Mat*> Sequential::buffers() {
  std::vector<Mat*> out;
  for (auto& l : layers_)
    for (auto* b : l->buffers()) out.push_back(b);
  return out;
}

// ---- BlockSequentialModel ----

Tensor BlockSequentialModel::forward_blocks(int from, int to, const Tensor& x, bool train) {
  Tensor t = x;
  for (int i = from; i < to; ++i) t = blocks[static_cast<size_t>(i)].forward(t, train);
  return t;
}

Mat BlockSequentialModel::forward(const Tensor& x, bool train) {
  Tensor t = forward_blocks(0, num_blocks(), x, train);
  return head.forward(t, train).data;
}

std::vector<ParamRef> BlockSequentialModel::all_params() {
  auto out = params_of_blocks(0, num_blocks());
  for (auto& p : head.params()) out.push_back(p);
  return out;
}

std::vector<ParamRef> BlockSequentialModel::params_of_blocks(int from, int to) {
  std::vector<ParamRef> out;
  for (int i = from; i < to; ++i)
    for (auto& p : blocks[static_cast<size_t>(i)].params()) out.push_back(p);
  return out;
}

std::vector<ParamRef> BlockSequentialModel::head_params() { return head.params(); }

std::vector<Mat*> BlockSequentialModel::all_buffers() {
  std::vector<Mat*> out;
  for (auto& blk : blocks)
    for (auto* b : blk.buffers()) out.push_back(b);
  for (auto* b : head.buffers()) out.push_back(b);
  return out;
}

// ---- Scaffold ----

std::string AuxSpec::describe() const {
  return "conv3x3s2-bn-relu-gap-linear(h=" + std::to_string(hidden_channels) + ")";
}

Scaffold::Scaffold(std::shared_ptr<BlockSequentialModel> m, int tap, const AuxSpec& spec,
                   std::mt19937_64& rng)
    : model_(std::move(m)), tap_(tap), aux_spec_(spec) {
  if (tap_ < 1 || tap_ >= model_->num_blocks())
    throw InvalidInput("tap must be in [1," + std::to_string(model_->num_blocks() - 1) +
                       "], got " + std::to_string(tap_));
  // Probe the tap channel count with a dummy forward of a 1-sample batch.
  // The registry models are input-size agnostic, so a small spatial probe works.
  Tensor probe;
  probe.c = model_->in_channels;
  probe.h = 8;
  probe.w = 8;
  probe.data = Mat::Zero(probe.dim(), 1);
  Tensor feat = model_->forward_blocks(0, tap_, probe, false);
  aux_.add(std::make_unique<Conv2d>(feat.c, spec.hidden_channels, 3, 2, 1, rng));
  aux_.add(std::make_unique<BatchNorm2d>(spec.hidden_channels));
  aux_.add(std::make_unique<ReLU>());
  aux_.add(std::make_unique<GlobalAvgPool>());
  aux_.add(std::make_unique<Linear>(spec.hidden_channels, model_->k, rng));
}

Scaffold::DualOut Scaffold::forward_dual(const Tensor& x, bool train) {
  tap_features_ = model_->forward_blocks(0, tap_, x, train);
  ++shallow_forward_count_;
  dual_cached_ = true;
  DualOut out;
  Tensor deep = model_->forward_blocks(tap_, model_->num_blocks(), tap_features_, train);
  out.main_logits = model_->head.forward(deep, train).data;
  out.aux_logits = aux_.forward(tap_features_, train).data;
  return out;
}

void Scaffold::backward_dual(const Mat& d_main, const Mat& d_aux) {
  if (!dual_cached_) throw InvalidInput("backward_dual without a preceding forward_dual");
  Tensor d;
  d.c = model_->k;
  d.h = 1;
  d.w = 1;
  d.data = d_main;
  Tensor d_deep = model_->head.backward(d);
  for (int i = model_->num_blocks() - 1; i >= tap_; --i)
    d_deep = model_->blocks[static_cast<size_t>(i)].backward(d_deep);

  Tensor da;
  da.c = model_->k;
  da.h = 1;
  da.w = 1;
  da.data = d_aux;
  Tensor d_tap_aux = aux_.backward(da);

  d_deep.data += d_tap_aux.data;
  for (int i = tap_ - 1; i >= 0; --i)
    d_deep = model_->blocks[static_cast<size_t>(i)].backward(d_deep);
  dual_cached_ = false;
}

Mat Scaffold::forward_main(const Tensor& x, bool train) { return model_->forward(x, train); }

void Scaffold::backward_main(const Mat& d_main) {
  Tensor d;
  d.c = model_->k;
  d.h = 1;
  d.w = 1;
  d.data = d_main;
  Tensor g = model_->head.backward(d);
  for (int i = model_->num_blocks() - 1; i >= 0; --i)
    g = model_->blocks[static_cast<size_t>(i)].backward(g);
}

std::vector<ParamRef> Scaffold::theta_hat() { return model_->params_of_blocks(0, tap_); }

std::vector<ParamRef> Scaffold::theta_deep() {
  auto out = model_->params_of_blocks(tap_, model_->num_blocks());
  for (auto& p : model_->head.params()) out.push_back(p);
  return out;
}

std::vector<ParamRef> Scaffold::aux_params() { return aux_.params(); }

std::vector<ParamRef> Scaffold::all_params() {
  auto out = model_->all_params();
  for (auto& p : aux_.params()) out.push_back(p);
  return out;
}

std::vector<Mat*> Scaffold::all_buffers() {
  auto out = model_->all_buffers();
  for (auto* b : aux_.buffers()) out.push_back(b);
  return out;
}

long parameter_count(const std::vector<ParamRef>& params) {
  long n = 0;
  for (const auto& p : params) n += static_cast<long>(p.value->size());
  return n;
}

void zero_grads(const std::vector<ParamRef>& params) {
  for (const auto& p : params) p.grad->setZero();
}

// ---- registry ----

namespace {

std::unique_ptr<BlockSequentialModel> build_resnet(const std::string& name, int k,
                                                   int in_channels, std::uint64_t seed,
                                                   const std::vector<int>& widths) {
  auto m = std::make_unique<BlockSequentialModel>();
  m->name = name;
  m->k = k;
  m->in_channels = in_channels;
  std::mt19937_64 rng(seed);
  // Block 1 carries the stem conv; later blocks downsample by 2.
  for (size_t i = 0; i < widths.size(); ++i) {
    Sequential blk;
    if (i == 0) {
      blk.add(std::make_unique<Conv2d>(in_channels, widths[0], 3, 1, 1, rng));
      blk.add(std::make_unique<BatchNorm2d>(widths[0]));
      blk.add(std::make_unique<ReLU>());
      blk.add(std::make_unique<ResidualBlock>(widths[0], widths[0], 1, rng));
    } else {
      blk.add(std::make_unique<ResidualBlock>(widths[i - 1], widths[i], 2, rng));
    }
    m->blocks.push_back(std::move(blk));
  }
  m->head.add(std::make_unique<GlobalAvgPool>());
  m->head.add(std::make_unique<Linear>(widths.back(), k, rng));
  return m;
}

}  // namespace

std::vector<std::string> registered_models() {
  return {"micro-2block", "tiny-resnet-3block", "tiny-resnet-4block", "resnet18-style"};
}

std::shared_ptr<BlockSequentialModel> model_registry(const std::string& name, int k,
                                                     int in_channels, std::uint64_t seed) {
  if (k < 2) throw InvalidInput("class count must be >= 2");
  if (name == "micro-2block") return build_resnet(name, k, in_channels, seed, {4, 6});
  if (name == "tiny-resnet-3block") return build_resnet(name, k, in_channels, seed, {8, 12, 16});
  if (name == "tiny-resnet-4block")
    return build_resnet(name, k, in_channels, seed, {8, 12, 16, 16});
  if (name == "resnet18-style") return build_resnet(name, k, in_channels, seed, {32, 64, 128, 256});
  std::string known;
  for (const auto& n : registered_models()) known += (known.empty() ? "" : ", ") + n;
  throw InvalidInput("unknown model '" + name + "'; registered models: " + known);
}

}  // namespace skd::model
