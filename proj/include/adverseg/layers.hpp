#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "adverseg/tensor.hpp"

namespace adverseg {

/// train: batch statistics, running stats updated.
/// eval: running statistics.
/// train_frozen_stats: batch statistics, running stats left untouched (used
/// when gradients flow through a network that is not being updated).
enum class Mode { train, eval, train_frozen_stats };

template <typename T>
struct Param {
  std::string name;
  BasicTensor<T> value;
  BasicTensor<T> grad;

  Param() = default;
  Param(std::string n, BasicTensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape(), T{0}) {}
};

template <typename T>
struct NamedParam {
  std::string name;
  Param<T>* param;
};

template <typename T>
struct NamedBuffer {
  std::string name;
  BasicTensor<T>* buffer;
};

struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_size = 3;
  std::size_t stride = 1;
  std::size_t padding = 0;

  // floor((in + 2p - k) / s) + 1; throws ShapeError when the window does not fit.
  std::size_t conv_output_size(std::size_t in) const;
  // (in - 1) * s - 2p + k; throws ShapeError when non-positive.
  std::size_t transpose_output_size(std::size_t in) const;
};

// Raw convolution kernels. Weight layout is [out, in, k, k]; no bias.
template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& x, const BasicTensor<T>& w, std::size_t stride,
                              std::size_t pad);
// Adjoint of conv2d_forward with respect to x; `in_h`/`in_w` are x's spatial dims.
template <typename T>
BasicTensor<T> conv2d_backward_input(const BasicTensor<T>& grad_out, const BasicTensor<T>& w,
                                     std::size_t in_h, std::size_t in_w, std::size_t stride,
                                     std::size_t pad);
// Accumulates d<grad_out, conv(x, w)>/dw into grad_w.
template <typename T>
void conv2d_backward_weight(const BasicTensor<T>& x, const BasicTensor<T>& grad_out,
                            BasicTensor<T>& grad_w, std::size_t stride, std::size_t pad);

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string kind() const = 0;
  virtual BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) = 0;
  // Returns the gradient w.r.t. the last forward input and accumulates
  // parameter gradients.
  virtual BasicTensor<T> backward(const BasicTensor<T>& grad_out) = 0;

  virtual std::vector<Param<T>*> parameters() { return {}; }
  virtual std::vector<NamedBuffer<T>> buffers() { return {}; }
};

enum class Init { he_uniform, xavier_uniform };

template <typename T>
class Conv2d final : public Layer<T> {
 public:
  explicit Conv2d(const ConvSpec& spec);

  std::string kind() const override { return "conv2d"; }
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out) override;
  std::vector<Param<T>*> parameters() override { return {&weight_, &bias_}; }

  void initialize(Rng& rng, Init init);

  const ConvSpec& spec() const noexcept { return spec_; }
  Param<T>& weight() noexcept { return weight_; }
  Param<T>& bias() noexcept { return bias_; }

 private:
  ConvSpec spec_;
  Param<T> weight_;
  Param<T> bias_;
  BasicTensor<T> input_;
};

/// Transposed convolution, defined as the adjoint of conv2d's forward map.
/// Weight layout is [in_channels, out_channels, k, k], i.e. the weight of the
/// conv2d (out_channels -> in_channels) whose adjoint this layer applies.
template <typename T>
class ConvTranspose2d final : public Layer<T> {
 public:
  explicit ConvTranspose2d(const ConvSpec& spec);

  std::string kind() const override { return "conv_transpose2d"; }
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out) override;
  std::vector<Param<T>*> parameters() override { return {&weight_, &bias_}; }

  void initialize(Rng& rng, Init init);

  const ConvSpec& spec() const noexcept { return spec_; }
  Param<T>& weight() noexcept { return weight_; }
  Param<T>& bias() noexcept { return bias_; }

 private:
  ConvSpec spec_;
  Param<T> weight_;
  Param<T> bias_;
  BasicTensor<T> input_;
};

template <typename T>
class BatchNorm2d final : public Layer<T> {
 public:
  static constexpr double kDefaultEps = 1e-5;
  static constexpr double kDefaultMomentum = 0.1;

  explicit BatchNorm2d(std::size_t channels, double eps = kDefaultEps, double momentum = kDefaultMomentum);

  std::string kind() const override { return "batchnorm2d"; }
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out) override;
  std::vector<Param<T>*> parameters() override { return {&gamma_, &beta_}; }
  std::vector<NamedBuffer<T>> buffers() override {
    return {{"running_mean", &running_mean_}, {"running_var", &running_var_}};
  }

  Param<T>& gamma() noexcept { return gamma_; }
  Param<T>& beta() noexcept { return beta_; }
  const BasicTensor<T>& running_mean() const noexcept { return running_mean_; }
  const BasicTensor<T>& running_var() const noexcept { return running_var_; }

 private:
  std::size_t channels_;
  double eps_;
  double momentum_;
  Param<T> gamma_;
  Param<T> beta_;
  BasicTensor<T> running_mean_;
  BasicTensor<T> running_var_;
  // forward cache
  BasicTensor<T> xhat_;
  std::vector<double> inv_std_;
  bool batch_stats_ = true;
};

template <typename T>
class Relu final : public Layer<T> {
 public:
  std::string kind() const override { return "relu"; }
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out) override;

 private:
  BasicTensor<T> input_;
};

/// Output is clamped into the open interval (0, 1) at the precision of T.
template <typename T>
class Sigmoid final : public Layer<T> {
 public:
  std::string kind() const override { return "sigmoid"; }
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out) override;

 private:
  BasicTensor<T> output_;
};

// Softmax across axis 1 of [N,C,H,W].
template <typename T>
class SoftmaxChannel final : public Layer<T> {
 public:
  std::string kind() const override { return "softmax_channel"; }
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out) override;

 private:
  BasicTensor<T> output_;
};

// 2x2 window, stride 2. Ties route the gradient to the first maximum in
// row-major order.
template <typename T>
class MaxPool2d final : public Layer<T> {
 public:
  std::string kind() const override { return "maxpool2d"; }
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out) override;

 private:
  Shape input_shape_;
  std::vector<std::size_t> argmax_;
};

// [N,C,H,W] -> [N,C,1,1] spatial mean.
template <typename T>
class GlobalAvgPool final : public Layer<T> {
 public:
  std::string kind() const override { return "global_avg_pool"; }
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out) override;

 private:
  Shape input_shape_;
};

/// Ordered stack of named layers.
template <typename T>
class Sequential {
 public:
  Layer<T>& add(std::string name, std::unique_ptr<Layer<T>> layer) {
    layers_.push_back({std::move(name), std::move(layer)});
    return *layers_.back().layer;
  }

  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) {
    BasicTensor<T> h = x;
    for (auto& entry : layers_) h = entry.layer->forward(h, mode);
    return h;
  }

  BasicTensor<T> backward(const BasicTensor<T>& grad_out) {
    BasicTensor<T> g = grad_out;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = it->layer->backward(g);
    return g;
  }

  void append_parameters(const std::string& prefix, std::vector<NamedParam<T>>& out) {
    for (auto& entry : layers_) {
      for (Param<T>* p : entry.layer->parameters()) out.push_back({prefix + entry.name + "." + p->name, p});
    }
  }

  void append_buffers(const std::string& prefix, std::vector<NamedBuffer<T>>& out) {
    for (auto& entry : layers_) {
      for (auto& b : entry.layer->buffers()) out.push_back({prefix + entry.name + "." + b.name, b.buffer});
    }
  }

  std::size_t size() const noexcept { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_.at(i).layer; }
  const std::string& name(std::size_t i) const { return layers_.at(i).name; }

 private:
  struct Entry {
    std::string name;
    std::unique_ptr<Layer<T>> layer;
  };
  std::vector<Entry> layers_;
};

}  // namespace adverseg
