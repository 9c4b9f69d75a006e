#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "adverseg/layers.hpp"

namespace adverseg {

enum class HeadType { sigmoid_per_class, softmax };

struct NetConfig {
  std::size_t in_channels = 1;
  std::size_t num_classes = 2;
  std::vector<std::size_t> encoder_channels{16, 32, 64};
  HeadType head = HeadType::sigmoid_per_class;
  std::vector<std::size_t> disc_channels{16, 32, 64, 64};
  bool skip_connections = false;
  bool conditional_disc = false;

  // Throws ConfigError for empty channel lists, zero widths, or fewer than two classes.
  void validate() const;

  std::size_t depth() const noexcept { return encoder_channels.size(); }
  // Image height and width must be multiples of this.
  std::size_t spatial_multiple() const noexcept { return std::size_t{1} << depth(); }
  std::size_t disc_input_channels() const noexcept {
    return num_classes + (conditional_disc ? in_channels : 0);
  }

  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

template <typename T>
std::size_t count_parameters(const std::vector<NamedParam<T>>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.param->value.size();
  return n;
}

/// Encoder-decoder segmentation network.
///
/// Encoder level i: conv3x3 -> batchnorm -> relu -> maxpool2x2.
/// Bottleneck: conv3x3 -> batchnorm -> relu.
/// Decoder level i (deepest first): conv_transpose k2 s2 -> batchnorm -> relu,
/// halving back to encoder level i's resolution and width. With skip
/// connections the matching encoder activation is added before the batchnorm.
/// Head: 1x1 conv to num_classes followed by sigmoid or channel softmax.
template <typename T>
class Generator {
 public:
  Generator(const NetConfig& cfg, Rng& rng);

  // image [N, in_channels, H, W] -> probabilities [N, num_classes, H, W].
  BasicTensor<T> forward(const BasicTensor<T>& image, Mode mode);
  // Backpropagates d loss / d probabilities; returns the gradient w.r.t. the image.
  BasicTensor<T> backward(const BasicTensor<T>& grad_prob);

  // Stable order: encoder levels, bottleneck, decoder levels (deepest first), head.
  std::vector<NamedParam<T>> parameters();
  std::vector<NamedBuffer<T>> buffers();
  std::size_t param_count() { return count_parameters(parameters()); }

  const NetConfig& config() const noexcept { return cfg_; }
  std::size_t pooling_layers() const noexcept { return encoder_.size(); }
  std::size_t transposed_conv_layers() const noexcept { return decoder_.size(); }

 private:
  struct EncoderLevel {
    Conv2d<T> conv;
    BatchNorm2d<T> bn;
    Relu<T> relu;
    MaxPool2d<T> pool;
  };
  struct DecoderLevel {
    ConvTranspose2d<T> up;
    BatchNorm2d<T> bn;
    Relu<T> relu;
  };

  NetConfig cfg_;
  std::vector<EncoderLevel> encoder_;
  Conv2d<T> bottleneck_conv_;
  BatchNorm2d<T> bottleneck_bn_;
  Relu<T> bottleneck_relu_;
  std::vector<DecoderLevel> decoder_;  // decoder_[i] restores encoder level i
  Conv2d<T> head_;
  Sigmoid<T> sigmoid_;
  SoftmaxChannel<T> softmax_;
};

/// Convolutional critic: stride-2 conv3x3 -> batchnorm -> relu blocks, global
/// average pool, 1x1 conv head, sigmoid. Emits one score per map, shape [N, 1].
template <typename T>
class Discriminator {
 public:
  Discriminator(const NetConfig& cfg, Rng& rng);

  // seg_map [N, num_classes, H, W]; `image` is required iff conditional_disc.
  BasicTensor<T> forward(const BasicTensor<T>& seg_map, Mode mode, const BasicTensor<T>* image = nullptr);
  // Takes d loss / d scores [N, 1]; returns the gradient w.r.t. the segmentation map only.
  BasicTensor<T> backward(const BasicTensor<T>& grad_scores);

  std::vector<NamedParam<T>> parameters();
  std::vector<NamedBuffer<T>> buffers();
  std::size_t param_count() { return count_parameters(parameters()); }

  const NetConfig& config() const noexcept { return cfg_; }

 private:
  struct Block {
    Conv2d<T> conv;
    BatchNorm2d<T> bn;
    Relu<T> relu;
  };

  NetConfig cfg_;
  std::vector<Block> blocks_;
  GlobalAvgPool<T> pool_;
  Conv2d<T> head_;
  Sigmoid<T> sigmoid_;
  Shape head_shape_;
};

// Concatenates two [N,*,H,W] tensors along the channel axis.
template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b);

// First `channels` channels of an [N,C,H,W] tensor.
template <typename T>
BasicTensor<T> leading_channels(const BasicTensor<T>& x, std::size_t channels);

}  // namespace adverseg
