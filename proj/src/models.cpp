#include "adverseg/models.hpp"

namespace adverseg {

namespace {

ConvSpec same_conv(std::size_t in, std::size_t out) { return ConvSpec{in, out, 3, 1, 1}; }
ConvSpec upsample(std::size_t in, std::size_t out) { return ConvSpec{in, out, 2, 2, 0}; }
ConvSpec downsample(std::size_t in, std::size_t out) { return ConvSpec{in, out, 3, 2, 1}; }
ConvSpec pointwise(std::size_t in, std::size_t out) { return ConvSpec{in, out, 1, 1, 0}; }

const NetConfig& validated(const NetConfig& cfg) {
  cfg.validate();
  return cfg;
}

template <typename T>
void collect(const std::string& prefix, Layer<T>& layer, std::vector<NamedParam<T>>& out) {
  for (Param<T>* p : layer.parameters()) out.push_back({prefix + "." + p->name, p});
}

template <typename T>
void collect_buffers(const std::string& prefix, Layer<T>& layer, std::vector<NamedBuffer<T>>& out) {
  for (auto& b : layer.buffers()) out.push_back({prefix + "." + b.name, b.buffer});
}

}  // namespace

void NetConfig::validate() const {
  if (in_channels == 0) throw ConfigError("in_channels must be positive");
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2 (background + foreground)");
  if (encoder_channels.empty()) throw ConfigError("encoder_channels must have at least one level");
  if (disc_channels.empty()) throw ConfigError("disc_channels must have at least one block");
  for (std::size_t c : encoder_channels) {
    if (c == 0) throw ConfigError("encoder_channels entries must be positive");
  }
  for (std::size_t c : disc_channels) {
    if (c == 0) throw ConfigError("disc_channels entries must be positive");
  }
  if (depth() > 16) throw ConfigError("encoder depth above 16 is not supported");
}

template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 4 || b.rank() != 4 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw ShapeError("concat_channels: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), plane = a.dim(2) * a.dim(3);
  BasicTensor<T> out({n, ca + cb, a.dim(2), a.dim(3)}, T{0});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.data().data() + i * ca * plane, ca * plane, out.data().data() + i * (ca + cb) * plane);
    std::copy_n(b.data().data() + i * cb * plane, cb * plane, out.data().data() + (i * (ca + cb) + ca) * plane);
  }
  return out;
}

template <typename T>
BasicTensor<T> leading_channels(const BasicTensor<T>& x, std::size_t channels) {
  if (x.rank() != 4 || channels == 0 || channels > x.dim(1)) {
    throw ShapeError("leading_channels: cannot take " + std::to_string(channels) + " channels of " + shape_str(x.shape()));
  }
  if (channels == x.dim(1)) return x;
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  BasicTensor<T> out({n, channels, x.dim(2), x.dim(3)}, T{0});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(x.data().data() + i * c * plane, channels * plane, out.data().data() + i * channels * plane);
  }
  return out;
}

// ---- Generator ------------------------------------------------------------

template <typename T>
Generator<T>::Generator(const NetConfig& cfg, Rng& rng)
    : cfg_(validated(cfg)),
      bottleneck_conv_(same_conv(cfg_.encoder_channels.back(), cfg_.encoder_channels.back())),
      bottleneck_bn_(cfg_.encoder_channels.back()),
      head_(pointwise(cfg_.encoder_channels.front(), cfg_.num_classes)) {
  const auto& widths = cfg_.encoder_channels;
  std::size_t in = cfg_.in_channels;
  for (std::size_t w : widths) {
    encoder_.push_back(EncoderLevel{Conv2d<T>(same_conv(in, w)), BatchNorm2d<T>(w), Relu<T>{}, MaxPool2d<T>{}});
    in = w;
  }
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const std::size_t from = i + 1 < widths.size() ? widths[i + 1] : widths.back();
    decoder_.push_back(DecoderLevel{ConvTranspose2d<T>(upsample(from, widths[i])), BatchNorm2d<T>(widths[i]), Relu<T>{}});
  }
  // Initialization order mirrors forward order.
  for (auto& level : encoder_) level.conv.initialize(rng, Init::he_uniform);
  bottleneck_conv_.initialize(rng, Init::he_uniform);
  for (std::size_t i = decoder_.size(); i-- > 0;) decoder_[i].up.initialize(rng, Init::he_uniform);
  head_.initialize(rng, Init::xavier_uniform);
}

template <typename T>
BasicTensor<T> Generator<T>::forward(const BasicTensor<T>& image, Mode mode) {
  if (image.rank() != 4 || image.dim(1) != cfg_.in_channels) {
    throw ShapeError("generator: expected [N," + std::to_string(cfg_.in_channels) + ",H,W] input, got " +
                     shape_str(image.shape()));
  }
  const std::size_t multiple = cfg_.spatial_multiple();
  if (image.dim(2) % multiple != 0 || image.dim(3) % multiple != 0) {
    throw ShapeError("generator: spatial size " + std::to_string(image.dim(2)) + "x" + std::to_string(image.dim(3)) +
                     " is not divisible by 2^depth = " + std::to_string(multiple));
  }
  std::vector<BasicTensor<T>> skips;
  BasicTensor<T> h = image;
  for (auto& level : encoder_) {
    h = level.relu.forward(level.bn.forward(level.conv.forward(h, mode), mode), mode);
    if (cfg_.skip_connections) skips.push_back(h);
    h = level.pool.forward(h, mode);
  }
  h = bottleneck_relu_.forward(bottleneck_bn_.forward(bottleneck_conv_.forward(h, mode), mode), mode);
  for (std::size_t i = decoder_.size(); i-- > 0;) {
    auto& level = decoder_[i];
    h = level.up.forward(h, mode);
    if (cfg_.skip_connections) accumulate(h, skips[i]);
    h = level.relu.forward(level.bn.forward(h, mode), mode);
  }
  h = head_.forward(h, mode);
  return cfg_.head == HeadType::softmax ? softmax_.forward(h, mode) : sigmoid_.forward(h, mode);
}

template <typename T>
BasicTensor<T> Generator<T>::backward(const BasicTensor<T>& grad_prob) {
  BasicTensor<T> g = cfg_.head == HeadType::softmax ? softmax_.backward(grad_prob) : sigmoid_.backward(grad_prob);
  g = head_.backward(g);
  std::vector<BasicTensor<T>> skip_grads(decoder_.size());
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    auto& level = decoder_[i];
    g = level.bn.backward(level.relu.backward(g));
    if (cfg_.skip_connections) skip_grads[i] = g;
    g = level.up.backward(g);
  }
  g = bottleneck_conv_.backward(bottleneck_bn_.backward(bottleneck_relu_.backward(g)));
  for (std::size_t i = encoder_.size(); i-- > 0;) {
    auto& level = encoder_[i];
    g = level.pool.backward(g);
    if (cfg_.skip_connections) accumulate(g, skip_grads[i]);
    g = level.conv.backward(level.bn.backward(level.relu.backward(g)));
  }
  return g;
}

template <typename T>
std::vector<NamedParam<T>> Generator<T>::parameters() {
  std::vector<NamedParam<T>> out;
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    const std::string prefix = "enc" + std::to_string(i);
    collect(prefix + ".conv", encoder_[i].conv, out);
    collect(prefix + ".bn", encoder_[i].bn, out);
  }
  collect("bottleneck.conv", bottleneck_conv_, out);
  collect("bottleneck.bn", bottleneck_bn_, out);
  for (std::size_t i = decoder_.size(); i-- > 0;) {
    const std::string prefix = "dec" + std::to_string(i);
    collect(prefix + ".up", decoder_[i].up, out);
    collect(prefix + ".bn", decoder_[i].bn, out);
  }
  collect("head", head_, out);
  return out;
}

template <typename T>
std::vector<NamedBuffer<T>> Generator<T>::buffers() {
  std::vector<NamedBuffer<T>> out;
  for (std::size_t i = 0; i < encoder_.size(); ++i) collect_buffers("enc" + std::to_string(i) + ".bn", encoder_[i].bn, out);
  collect_buffers("bottleneck.bn", bottleneck_bn_, out);
  for (std::size_t i = decoder_.size(); i-- > 0;) collect_buffers("dec" + std::to_string(i) + ".bn", decoder_[i].bn, out);
  return out;
}

// ---- Discriminator --------------------------------------------------------

template <typename T>
Discriminator<T>::Discriminator(const NetConfig& cfg, Rng& rng)
    : cfg_(validated(cfg)), head_(pointwise(cfg_.disc_channels.back(), 1)) {
  std::size_t in = cfg_.disc_input_channels();
  for (std::size_t w : cfg_.disc_channels) {
    blocks_.push_back(Block{Conv2d<T>(downsample(in, w)), BatchNorm2d<T>(w), Relu<T>{}});
    in = w;
  }
  for (auto& block : blocks_) block.conv.initialize(rng, Init::he_uniform);
  head_.initialize(rng, Init::xavier_uniform);
}

template <typename T>
BasicTensor<T> Discriminator<T>::forward(const BasicTensor<T>& seg_map, Mode mode, const BasicTensor<T>* image) {
  if (seg_map.rank() != 4 || seg_map.dim(1) != cfg_.num_classes) {
    throw ShapeError("discriminator: expected [N," + std::to_string(cfg_.num_classes) + ",H,W] map, got " +
                     shape_str(seg_map.shape()));
  }
  BasicTensor<T> h;
  if (cfg_.conditional_disc) {
    if (image == nullptr) throw ShapeError("discriminator: conditional mode requires the image");
    h = concat_channels(seg_map, *image);
  } else {
    h = seg_map;
  }
  for (auto& block : blocks_) h = block.relu.forward(block.bn.forward(block.conv.forward(h, mode), mode), mode);
  h = head_.forward(pool_.forward(h, mode), mode);
  head_shape_ = h.shape();
  return sigmoid_.forward(h, mode).reshape({seg_map.dim(0), 1});
}

template <typename T>
BasicTensor<T> Discriminator<T>::backward(const BasicTensor<T>& grad_scores) {
  if (head_shape_.empty()) throw Error("discriminator: backward called without a matching forward");
  BasicTensor<T> g = sigmoid_.backward(grad_scores.reshape(head_shape_));
  g = pool_.backward(head_.backward(g));
  for (std::size_t i = blocks_.size(); i-- > 0;) {
    auto& block = blocks_[i];
    g = block.conv.backward(block.bn.backward(block.relu.backward(g)));
  }
  return leading_channels(g, cfg_.num_classes);
}

template <typename T>
std::vector<NamedParam<T>> Discriminator<T>::parameters() {
  std::vector<NamedParam<T>> out;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string prefix = "block" + std::to_string(i);
    collect(prefix + ".conv", blocks_[i].conv, out);
    collect(prefix + ".bn", blocks_[i].bn, out);
  }
  collect("head", head_, out);
  return out;
}

template <typename T>
std::vector<NamedBuffer<T>> Discriminator<T>::buffers() {
  std::vector<NamedBuffer<T>> out;
  for (std::size_t i = 0; i < blocks_.size(); ++i) collect_buffers("block" + std::to_string(i) + ".bn", blocks_[i].bn, out);
  return out;
}

template class Generator<float>;
template class Generator<double>;
template class Discriminator<float>;
template class Discriminator<double>;
template BasicTensor<float> concat_channels(const BasicTensor<float>&, const BasicTensor<float>&);
template BasicTensor<double> concat_channels(const BasicTensor<double>&, const BasicTensor<double>&);
template BasicTensor<float> leading_channels(const BasicTensor<float>&, std::size_t);
template BasicTensor<double> leading_channels(const BasicTensor<double>&, std::size_t);

}  // namespace adverseg
