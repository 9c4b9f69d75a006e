#include "adverseg/layers.hpp"

#include <Eigen/Core>
#include <cmath>
#include <limits>

namespace adverseg {

namespace {

using Index = std::ptrdiff_t;

// Output positions o in [lo, hi) for which o * stride + tap - pad lands in [0, in).
std::pair<Index, Index> valid_range(Index tap, Index pad, Index stride, Index in, Index out) {
  const Index offset = tap - pad;
  Index lo = 0;
  if (offset < 0) lo = (-offset + stride - 1) / stride;
  const Index last = in - 1 - offset;
  if (last < 0) return {0, 0};
  Index hi = last / stride + 1;
  if (hi > out) hi = out;
  if (lo > hi) lo = hi;
  return {lo, hi};
}

template <typename T>
void require_nchw(const BasicTensor<T>& x, const char* what) {
  if (x.rank() != 4) throw ShapeError(std::string(what) + " expects [N,C,H,W], got " + shape_str(x.shape()));
}

template <typename T>
void require_channels(const BasicTensor<T>& x, std::size_t channels, const char* what) {
  require_nchw(x, what);
  if (x.dim(1) != channels) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(channels) + " input channels, got " +
                     shape_str(x.shape()));
  }
}

template <typename T>
void require_cache(const BasicTensor<T>& cache, const char* what) {
  if (cache.empty()) throw Error(std::string(what) + ": backward called without a matching forward");
}

template <typename T>
void uniform_fill(BasicTensor<T>& t, Rng& rng, double bound) {
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
}

}  // namespace

std::size_t ConvSpec::conv_output_size(std::size_t in) const {
  if (stride == 0 || kernel_size == 0) throw ShapeError("conv: kernel size and stride must be positive");
  if (in + 2 * padding < kernel_size) {
    throw ShapeError("conv: input size " + std::to_string(in) + " smaller than kernel " +
                     std::to_string(kernel_size));
  }
  return (in + 2 * padding - kernel_size) / stride + 1;
}

std::size_t ConvSpec::transpose_output_size(std::size_t in) const {
  if (stride == 0 || kernel_size == 0) throw ShapeError("conv: kernel size and stride must be positive");
  const Index out = (static_cast<Index>(in) - 1) * static_cast<Index>(stride) - 2 * static_cast<Index>(padding) +
                    static_cast<Index>(kernel_size);
  if (out < 1) throw ShapeError("conv_transpose: non-positive output size");
  return static_cast<std::size_t>(out);
}

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

struct Geometry {
  std::size_t cin, h, w, k, ho, wo;
  Index stride, pad;

  std::size_t rows() const noexcept { return cin * k * k; }
  std::size_t cols() const noexcept { return ho * wo; }
  bool identity() const noexcept { return k == 1 && stride == 1 && pad == 0; }
};

// col[(c*k + kh)*k + kw][oh*wo + ow] = x[c][oh*s + kh - p][ow*s + kw - p], zero outside.
template <typename T>
void im2col(const T* x, const Geometry& g, T* col) {
  std::fill(col, col + g.rows() * g.cols(), T{0});
  for (std::size_t c = 0; c < g.cin; ++c) {
    const T* xp = x + c * g.h * g.w;
    for (std::size_t kh = 0; kh < g.k; ++kh) {
      const auto [oh_lo, oh_hi] = valid_range(static_cast<Index>(kh), g.pad, g.stride, g.h, g.ho);
      for (std::size_t kw = 0; kw < g.k; ++kw) {
        const auto [ow_lo, ow_hi] = valid_range(static_cast<Index>(kw), g.pad, g.stride, g.w, g.wo);
        T* row = col + ((c * g.k + kh) * g.k + kw) * g.cols();
        const Index shift = static_cast<Index>(kw) - g.pad;
        for (Index oh = oh_lo; oh < oh_hi; ++oh) {
          const T* xrow = xp + (oh * g.stride + static_cast<Index>(kh) - g.pad) * static_cast<Index>(g.w);
          T* crow = row + oh * static_cast<Index>(g.wo);
          for (Index ow = ow_lo; ow < ow_hi; ++ow) crow[ow] = xrow[ow * g.stride + shift];
        }
      }
    }
  }
}

// Adjoint of im2col: scatters col back onto x, accumulating.
template <typename T>
void col2im(const T* col, const Geometry& g, T* x) {
  for (std::size_t c = 0; c < g.cin; ++c) {
    T* xp = x + c * g.h * g.w;
    for (std::size_t kh = 0; kh < g.k; ++kh) {
      const auto [oh_lo, oh_hi] = valid_range(static_cast<Index>(kh), g.pad, g.stride, g.h, g.ho);
      for (std::size_t kw = 0; kw < g.k; ++kw) {
        const auto [ow_lo, ow_hi] = valid_range(static_cast<Index>(kw), g.pad, g.stride, g.w, g.wo);
        const T* row = col + ((c * g.k + kh) * g.k + kw) * g.cols();
        const Index shift = static_cast<Index>(kw) - g.pad;
        for (Index oh = oh_lo; oh < oh_hi; ++oh) {
          T* xrow = xp + (oh * g.stride + static_cast<Index>(kh) - g.pad) * static_cast<Index>(g.w);
          const T* crow = row + oh * static_cast<Index>(g.wo);
          for (Index ow = ow_lo; ow < ow_hi; ++ow) xrow[ow * g.stride + shift] += crow[ow];
        }
      }
    }
  }
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& x, const BasicTensor<T>& w, std::size_t stride,
                              std::size_t pad) {
  require_nchw(x, "conv2d");
  if (w.rank() != 4 || w.dim(1) != x.dim(1) || w.dim(2) != w.dim(3)) {
    throw ShapeError("conv2d: weight " + shape_str(w.shape()) + " incompatible with input " + shape_str(x.shape()));
  }
  const std::size_t n_batch = x.dim(0), cin = x.dim(1), cout = w.dim(0), k = w.dim(2);
  const ConvSpec spec{cin, cout, k, stride, pad};
  const Geometry g{cin, x.dim(2), x.dim(3), k, spec.conv_output_size(x.dim(2)), spec.conv_output_size(x.dim(3)),
                   static_cast<Index>(stride), static_cast<Index>(pad)};
  BasicTensor<T> y({n_batch, cout, g.ho, g.wo}, T{0});
  const ConstMatMap<T> wm(w.data().data(), static_cast<Index>(cout), static_cast<Index>(g.rows()));
  std::vector<T> col(g.identity() ? 0 : g.rows() * g.cols());
  for (std::size_t n = 0; n < n_batch; ++n) {
    const T* xn = &x.at(n, 0, 0, 0);
    if (!g.identity()) im2col(xn, g, col.data());
    const ConstMatMap<T> cm(g.identity() ? xn : col.data(), static_cast<Index>(g.rows()), static_cast<Index>(g.cols()));
    MatMap<T> ym(&y.at(n, 0, 0, 0), static_cast<Index>(cout), static_cast<Index>(g.cols()));
    ym.noalias() = wm * cm;
  }
  return y;
}

template <typename T>
BasicTensor<T> conv2d_backward_input(const BasicTensor<T>& grad_out, const BasicTensor<T>& w,
                                     std::size_t in_h, std::size_t in_w, std::size_t stride,
                                     std::size_t pad) {
  require_nchw(grad_out, "conv2d_backward_input");
  if (w.rank() != 4 || w.dim(0) != grad_out.dim(1) || w.dim(2) != w.dim(3)) {
    throw ShapeError("conv2d_backward_input: weight " + shape_str(w.shape()) + " incompatible with gradient " +
                     shape_str(grad_out.shape()));
  }
  const std::size_t n_batch = grad_out.dim(0), cout = w.dim(0), cin = w.dim(1), k = w.dim(2);
  const std::size_t ho = grad_out.dim(2), wo = grad_out.dim(3);
  const ConvSpec spec{cin, cout, k, stride, pad};
  if (spec.conv_output_size(in_h) != ho || spec.conv_output_size(in_w) != wo) {
    throw ShapeError("conv2d_backward_input: gradient spatial size does not match input size");
  }
  const Geometry g{cin, in_h, in_w, k, ho, wo, static_cast<Index>(stride), static_cast<Index>(pad)};
  BasicTensor<T> gx({n_batch, cin, in_h, in_w}, T{0});
  const ConstMatMap<T> wm(w.data().data(), static_cast<Index>(cout), static_cast<Index>(g.rows()));
  RowMatrix<T> col(static_cast<Index>(g.rows()), static_cast<Index>(g.cols()));
  for (std::size_t n = 0; n < n_batch; ++n) {
    const ConstMatMap<T> gm(&grad_out.at(n, 0, 0, 0), static_cast<Index>(cout), static_cast<Index>(g.cols()));
    if (g.identity()) {
      MatMap<T> gxm(&gx.at(n, 0, 0, 0), static_cast<Index>(g.rows()), static_cast<Index>(g.cols()));
      gxm.noalias() = wm.transpose() * gm;
    } else {
      col.noalias() = wm.transpose() * gm;
      col2im(col.data(), g, &gx.at(n, 0, 0, 0));
    }
  }
  return gx;
}

template <typename T>
void conv2d_backward_weight(const BasicTensor<T>& x, const BasicTensor<T>& grad_out, BasicTensor<T>& grad_w,
                            std::size_t stride, std::size_t pad) {
  require_nchw(x, "conv2d_backward_weight");
  require_nchw(grad_out, "conv2d_backward_weight");
  const std::size_t n_batch = x.dim(0), cin = x.dim(1);
  const std::size_t cout = grad_out.dim(1), ho = grad_out.dim(2), wo = grad_out.dim(3);
  if (grad_w.rank() != 4 || grad_w.dim(0) != cout || grad_w.dim(1) != cin || grad_out.dim(0) != n_batch) {
    throw ShapeError("conv2d_backward_weight: inconsistent shapes");
  }
  const std::size_t k = grad_w.dim(2);
  const ConvSpec spec{cin, cout, k, stride, pad};
  if (spec.conv_output_size(x.dim(2)) != ho || spec.conv_output_size(x.dim(3)) != wo) {
    throw ShapeError("conv2d_backward_weight: gradient spatial size does not match input size");
  }
  const Geometry g{cin, x.dim(2), x.dim(3), k, ho, wo, static_cast<Index>(stride), static_cast<Index>(pad)};
  MatMap<T> gwm(grad_w.data().data(), static_cast<Index>(cout), static_cast<Index>(g.rows()));
  std::vector<T> col(g.identity() ? 0 : g.rows() * g.cols());
  for (std::size_t n = 0; n < n_batch; ++n) {
    const T* xn = &x.at(n, 0, 0, 0);
    if (!g.identity()) im2col(xn, g, col.data());
    const ConstMatMap<T> cm(g.identity() ? xn : col.data(), static_cast<Index>(g.rows()), static_cast<Index>(g.cols()));
    const ConstMatMap<T> gm(&grad_out.at(n, 0, 0, 0), static_cast<Index>(cout), static_cast<Index>(g.cols()));
    gwm.noalias() += gm * cm.transpose();
  }
}

// ---- Conv2d ---------------------------------------------------------------

template <typename T>
Conv2d<T>::Conv2d(const ConvSpec& spec)
    : spec_(spec),
      weight_("weight", BasicTensor<T>({spec.out_channels, spec.in_channels, spec.kernel_size, spec.kernel_size}, T{0})),
      bias_("bias", BasicTensor<T>({spec.out_channels}, T{0})) {
  if (spec.stride == 0) throw ConfigError("conv2d: stride must be positive");
}

template <typename T>
void Conv2d<T>::initialize(Rng& rng, Init init) {
  const double fan_in = static_cast<double>(spec_.in_channels * spec_.kernel_size * spec_.kernel_size);
  const double fan_out = static_cast<double>(spec_.out_channels * spec_.kernel_size * spec_.kernel_size);
  const double bound = init == Init::he_uniform ? std::sqrt(6.0 / fan_in) : std::sqrt(6.0 / (fan_in + fan_out));
  uniform_fill(weight_.value, rng, bound);
  bias_.value.fill(T{0});
}

template <typename T>
BasicTensor<T> Conv2d<T>::forward(const BasicTensor<T>& x, Mode) {
  require_channels(x, spec_.in_channels, "conv2d");
  input_ = x;
  BasicTensor<T> y = conv2d_forward(x, weight_.value, spec_.stride, spec_.padding);
  const std::size_t plane = y.dim(2) * y.dim(3);
  for (std::size_t n = 0; n < y.dim(0); ++n) {
    for (std::size_t c = 0; c < y.dim(1); ++c) {
      T* yp = &y.at(n, c, 0, 0);
      const T b = bias_.value[c];
      for (std::size_t i = 0; i < plane; ++i) yp[i] += b;
    }
  }
  return y;
}

template <typename T>
BasicTensor<T> Conv2d<T>::backward(const BasicTensor<T>& grad_out) {
  require_cache(input_, "conv2d");
  require_channels(grad_out, spec_.out_channels, "conv2d backward");
  conv2d_backward_weight(input_, grad_out, weight_.grad, spec_.stride, spec_.padding);
  const std::size_t plane = grad_out.dim(2) * grad_out.dim(3);
  for (std::size_t c = 0; c < spec_.out_channels; ++c) {
    double total = 0.0;
    for (std::size_t n = 0; n < grad_out.dim(0); ++n) {
      const T* gp = &grad_out.at(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) total += static_cast<double>(gp[i]);
    }
    bias_.grad[c] += static_cast<T>(total);
  }
  return conv2d_backward_input(grad_out, weight_.value, input_.dim(2), input_.dim(3), spec_.stride,
                               spec_.padding);
}

// ---- ConvTranspose2d ------------------------------------------------------

template <typename T>
ConvTranspose2d<T>::ConvTranspose2d(const ConvSpec& spec)
    : spec_(spec),
      weight_("weight", BasicTensor<T>({spec.in_channels, spec.out_channels, spec.kernel_size, spec.kernel_size}, T{0})),
      bias_("bias", BasicTensor<T>({spec.out_channels}, T{0})) {
  if (spec.stride == 0) throw ConfigError("conv_transpose2d: stride must be positive");
}

template <typename T>
void ConvTranspose2d<T>::initialize(Rng& rng, Init init) {
  // Each output pixel sees ceil(k/s)^2 taps per input channel.
  const std::size_t taps = (spec_.kernel_size + spec_.stride - 1) / spec_.stride;
  const double fan_in = static_cast<double>(spec_.in_channels * taps * taps);
  const double fan_out = static_cast<double>(spec_.out_channels * taps * taps);
  const double bound = init == Init::he_uniform ? std::sqrt(6.0 / fan_in) : std::sqrt(6.0 / (fan_in + fan_out));
  uniform_fill(weight_.value, rng, bound);
  bias_.value.fill(T{0});
}

template <typename T>
BasicTensor<T> ConvTranspose2d<T>::forward(const BasicTensor<T>& x, Mode) {
  require_channels(x, spec_.in_channels, "conv_transpose2d");
  input_ = x;
  const std::size_t ho = spec_.transpose_output_size(x.dim(2));
  const std::size_t wo = spec_.transpose_output_size(x.dim(3));
  BasicTensor<T> y = conv2d_backward_input(x, weight_.value, ho, wo, spec_.stride, spec_.padding);
  const std::size_t plane = ho * wo;
  for (std::size_t n = 0; n < y.dim(0); ++n) {
    for (std::size_t c = 0; c < y.dim(1); ++c) {
      T* yp = &y.at(n, c, 0, 0);
      const T b = bias_.value[c];
      for (std::size_t i = 0; i < plane; ++i) yp[i] += b;
    }
  }
  return y;
}

template <typename T>
BasicTensor<T> ConvTranspose2d<T>::backward(const BasicTensor<T>& grad_out) {
  require_cache(input_, "conv_transpose2d");
  require_channels(grad_out, spec_.out_channels, "conv_transpose2d backward");
  // The forward map is A_w^T x, so d<g, A_w^T x>/dw = d<A_w g, x>/dw.
  conv2d_backward_weight(grad_out, input_, weight_.grad, spec_.stride, spec_.padding);
  const std::size_t plane = grad_out.dim(2) * grad_out.dim(3);
  for (std::size_t c = 0; c < spec_.out_channels; ++c) {
    double total = 0.0;
    for (std::size_t n = 0; n < grad_out.dim(0); ++n) {
      const T* gp = &grad_out.at(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) total += static_cast<double>(gp[i]);
    }
    bias_.grad[c] += static_cast<T>(total);
  }
  return conv2d_forward(grad_out, weight_.value, spec_.stride, spec_.padding);
}

// ---- BatchNorm2d ----------------------------------------------------------

template <typename T>
BatchNorm2d<T>::BatchNorm2d(std::size_t channels, double eps, double momentum)
    : channels_(channels),
      eps_(eps),
      momentum_(momentum),
      gamma_("gamma", BasicTensor<T>({channels}, T{1})),
      beta_("beta", BasicTensor<T>({channels}, T{0})),
      running_mean_({channels}, T{0}),
      running_var_({channels}, T{1}) {}

template <typename T>
BasicTensor<T> BatchNorm2d<T>::forward(const BasicTensor<T>& x, Mode mode) {
  require_channels(x, channels_, "batchnorm2d");
  const std::size_t n_batch = x.dim(0), plane = x.dim(2) * x.dim(3);
  const std::size_t count = n_batch * plane;
  batch_stats_ = mode != Mode::eval;
  if (batch_stats_ && count < 2) {
    throw DegenerateBatchError("batchnorm2d: train mode needs N*H*W >= 2 per channel, got " +
                               std::to_string(count));
  }
  xhat_ = BasicTensor<T>(x.shape(), T{0});
  inv_std_.assign(channels_, 0.0);
  BasicTensor<T> y(x.shape(), T{0});
  for (std::size_t c = 0; c < channels_; ++c) {
    double mean = 0.0;
    double var = 0.0;
    if (batch_stats_) {
      for (std::size_t n = 0; n < n_batch; ++n) {
        const T* xp = &x.at(n, c, 0, 0);
        for (std::size_t i = 0; i < plane; ++i) mean += static_cast<double>(xp[i]);
      }
      mean /= static_cast<double>(count);
      for (std::size_t n = 0; n < n_batch; ++n) {
        const T* xp = &x.at(n, c, 0, 0);
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = static_cast<double>(xp[i]) - mean;
          var += d * d;
        }
      }
      var /= static_cast<double>(count);
      if (mode == Mode::train) {
        const double unbiased = var * static_cast<double>(count) / static_cast<double>(count - 1);
        running_mean_[c] = static_cast<T>((1.0 - momentum_) * static_cast<double>(running_mean_[c]) + momentum_ * mean);
        running_var_[c] = static_cast<T>((1.0 - momentum_) * static_cast<double>(running_var_[c]) + momentum_ * unbiased);
      }
    } else {
      mean = static_cast<double>(running_mean_[c]);
      var = static_cast<double>(running_var_[c]);
    }
    const double inv_std = 1.0 / std::sqrt(var + eps_);
    inv_std_[c] = inv_std;
    const T g = gamma_.value[c], b = beta_.value[c];
    for (std::size_t n = 0; n < n_batch; ++n) {
      const T* xp = &x.at(n, c, 0, 0);
      T* hp = &xhat_.at(n, c, 0, 0);
      T* yp = &y.at(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) {
        const T xh = static_cast<T>((static_cast<double>(xp[i]) - mean) * inv_std);
        hp[i] = xh;
        yp[i] = g * xh + b;
      }
    }
  }
  return y;
}

template <typename T>
BasicTensor<T> BatchNorm2d<T>::backward(const BasicTensor<T>& grad_out) {
  require_cache(xhat_, "batchnorm2d");
  check_same_shape(grad_out, xhat_, "batchnorm2d backward");
  const std::size_t n_batch = grad_out.dim(0), plane = grad_out.dim(2) * grad_out.dim(3);
  const double count = static_cast<double>(n_batch * plane);
  BasicTensor<T> gx(grad_out.shape(), T{0});
  for (std::size_t c = 0; c < channels_; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t n = 0; n < n_batch; ++n) {
      const T* gp = &grad_out.at(n, c, 0, 0);
      const T* hp = &xhat_.at(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) {
        sum_dy += static_cast<double>(gp[i]);
        sum_dy_xhat += static_cast<double>(gp[i]) * static_cast<double>(hp[i]);
      }
    }
    gamma_.grad[c] += static_cast<T>(sum_dy_xhat);
    beta_.grad[c] += static_cast<T>(sum_dy);
    const double g = static_cast<double>(gamma_.value[c]);
    const double inv_std = inv_std_[c];
    for (std::size_t n = 0; n < n_batch; ++n) {
      const T* gp = &grad_out.at(n, c, 0, 0);
      const T* hp = &xhat_.at(n, c, 0, 0);
      T* gxp = &gx.at(n, c, 0, 0);
      if (batch_stats_) {
        const double mean_dy = sum_dy / count;
        const double mean_dy_xhat = sum_dy_xhat / count;
        for (std::size_t i = 0; i < plane; ++i) {
          gxp[i] = static_cast<T>(g * inv_std *
                                  (static_cast<double>(gp[i]) - mean_dy - static_cast<double>(hp[i]) * mean_dy_xhat));
        }
      } else {
        for (std::size_t i = 0; i < plane; ++i) gxp[i] = static_cast<T>(g * inv_std * static_cast<double>(gp[i]));
      }
    }
  }
  return gx;
}

// ---- activations ----------------------------------------------------------

template <typename T>
BasicTensor<T> Relu<T>::forward(const BasicTensor<T>& x, Mode) {
  input_ = x;
  BasicTensor<T> y = x;
  for (auto& v : y.data()) v = v > T{0} ? v : T{0};
  return y;
}

template <typename T>
BasicTensor<T> Relu<T>::backward(const BasicTensor<T>& grad_out) {
  require_cache(input_, "relu");
  check_same_shape(grad_out, input_, "relu backward");
  BasicTensor<T> gx = grad_out;
  auto in = input_.data();
  auto g = gx.data();
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(in[i] > T{0})) g[i] = T{0};
  }
  return gx;
}

template <typename T>
BasicTensor<T> Sigmoid<T>::forward(const BasicTensor<T>& x, Mode) {
  constexpr T lo = std::numeric_limits<T>::min();
  constexpr T hi = T{1} - std::numeric_limits<T>::epsilon() / 2;
  BasicTensor<T> y = x;
  for (auto& v : y.data()) {
    T s;
    if (v >= T{0}) {
      s = T{1} / (T{1} + std::exp(-v));
    } else {
      const T e = std::exp(v);
      s = e / (T{1} + e);
    }
    v = std::clamp(s, lo, hi);
  }
  output_ = y;
  return y;
}

template <typename T>
BasicTensor<T> Sigmoid<T>::backward(const BasicTensor<T>& grad_out) {
  require_cache(output_, "sigmoid");
  check_same_shape(grad_out, output_, "sigmoid backward");
  BasicTensor<T> gx = grad_out;
  auto y = output_.data();
  auto g = gx.data();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= y[i] * (T{1} - y[i]);
  return gx;
}

template <typename T>
BasicTensor<T> SoftmaxChannel<T>::forward(const BasicTensor<T>& x, Mode) {
  require_nchw(x, "softmax_channel");
  const std::size_t n_batch = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
  BasicTensor<T> y(x.shape(), T{0});
  std::vector<double> e(channels);
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t i = 0; i < plane; ++i) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < channels; ++c) m = std::max(m, static_cast<double>(x[(n * channels + c) * plane + i]));
      double total = 0.0;
      for (std::size_t c = 0; c < channels; ++c) {
        e[c] = std::exp(static_cast<double>(x[(n * channels + c) * plane + i]) - m);
        total += e[c];
      }
      for (std::size_t c = 0; c < channels; ++c) y[(n * channels + c) * plane + i] = static_cast<T>(e[c] / total);
    }
  }
  output_ = y;
  return y;
}

template <typename T>
BasicTensor<T> SoftmaxChannel<T>::backward(const BasicTensor<T>& grad_out) {
  require_cache(output_, "softmax_channel");
  check_same_shape(grad_out, output_, "softmax_channel backward");
  const std::size_t n_batch = output_.dim(0), channels = output_.dim(1), plane = output_.dim(2) * output_.dim(3);
  BasicTensor<T> gx(grad_out.shape(), T{0});
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t i = 0; i < plane; ++i) {
      double inner = 0.0;
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t idx = (n * channels + c) * plane + i;
        inner += static_cast<double>(grad_out[idx]) * static_cast<double>(output_[idx]);
      }
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t idx = (n * channels + c) * plane + i;
        gx[idx] = static_cast<T>(static_cast<double>(output_[idx]) * (static_cast<double>(grad_out[idx]) - inner));
      }
    }
  }
  return gx;
}

// ---- pooling --------------------------------------------------------------

template <typename T>
BasicTensor<T> MaxPool2d<T>::forward(const BasicTensor<T>& x, Mode) {
  require_nchw(x, "maxpool2d");
  const std::size_t h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("maxpool2d: spatial dims must be even, got " + shape_str(x.shape()));
  }
  const std::size_t planes = x.dim(0) * x.dim(1), ho = h / 2, wo = w / 2;
  input_shape_ = x.shape();
  BasicTensor<T> y({x.dim(0), x.dim(1), ho, wo}, T{0});
  argmax_.assign(y.size(), 0);
  for (std::size_t p = 0; p < planes; ++p) {
    const std::size_t in_base = p * h * w;
    const std::size_t out_base = p * ho * wo;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        std::size_t best = in_base + (2 * oy) * w + 2 * ox;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = in_base + (2 * oy + dy) * w + 2 * ox + dx;
            if (x[idx] > x[best]) best = idx;
          }
        }
        y[out_base + oy * wo + ox] = x[best];
        argmax_[out_base + oy * wo + ox] = best;
      }
    }
  }
  return y;
}

template <typename T>
BasicTensor<T> MaxPool2d<T>::backward(const BasicTensor<T>& grad_out) {
  if (input_shape_.empty()) throw Error("maxpool2d: backward called without a matching forward");
  if (grad_out.size() != argmax_.size()) throw ShapeError("maxpool2d backward: gradient shape mismatch");
  BasicTensor<T> gx(input_shape_, T{0});
  for (std::size_t i = 0; i < argmax_.size(); ++i) gx[argmax_[i]] += grad_out[i];
  return gx;
}

template <typename T>
BasicTensor<T> GlobalAvgPool<T>::forward(const BasicTensor<T>& x, Mode) {
  require_nchw(x, "global_avg_pool");
  input_shape_ = x.shape();
  const std::size_t planes = x.dim(0) * x.dim(1), plane = x.dim(2) * x.dim(3);
  BasicTensor<T> y({x.dim(0), x.dim(1), 1, 1}, T{0});
  for (std::size_t p = 0; p < planes; ++p) {
    double total = 0.0;
    for (std::size_t i = 0; i < plane; ++i) total += static_cast<double>(x[p * plane + i]);
    y[p] = static_cast<T>(total / static_cast<double>(plane));
  }
  return y;
}

template <typename T>
BasicTensor<T> GlobalAvgPool<T>::backward(const BasicTensor<T>& grad_out) {
  if (input_shape_.empty()) throw Error("global_avg_pool: backward called without a matching forward");
  const std::size_t planes = input_shape_[0] * input_shape_[1], plane = input_shape_[2] * input_shape_[3];
  if (grad_out.size() != planes) throw ShapeError("global_avg_pool backward: gradient shape mismatch");
  BasicTensor<T> gx(input_shape_, T{0});
  for (std::size_t p = 0; p < planes; ++p) {
    const T g = static_cast<T>(static_cast<double>(grad_out[p]) / static_cast<double>(plane));
    for (std::size_t i = 0; i < plane; ++i) gx[p * plane + i] = g;
  }
  return gx;
}

#define ADVERSEG_INSTANTIATE_LAYERS(T)                                                                     \
  template BasicTensor<T> conv2d_forward(const BasicTensor<T>&, const BasicTensor<T>&, std::size_t,         \
                                         std::size_t);                                                       \
  template BasicTensor<T> conv2d_backward_input(const BasicTensor<T>&, const BasicTensor<T>&, std::size_t,  \
                                                std::size_t, std::size_t, std::size_t);                     \
  template void conv2d_backward_weight(const BasicTensor<T>&, const BasicTensor<T>&, BasicTensor<T>&,       \
                                       std::size_t, std::size_t);                                            \
  template class Conv2d<T>;                                                                                 \
  template class ConvTranspose2d<T>;                                                                        \
  template class BatchNorm2d<T>;                                                                            \
  template class Relu<T>;                                                                                   \
  template class Sigmoid<T>;                                                                                \
  template class SoftmaxChannel<T>;                                                                         \
  template class MaxPool2d<T>;                                                                              \
  template class GlobalAvgPool<T>;

ADVERSEG_INSTANTIATE_LAYERS(float)
ADVERSEG_INSTANTIATE_LAYERS(double)

#undef ADVERSEG_INSTANTIATE_LAYERS

}  // namespace adverseg
