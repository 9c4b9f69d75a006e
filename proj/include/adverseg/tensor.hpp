#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "adverseg/error.hpp"
#include "adverseg/rng.hpp"

namespace adverseg {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// Throws ShapeError for an empty shape or any zero dimension.
void validate_shape(const Shape& shape);

// Row-major strides, innermost stride 1.
Shape row_major_strides(const Shape& shape);

/// Dense row-major array. A default-constructed tensor is the empty
/// placeholder (rank 0, no data); every other tensor has a valid shape and
/// data.size() == product(shape).
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  BasicTensor(Shape shape, T fill) : shape_(std::move(shape)) {
    validate_shape(shape_);
    data_.assign(shape_numel(shape_), fill);
  }

  BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape(shape_);
    if (data_.size() != shape_numel(shape_)) {
      throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                       shape_str(shape_));
    }
  }

  static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape), T{0}); }
  static BasicTensor full(Shape shape, T fill) { return BasicTensor(std::move(shape), fill); }

  bool empty() const noexcept { return data_.empty(); }
  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<const T> data() const noexcept { return data_; }
  std::span<T> data() noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  // 4-D accessor for [N,C,H,W] tensors.
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) noexcept {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  BasicTensor reshape(Shape shape) const {
    if (shape_numel(shape) != data_.size() || shape.empty()) {
      throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    return BasicTensor(std::move(shape), data_);
  }

  template <typename U>
  BasicTensor<U> cast() const {
    if (empty()) return {};
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

template <typename T>
BasicTensor<T> tensor_new(const Shape& shape, T fill) {
  return BasicTensor<T>(shape, fill);
}

enum class BinaryOp { add, sub, mul, max };

template <typename T>
void check_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

template <typename T>
BasicTensor<T> elementwise(const BasicTensor<T>& a, const BasicTensor<T>& b, BinaryOp op) {
  check_same_shape(a, b, "elementwise");
  BasicTensor<T> out = a;
  auto o = out.data();
  auto bv = b.data();
  switch (op) {
    case BinaryOp::add:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
      break;
    case BinaryOp::sub:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
      break;
    case BinaryOp::mul:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
      break;
    case BinaryOp::max:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::max(o[i], bv[i]);
      break;
  }
  return out;
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return elementwise(a, b, BinaryOp::add);
}
template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return elementwise(a, b, BinaryOp::sub);
}
template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return elementwise(a, b, BinaryOp::mul);
}
template <typename T>
BasicTensor<T> maximum(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return elementwise(a, b, BinaryOp::max);
}

// Scalar-tensor operations are the only broadcasting supported.
template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T s) {
  BasicTensor<T> out = a;
  for (auto& v : out.data()) v *= s;
  return out;
}

template <typename T>
BasicTensor<T> add_scalar(const BasicTensor<T>& a, T s) {
  BasicTensor<T> out = a;
  for (auto& v : out.data()) v += s;
  return out;
}

// In-place accumulation, used for gradient sums.
template <typename T>
void accumulate(BasicTensor<T>& dst, const BasicTensor<T>& src) {
  check_same_shape(dst, src, "accumulate");
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

enum class ReduceOp { sum, mean };

/// Reduces over `axes` (all axes when nullopt). Reduced axes are removed;
/// a full reduction yields shape [1].
template <typename T>
BasicTensor<T> reduce(const BasicTensor<T>& a, ReduceOp op,
                      const std::optional<std::vector<std::size_t>>& axes = std::nullopt) {
  const Shape& shape = a.shape();
  std::vector<bool> reduced(shape.size(), !axes.has_value());
  if (axes) {
    for (std::size_t ax : *axes) {
      if (ax >= shape.size()) {
        throw AxisError("axis " + std::to_string(ax) + " out of range for shape " + shape_str(shape));
      }
      if (reduced[ax]) throw AxisError("axis " + std::to_string(ax) + " listed twice");
      reduced[ax] = true;
    }
  }
  Shape out_shape;
  std::size_t count = 1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (reduced[i]) {
      count *= shape[i];
    } else {
      out_shape.push_back(shape[i]);
    }
  }
  if (out_shape.empty()) out_shape.push_back(1);

  // Accumulate in double, then narrow.
  std::vector<double> acc(shape_numel(out_shape), 0.0);
  const Shape strides = row_major_strides(shape);
  Shape out_strides_full(shape.size(), 0);
  {
    std::size_t stride = 1;
    for (std::size_t i = shape.size(); i-- > 0;) {
      if (!reduced[i]) {
        out_strides_full[i] = stride;
        stride *= shape[i];
      }
    }
  }
  auto src = a.data();
  for (std::size_t flat = 0; flat < src.size(); ++flat) {
    std::size_t rem = flat;
    std::size_t out_index = 0;
    for (std::size_t i = 0; i < shape.size(); ++i) {
      const std::size_t idx = rem / strides[i];
      rem %= strides[i];
      out_index += idx * out_strides_full[i];
    }
    acc[out_index] += static_cast<double>(src[flat]);
  }
  std::vector<T> out(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) {
    out[i] = static_cast<T>(op == ReduceOp::mean ? acc[i] / static_cast<double>(count) : acc[i]);
  }
  return BasicTensor<T>(std::move(out_shape), std::move(out));
}

template <typename T>
double sum(const BasicTensor<T>& a) {
  double s = 0.0;
  for (T v : a.data()) s += static_cast<double>(v);
  return s;
}

template <typename T>
double dot(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  check_same_shape(a, b, "dot");
  double s = 0.0;
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) s += static_cast<double>(x[i]) * static_cast<double>(y[i]);
  return s;
}

template <typename T>
double max_abs(const BasicTensor<T>& a) {
  double m = 0.0;
  for (T v : a.data()) m = std::max(m, std::abs(static_cast<double>(v)));
  return m;
}

template <typename T>
bool all_finite(const BasicTensor<T>& a) {
  return std::all_of(a.data().begin(), a.data().end(), [](T v) { return std::isfinite(v); });
}

namespace detail {

template <typename T>
void require_spatial(const BasicTensor<T>& a, const char* what) {
  if (a.rank() < 2) {
    throw ShapeError(std::string(what) + " needs two trailing spatial axes, got " + shape_str(a.shape()));
  }
}

}  // namespace detail

// Zero border of width `pad` on the two trailing axes of a rank-4 tensor.
template <typename T>
BasicTensor<T> pad2d(const BasicTensor<T>& a, std::size_t pad) {
  if (a.rank() != 4) throw ShapeError("pad2d expects [N,C,H,W], got " + shape_str(a.shape()));
  if (pad == 0) return a;
  const std::size_t n = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
  const std::size_t hp = h + 2 * pad, wp = w + 2 * pad;
  BasicTensor<T> out({n, c, hp, wp}, T{0});
  for (std::size_t i = 0; i < n * c; ++i) {
    const T* src = a.data().data() + i * h * w;
    T* dst = out.data().data() + i * hp * wp;
    for (std::size_t y = 0; y < h; ++y) {
      std::copy_n(src + y * w, w, dst + (y + pad) * wp + pad);
    }
  }
  return out;
}

enum class FlipAxis { horizontal, vertical };

// horizontal mirrors columns (left-right); vertical mirrors rows.
template <typename T>
BasicTensor<T> flip_spatial(const BasicTensor<T>& a, FlipAxis axis) {
  detail::require_spatial(a, "flip_spatial");
  const std::size_t h = a.dim(a.rank() - 2), w = a.dim(a.rank() - 1);
  const std::size_t planes = a.size() / (h * w);
  BasicTensor<T> out = a;
  auto src = a.data();
  auto dst = out.data();
  for (std::size_t p = 0; p < planes; ++p) {
    const std::size_t base = p * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t sy = axis == FlipAxis::vertical ? h - 1 - y : y;
        const std::size_t sx = axis == FlipAxis::horizontal ? w - 1 - x : x;
        dst[base + y * w + x] = src[base + sy * w + sx];
      }
    }
  }
  return out;
}

// Counter-clockwise quarter turns on the two trailing axes; odd turns swap H and W.
template <typename T>
BasicTensor<T> rotate90(const BasicTensor<T>& a, int quarter_turns) {
  detail::require_spatial(a, "rotate90");
  const int k = ((quarter_turns % 4) + 4) % 4;
  if (k == 0) return a;
  const std::size_t h = a.dim(a.rank() - 2), w = a.dim(a.rank() - 1);
  const std::size_t planes = a.size() / (h * w);
  Shape out_shape = a.shape();
  const std::size_t oh = (k % 2 == 1) ? w : h;
  const std::size_t ow = (k % 2 == 1) ? h : w;
  out_shape[a.rank() - 2] = oh;
  out_shape[a.rank() - 1] = ow;
  BasicTensor<T> out(out_shape, T{0});
  auto src = a.data();
  auto dst = out.data();
  for (std::size_t p = 0; p < planes; ++p) {
    const std::size_t base = p * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        std::size_t sy = 0, sx = 0;
        switch (k) {
          case 1:  // out(y,x) = in(x, w-1-y)
            sy = x;
            sx = w - 1 - y;
            break;
          case 2:
            sy = h - 1 - y;
            sx = w - 1 - x;
            break;
          default:  // 3: out(y,x) = in(h-1-x, y)
            sy = h - 1 - x;
            sx = y;
            break;
        }
        dst[base + y * ow + x] = src[base + sy * w + sx];
      }
    }
  }
  return out;
}

struct Uniform {
  double low = 0.0;
  double high = 1.0;
};

struct Normal {
  double mean = 0.0;
  double stddev = 1.0;
};

using Distribution = std::variant<Uniform, Normal>;

template <typename T>
BasicTensor<T> rand_tensor(Rng& rng, const Shape& shape, const Distribution& dist) {
  BasicTensor<T> out(shape, T{0});
  if (const auto* u = std::get_if<Uniform>(&dist)) {
    if (u->low > u->high) throw ConfigError("uniform: low > high");
    for (auto& v : out.data()) {
      // Clamp guards the narrowing to float from landing above `high`.
      v = std::clamp(static_cast<T>(rng.uniform(u->low, u->high)), static_cast<T>(u->low),
                     static_cast<T>(u->high));
    }
  } else {
    const auto& n = std::get<Normal>(dist);
    if (n.stddev < 0.0) throw ConfigError("normal: negative stddev");
    for (auto& v : out.data()) v = static_cast<T>(rng.normal(n.mean, n.stddev));
  }
  return out;
}

}  // namespace adverseg
