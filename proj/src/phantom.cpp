#include <cmath>
#include <numbers>

#include "adverseg/data.hpp"

namespace adverseg {

namespace {

struct Lobe {
  double cy, cx;
  double ry, rx;
  double angle;

  bool contains(double y, double x) const {
    const double dy = y - cy, dx = x - cx;
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = (dx * c + dy * s) / rx;
    const double v = (-dx * s + dy * c) / ry;
    return u * u + v * v <= 1.0;
  }
};

double scale_of(const PhantomSpec& spec) { return static_cast<double>(std::min(spec.height, spec.width)); }

double ring_pixels(const PhantomSpec& spec) { return std::max(1.0, spec.ring_width * scale_of(spec)); }

// Farthest a labeled pixel can be from the core center.
double max_extent(const PhantomSpec& spec) {
  const double r = spec.max_radius * scale_of(spec);
  const double rings = spec.num_classes > 2 ? static_cast<double>(spec.num_classes - 2) * ring_pixels(spec) : 0.0;
  return 1.6 * r + rings + 1.0;
}

// Keeps only the 4-connected component of `cls` containing (sy, sx).
void keep_component(LabelMap& labels, std::uint8_t cls, std::size_t sy, std::size_t sx) {
  const std::size_t h = labels.dim(0), w = labels.dim(1);
  std::vector<std::uint8_t> seen(h * w, 0);
  std::vector<std::size_t> stack{sy * w + sx};
  seen[sy * w + sx] = 1;
  while (!stack.empty()) {
    const std::size_t idx = stack.back();
    stack.pop_back();
    const std::size_t y = idx / w, x = idx % w;
    const std::size_t nbrs[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
    for (const auto& n : nbrs) {
      if (n[0] >= h || n[1] >= w) continue;  // wraps on underflow
      const std::size_t j = n[0] * w + n[1];
      if (!seen[j] && labels[j] == cls) {
        seen[j] = 1;
        stack.push_back(j);
      }
    }
  }
  for (std::size_t i = 0; i < h * w; ++i) {
    if (labels[i] == cls && !seen[i]) labels[i] = 0;
  }
}

}  // namespace

std::vector<double> default_intensities(std::size_t num_classes) {
  std::vector<double> out(num_classes, 0.1);
  for (std::size_t c = 0; c < num_classes && num_classes > 1; ++c) {
    out[c] = 0.1 + 0.8 * static_cast<double>(c) / static_cast<double>(num_classes - 1);
  }
  return out;
}

std::vector<double> PhantomSpec::intensities() const {
  return class_intensity.empty() ? default_intensities(num_classes) : class_intensity;
}

void PhantomSpec::validate() const {
  if (height == 0 || width == 0) throw ConfigError("phantom: height and width must be positive");
  if (num_classes < 2 || num_classes > 255) throw ConfigError("phantom: num_classes must be in [2, 255]");
  if (in_channels == 0) throw ConfigError("phantom: in_channels must be positive");
  if (min_lobes == 0 || min_lobes > max_lobes) throw ConfigError("phantom: invalid lobe count range");
  if (!(min_radius > 0.0) || min_radius > max_radius) throw ConfigError("phantom: invalid radius range");
  if (min_radius * scale_of(*this) < 1.0) throw ConfigError("phantom: minimum radius below one pixel");
  if (!(ring_width > 0.0)) throw ConfigError("phantom: ring width must be positive");
  if (noise_sigma < 0.0) throw ConfigError("phantom: noise sigma must be non-negative");
  if (!class_intensity.empty() && class_intensity.size() != num_classes) {
    throw ConfigError("phantom: class_intensity needs one entry per class");
  }
  for (double v : intensities()) {
    if (v < 0.0 || v > 1.0) throw ConfigError("phantom: class intensities must lie in [0, 1]");
  }
  const double extent = max_extent(*this);
  if (2.0 * extent >= static_cast<double>(height) || 2.0 * extent >= static_cast<double>(width)) {
    throw ConfigError("phantom: radii and rings do not fit inside a " + std::to_string(height) + "x" +
                      std::to_string(width) + " image");
  }
}

Sample generate_phantom(const PhantomSpec& spec, Rng& rng) {
  spec.validate();
  const std::size_t h = spec.height, w = spec.width;
  const double scale = scale_of(spec);
  const double extent = max_extent(spec);

  // Core center snapped to a pixel so it lies inside every lobe.
  const double cy = std::round(rng.uniform(extent, static_cast<double>(h) - 1.0 - extent));
  const double cx = std::round(rng.uniform(extent, static_cast<double>(w) - 1.0 - extent));
  const std::size_t lobe_count = spec.min_lobes + rng.uniform_int(spec.max_lobes - spec.min_lobes + 1);
  std::vector<Lobe> lobes;
  for (std::size_t j = 0; j < lobe_count; ++j) {
    Lobe lobe{};
    lobe.ry = rng.uniform(spec.min_radius, spec.max_radius) * scale;
    lobe.rx = rng.uniform(spec.min_radius, spec.max_radius) * scale;
    lobe.angle = rng.uniform(0.0, std::numbers::pi);
    const double dist = j == 0 ? 0.0 : rng.uniform(0.0, 0.6 * std::min(lobe.rx, lobe.ry));
    const double dir = rng.uniform(0.0, 2.0 * std::numbers::pi);
    lobe.cy = cy + dist * std::sin(dir);
    lobe.cx = cx + dist * std::cos(dir);
    lobes.push_back(lobe);
  }

  LabelMap labels({h, w}, std::uint8_t{0});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (const Lobe& lobe : lobes) {
        if (lobe.contains(static_cast<double>(y), static_cast<double>(x))) {
          labels[y * w + x] = 1;
          break;
        }
      }
    }
  }
  keep_component(labels, 1, static_cast<std::size_t>(cy), static_cast<std::size_t>(cx));

  // Nested rings: class c covers background pixels within ring width of classes 1..c-1.
  const double ring = ring_pixels(spec);
  const auto reach = static_cast<std::ptrdiff_t>(std::ceil(ring));
  for (std::size_t c = 2; c < spec.num_classes; ++c) {
    LabelMap next = labels;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        if (labels[y * w + x] != 0) continue;
        bool near = false;
        for (std::ptrdiff_t dy = -reach; dy <= reach && !near; ++dy) {
          for (std::ptrdiff_t dx = -reach; dx <= reach && !near; ++dx) {
            const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(y) + dy;
            const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(x) + dx;
            if (yy < 0 || xx < 0 || yy >= static_cast<std::ptrdiff_t>(h) || xx >= static_cast<std::ptrdiff_t>(w)) continue;
            if (static_cast<double>(dy * dy + dx * dx) > ring * ring) continue;
            near = labels[static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)] != 0;
          }
        }
        if (near) next[y * w + x] = static_cast<std::uint8_t>(c);
      }
    }
    labels = std::move(next);
  }

  // Channel k sees class c at the intensity of class (c + k) mod C, a crude
  // stand-in for modalities with different contrast orderings.
  const std::vector<double> mean = spec.intensities();
  Tensor image({spec.in_channels, h, w}, 0.0f);
  for (std::size_t k = 0; k < spec.in_channels; ++k) {
    for (std::size_t i = 0; i < h * w; ++i) {
      const std::size_t cls = (labels[i] + k) % spec.num_classes;
      double v = mean[cls];
      if (spec.noise_sigma > 0.0) v += rng.normal(0.0, spec.noise_sigma);
      image[k * h * w + i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return Sample{std::move(image), std::move(labels)};
}

std::vector<Sample> generate_dataset(const PhantomSpec& spec, std::size_t count) {
  spec.validate();
  std::vector<Sample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(spec.seed, i);
    out.push_back(generate_phantom(spec, rng));
  }
  return out;
}

AugmentParams draw_augmentation(Rng& rng, const AugmentPolicy& policy, std::size_t height, std::size_t width) {
  AugmentParams p;
  p.flip_horizontal = rng.bernoulli(policy.p_flip);
  p.flip_vertical = rng.bernoulli(policy.p_flip);
  if (rng.bernoulli(policy.p_rotate)) {
    p.quarter_turns = height == width ? 1 + static_cast<int>(rng.uniform_int(3)) : 2;
  }
  p.gain = rng.uniform(1.0 - policy.jitter_gain, 1.0 + policy.jitter_gain);
  p.offset = rng.uniform(-policy.jitter_offset, policy.jitter_offset);
  return p;
}

Sample apply_augmentation(const Sample& s, const AugmentParams& params) {
  Sample out{apply_spatial(s.image, params), apply_spatial(s.labels, params)};
  if (params.gain != 1.0 || params.offset != 0.0) {
    const auto gain = static_cast<float>(params.gain);
    const auto offset = static_cast<float>(params.offset);
    for (auto& v : out.image.data()) v = std::clamp(v * gain + offset, 0.0f, 1.0f);
  }
  return out;
}

Sample augment(const Sample& s, Rng& rng, const AugmentPolicy& policy) {
  if (s.labels.rank() != 2) throw ShapeError("augment: labels must be [H,W]");
  return apply_augmentation(s, draw_augmentation(rng, policy, s.labels.dim(0), s.labels.dim(1)));
}

Tensor one_hot(const LabelMap& labels, std::size_t num_classes) {
  if (labels.rank() != 2) throw ShapeError("one_hot: labels must be [H,W], got " + shape_str(labels.shape()));
  const std::size_t h = labels.dim(0), w = labels.dim(1), plane = h * w;
  Tensor out({num_classes, h, w}, 0.0f);
  for (std::size_t i = 0; i < plane; ++i) {
    const std::size_t c = labels[i];
    if (c >= num_classes) {
      throw DataError("label " + std::to_string(c) + " out of range for C=" + std::to_string(num_classes) +
                      " at pixel " + std::to_string(i) + " (row " + std::to_string(i / w) + ", col " +
                      std::to_string(i % w) + ")");
    }
    out[c * plane + i] = 1.0f;
  }
  return out;
}

}  // namespace adverseg
