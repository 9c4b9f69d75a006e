#include <cmath>
#include <map>

#include "adverseg/gradcheck.hpp"
#include "adverseg/losses.hpp"
#include "adverseg/data.hpp"
#include "adverseg/models.hpp"
#include "adverseg/optim.hpp"

namespace adverseg {

namespace {

constexpr double kLayerThreshold = 1e-4;
constexpr double kLossThreshold = 1e-6;
constexpr double kAdjointThreshold = 1e-10;

struct Context {
  Rng rng;
  double epsilon;
  double analytic_scale;
};

using ItemFn = GradCheckResult (*)(Context&);

TensorD uniform(Context& ctx, const Shape& shape, double lo, double hi) {
  return rand_tensor<double>(ctx.rng, shape, Uniform{lo, hi});
}

void randomize(Param<double>& p, Context& ctx, double lo, double hi) { p.value = uniform(ctx, p.value.shape(), lo, hi); }

GradCheckResult check_conv2d(Context& ctx) {
  GradCheckResult r;
  for (const ConvSpec& spec : {ConvSpec{2, 3, 3, 1, 1}, ConvSpec{2, 3, 3, 2, 1}, ConvSpec{3, 2, 1, 1, 0}}) {
    Conv2d<double> conv(spec);
    conv.initialize(ctx.rng, Init::he_uniform);
    randomize(conv.bias(), ctx, -0.5, 0.5);
    r.merge(grad_check(conv, uniform(ctx, {2, spec.in_channels, 5, 5}, -1, 1), ctx.epsilon, Mode::train,
                       ctx.rng.next_u64(), ctx.analytic_scale));
  }
  return r;
}

GradCheckResult check_conv_transpose2d(Context& ctx) {
  GradCheckResult r;
  for (const ConvSpec& spec : {ConvSpec{3, 2, 2, 2, 0}, ConvSpec{2, 3, 3, 2, 1}, ConvSpec{2, 2, 3, 1, 1}}) {
    ConvTranspose2d<double> up(spec);
    up.initialize(ctx.rng, Init::he_uniform);
    randomize(up.bias(), ctx, -0.5, 0.5);
    r.merge(grad_check(up, uniform(ctx, {2, spec.in_channels, 3, 3}, -1, 1), ctx.epsilon, Mode::train,
                       ctx.rng.next_u64(), ctx.analytic_scale));
  }
  return r;
}

GradCheckResult check_batchnorm2d(Context& ctx) {
  GradCheckResult r;
  BatchNorm2d<double> bn(3);
  randomize(bn.gamma(), ctx, 0.5, 1.5);
  randomize(bn.beta(), ctx, -0.5, 0.5);
  const TensorD x = uniform(ctx, {3, 3, 3, 3}, -2, 2);
  // Populate running statistics so eval mode has something non-trivial to use.
  for (int i = 0; i < 3; ++i) bn.forward(uniform(ctx, x.shape(), -1, 3), Mode::train);
  r.merge(grad_check(bn, x, ctx.epsilon, Mode::train_frozen_stats, ctx.rng.next_u64(), ctx.analytic_scale));
  r.merge(grad_check(bn, x, ctx.epsilon, Mode::eval, ctx.rng.next_u64(), ctx.analytic_scale));
  return r;
}

GradCheckResult check_relu(Context& ctx) {
  Relu<double> relu;
  TensorD x = uniform(ctx, {2, 3, 4, 4}, -1, 1);
  const double gap = 10.0 * ctx.epsilon;
  for (double& v : x.data()) {
    if (std::abs(v) < gap) v = v < 0 ? -gap : gap;
  }
  return grad_check(relu, x, ctx.epsilon, Mode::train, ctx.rng.next_u64(), ctx.analytic_scale);
}

GradCheckResult check_sigmoid(Context& ctx) {
  Sigmoid<double> sigmoid;
  return grad_check(sigmoid, uniform(ctx, {2, 3, 4, 4}, -4, 4), ctx.epsilon, Mode::train, ctx.rng.next_u64(),
                    ctx.analytic_scale);
}

GradCheckResult check_softmax(Context& ctx) {
  SoftmaxChannel<double> softmax;
  return grad_check(softmax, uniform(ctx, {2, 4, 3, 3}, -3, 3), ctx.epsilon, Mode::train, ctx.rng.next_u64(),
                    ctx.analytic_scale);
}

GradCheckResult check_maxpool(Context& ctx) {
  MaxPool2d<double> pool;
  // Distinct values spaced far wider than the perturbation keep the argmax fixed.
  TensorD x({2, 2, 4, 6}, 0.0);
  std::vector<std::size_t> order = batch_indices(x.size(), x.size(), &ctx.rng).front();
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.01 * static_cast<double>(order[i]) - 0.5;
  return grad_check(pool, x, ctx.epsilon, Mode::train, ctx.rng.next_u64(), ctx.analytic_scale);
}

GradCheckResult check_global_avg_pool(Context& ctx) {
  GlobalAvgPool<double> pool;
  return grad_check(pool, uniform(ctx, {2, 3, 4, 5}, -1, 1), ctx.epsilon, Mode::train, ctx.rng.next_u64(),
                    ctx.analytic_scale);
}

// <conv(x), y> against <x, conv^T(y)> for several geometries.
GradCheckResult check_conv_adjoint(Context& ctx) {
  GradCheckResult r;
  struct Geometry {
    std::size_t cin, cout, k, stride, pad, h, w;
  };
  for (const Geometry& g : {Geometry{2, 3, 3, 1, 1, 6, 5}, Geometry{3, 2, 3, 2, 1, 7, 8}, Geometry{2, 2, 2, 2, 0, 6, 6},
                            Geometry{1, 4, 5, 3, 2, 9, 7}}) {
    const TensorD x = uniform(ctx, {2, g.cin, g.h, g.w}, -1, 1);
    const TensorD w = uniform(ctx, {g.cout, g.cin, g.k, g.k}, -1, 1);
    const TensorD cx = conv2d_forward(x, w, g.stride, g.pad);
    const TensorD y = uniform(ctx, cx.shape(), -1, 1);
    const TensorD ty = conv2d_backward_input(y, w, g.h, g.w, g.stride, g.pad);
    const double lhs = dot(cx, y);
    const double rhs = dot(x, ty) * ctx.analytic_scale;
    const double err = std::abs(lhs - rhs) / std::max({std::abs(lhs), std::abs(rhs), 1e-300});
    ++r.checked;
    if (r.worst.empty() || err > r.max_rel_error) {
      r.max_rel_error = err;
      r.worst = "k" + std::to_string(g.k) + "s" + std::to_string(g.stride) + "p" + std::to_string(g.pad);
    }
  }
  return r;
}

TensorD probabilities(Context& ctx, const Shape& shape) { return uniform(ctx, shape, 0.05, 0.95); }

TensorD random_one_hot(Context& ctx, std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
  TensorD out({n, c, h, w}, 0.0);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < h * w; ++i) out[(b * c + ctx.rng.uniform_int(c)) * h * w + i] = 1.0;
  }
  return out;
}

GradCheckResult check_reconstruction_loss(Context& ctx) {
  const TensorD y = random_one_hot(ctx, 2, 3, 3, 4);
  const TensorD p = probabilities(ctx, y.shape());
  const TensorD analytic = scale(reconstruction_loss(p, y).grad, ctx.analytic_scale);
  return check_gradient([&](const TensorD& q) { return reconstruction_loss(q, y).value; }, p, analytic, ctx.epsilon,
                        "prob");
}

GradCheckResult check_categorical_ce(Context& ctx) {
  const TensorD y = random_one_hot(ctx, 2, 3, 3, 4);
  const TensorD p = probabilities(ctx, y.shape());
  const TensorD analytic = scale(categorical_cross_entropy(p, y).grad, ctx.analytic_scale);
  return check_gradient([&](const TensorD& q) { return categorical_cross_entropy(q, y).value; }, p, analytic,
                        ctx.epsilon, "prob");
}

GradCheckResult check_discriminator_loss(Context& ctx) {
  GradCheckResult r;
  for (LossConvention conv : {LossConvention::paper_equation, LossConvention::standard_gan}) {
    const TensorD fake = probabilities(ctx, {5, 1});
    const TensorD real = probabilities(ctx, {5, 1});
    const auto loss = discriminator_loss(fake, real, conv);
    r.merge(check_gradient([&](const TensorD& f) { return discriminator_loss(f, real, conv).value; }, fake,
                           scale(loss.grad_fake, ctx.analytic_scale), ctx.epsilon, "d_fake"));
    r.merge(check_gradient([&](const TensorD& q) { return discriminator_loss(fake, q, conv).value; }, real,
                           scale(loss.grad_real, ctx.analytic_scale), ctx.epsilon, "d_real"));
  }
  return r;
}

GradCheckResult check_generator_adversarial_loss(Context& ctx) {
  const TensorD fake = probabilities(ctx, {6, 1});
  return check_gradient([](const TensorD& f) { return generator_adversarial_loss(f).value; }, fake,
                        scale(generator_adversarial_loss(fake).grad, ctx.analytic_scale), ctx.epsilon, "d_fake");
}

// Checks d objective / d (image, every parameter) for a whole network, where
// `objective` runs forward, returns the loss, and (when asked) backpropagates.
template <typename Net, typename Objective>
GradCheckResult check_network(Context& ctx, Net& net, const TensorD& image, Objective objective) {
  auto params = net.parameters();
  zero_grads<double>(std::span<const NamedParam<double>>(params));
  TensorD grad_image;
  objective(image, &grad_image);
  GradCheckResult r = check_gradient([&](const TensorD& x) { return objective(x, nullptr); }, image,
                                     scale(grad_image, ctx.analytic_scale), ctx.epsilon, "image");
  for (const auto& np : params) {
    Param<double>& p = *np.param;
    const TensorD saved = p.value;
    const TensorD analytic = scale(p.grad, ctx.analytic_scale);
    r.merge(check_gradient(
        [&](const TensorD& v) {
          p.value = v;
          return objective(image, nullptr);
        },
        saved, analytic, ctx.epsilon, np.name));
    p.value = saved;
  }
  return r;
}

GradCheckResult check_generator_end_to_end(Context& ctx) {
  NetConfig cfg;
  cfg.in_channels = 1;
  cfg.num_classes = 2;
  cfg.encoder_channels = {4};
  Generator<double> gen(cfg, ctx.rng);
  const TensorD image = uniform(ctx, {1, 1, 8, 8}, 0, 1);
  const TensorD target = random_one_hot(ctx, 1, 2, 8, 8);
  return check_network(ctx, gen, image, [&](const TensorD& x, TensorD* grad_image) {
    const TensorD prob = gen.forward(x, Mode::train_frozen_stats);
    const auto loss = reconstruction_loss(prob, target);
    if (grad_image) *grad_image = gen.backward(loss.grad);
    return loss.value;
  });
}

GradCheckResult check_discriminator_end_to_end(Context& ctx) {
  NetConfig cfg;
  cfg.num_classes = 2;
  cfg.disc_channels = {4, 4};
  Discriminator<double> disc(cfg, ctx.rng);
  const TensorD maps = probabilities(ctx, {2, 2, 8, 8});
  return check_network(ctx, disc, maps, [&](const TensorD& x, TensorD* grad_maps) {
    const TensorD scores = disc.forward(x, Mode::train_frozen_stats);
    const auto loss = generator_adversarial_loss(scores);
    if (grad_maps) *grad_maps = disc.backward(loss.grad);
    return loss.value;
  });
}

struct ItemSpec {
  const char* name;
  ItemFn fn;
  double threshold;
};

const std::vector<ItemSpec>& items() {
  static const std::vector<ItemSpec> all{
      {"conv2d", check_conv2d, kLayerThreshold},
      {"conv_transpose2d", check_conv_transpose2d, kLayerThreshold},
      {"conv_adjoint", check_conv_adjoint, kAdjointThreshold},
      {"batchnorm2d", check_batchnorm2d, kLayerThreshold},
      {"relu", check_relu, kLayerThreshold},
      {"sigmoid", check_sigmoid, kLayerThreshold},
      {"softmax_channel", check_softmax, kLayerThreshold},
      {"maxpool2d", check_maxpool, kLayerThreshold},
      {"global_avg_pool", check_global_avg_pool, kLayerThreshold},
      {"reconstruction_loss", check_reconstruction_loss, kLossThreshold},
      {"categorical_cross_entropy", check_categorical_ce, kLossThreshold},
      {"discriminator_loss", check_discriminator_loss, kLossThreshold},
      {"generator_adversarial_loss", check_generator_adversarial_loss, kLossThreshold},
      {"generator_end_to_end", check_generator_end_to_end, kLayerThreshold},
      {"discriminator_end_to_end", check_discriminator_end_to_end, kLayerThreshold},
  };
  return all;
}

}  // namespace

std::vector<std::string> gradcheck_item_names() {
  std::vector<std::string> names;
  for (const auto& item : items()) names.emplace_back(item.name);
  return names;
}

std::vector<GradCheckItem> run_gradcheck_suite(const GradSuiteOptions& options) {
  if (options.only) {
    const auto names = gradcheck_item_names();
    if (std::find(names.begin(), names.end(), *options.only) == names.end()) {
      std::string valid;
      for (const auto& n : names) valid += (valid.empty() ? "" : ", ") + n;
      throw ConfigError("unknown gradcheck item '" + *options.only + "'; valid items: " + valid);
    }
  }
  std::vector<GradCheckItem> out;
  for (std::size_t k = 0; k < items().size(); ++k) {
    const ItemSpec& item = items()[k];
    if (options.only && *options.only != item.name) continue;
    // Each item draws from its own stream so filtering does not change results.
    Context ctx{Rng(options.seed, 0x100 + k), options.epsilon, options.corrupt_backward ? 1.01 : 1.0};
    const GradCheckResult r = item.fn(ctx);
    out.push_back({item.name, r.max_rel_error, item.threshold, r.worst});
  }
  return out;
}

}  // namespace adverseg
