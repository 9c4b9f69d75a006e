#include <doctest.h>

#include "adverseg/gradcheck.hpp"
#include "adverseg/losses.hpp"
#include "adverseg/models.hpp"

using namespace adverseg;

namespace {

Tensor uniform(Rng& rng, const Shape& shape) { return rand_tensor<float>(rng, shape, Uniform{0.0, 1.0}); }

NetConfig small_config() {
  NetConfig cfg;
  cfg.encoder_channels = {4, 8};
  cfg.disc_channels = {4, 8};
  return cfg;
}

bool all_open_unit(const Tensor& t) {
  return std::all_of(t.values().begin(), t.values().end(), [](float v) { return v > 0.0f && v < 1.0f; });
}

}  // namespace

TEST_CASE("default generator keeps spatial size") {
  NetConfig cfg;
  Rng rng(1);
  Generator<float> g(cfg, rng);
  const Tensor y = g.forward(uniform(rng, {2, 1, 64, 64}), Mode::train);
  CHECK(y.shape() == Shape{2, 2, 64, 64});
  CHECK(all_open_unit(y));
}

TEST_CASE("generator is fully convolutional") {
  Rng rng(2);
  Generator<float> g(small_config(), rng);
  for (auto [h, w] : {std::pair{8u, 8u}, std::pair{16u, 12u}, std::pair{4u, 20u}}) {
    const Tensor y = g.forward(uniform(rng, {1, 1, h, w}), Mode::eval);
    CHECK(y.shape() == Shape{1, 2, h, w});
  }
  CHECK_THROWS_AS(g.forward(uniform(rng, {1, 1, 10, 8}), Mode::eval), ShapeError);
  CHECK_THROWS_AS(g.forward(uniform(rng, {1, 2, 8, 8}), Mode::eval), ShapeError);
}

TEST_CASE("construction counts follow depth") {
  NetConfig cfg;
  cfg.encoder_channels = {4};
  Rng rng(3);
  Generator<float> g(cfg, rng);
  CHECK(g.pooling_layers() == 1);
  CHECK(g.transposed_conv_layers() == 1);
  Generator<float> deep(NetConfig{}, rng);
  CHECK(deep.pooling_layers() == 3);
  CHECK(deep.transposed_conv_layers() == 3);
}

TEST_CASE("same seed builds identical networks") {
  Rng a(7), b(7);
  Generator<float> g1(NetConfig{}, a), g2(NetConfig{}, b);
  auto p1 = g1.parameters();
  auto p2 = g2.parameters();
  REQUIRE(p1.size() == p2.size());
  for (std::size_t i = 0; i < p1.size(); ++i) {
    CHECK(p1[i].name == p2[i].name);
    CHECK(p1[i].param->value == p2[i].param->value);
  }
  Rng ia(11), ib(11);
  const Tensor x = uniform(ia, {2, 1, 16, 16});
  (void)ib;
  CHECK(g1.forward(x, Mode::eval) == g2.forward(x, Mode::eval));
  CHECK(g1.forward(x, Mode::train) == g2.forward(x, Mode::train));
}

TEST_CASE("parameter ordering and count") {
  Rng rng(4);
  Generator<float> g(small_config(), rng);
  const auto names = [](auto params) {
    std::vector<std::string> out;
    for (const auto& p : params) out.push_back(p.name);
    return out;
  };
  const auto before = names(g.parameters());
  CHECK(before.front().rfind("enc0.", 0) == 0);
  CHECK(before.back() == "head.bias");
  const std::size_t count = g.param_count();
  g.forward(uniform(rng, {2, 1, 8, 8}), Mode::train);
  CHECK(g.param_count() == count);
  CHECK(names(g.parameters()) == before);

  Conv2d<float> conv(ConvSpec{2, 3, 1, 1, 0});
  std::size_t n = 0;
  for (Param<float>* p : conv.parameters()) n += p->value.size();
  CHECK(n == 9);

  // conv(1->4) + bn(4) + bottleneck conv(4->4) + bn(4) + up(4->4) + bn(4) + head(4->2)
  NetConfig tiny;
  tiny.encoder_channels = {4};
  Generator<float> t(tiny, rng);
  CHECK(t.param_count() == (9 * 4 + 4) + 8 + (36 * 4 + 4) + 8 + (4 * 4 * 4 + 4) + 8 + (4 * 2 + 2));
}

TEST_CASE("softmax head sums to one per pixel") {
  NetConfig cfg = small_config();
  cfg.head = HeadType::softmax;
  cfg.num_classes = 3;
  Rng rng(5);
  Generator<float> g(cfg, rng);
  const Tensor y = g.forward(uniform(rng, {2, 1, 8, 8}), Mode::train);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 8; ++j) {
        double s = 0;
        for (std::size_t c = 0; c < 3; ++c) s += y.at(n, c, i, j);
        CHECK(std::abs(s - 1.0) < 1e-6);
      }
}

TEST_CASE("skip connections keep shapes") {
  NetConfig cfg = small_config();
  cfg.skip_connections = true;
  Rng rng(6);
  Generator<float> g(cfg, rng);
  const Tensor x = uniform(rng, {2, 1, 8, 8});
  const Tensor y = g.forward(x, Mode::train);
  CHECK(y.shape() == Shape{2, 2, 8, 8});
  CHECK(g.backward(Tensor::full(y.shape(), 1.0f)).shape() == x.shape());
}

TEST_CASE("discriminator scores") {
  NetConfig cfg;
  Rng rng(7);
  Discriminator<float> d(cfg, rng);
  const Tensor maps = uniform(rng, {16, 2, 64, 64});
  const Tensor s = d.forward(maps, Mode::train);
  CHECK(s.shape() == Shape{16, 1});
  CHECK(all_open_unit(s));
  CHECK(d.forward(maps, Mode::eval) == d.forward(maps, Mode::eval));
  CHECK_THROWS_AS(d.forward(uniform(rng, {2, 3, 64, 64}), Mode::eval), ShapeError);
}

TEST_CASE("discriminator is permutation-equivariant over the batch") {
  Rng rng(8);
  Discriminator<float> d(small_config(), rng);
  const Tensor maps = uniform(rng, {4, 2, 8, 8});
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  Tensor permuted(maps.shape(), 0.0f);
  const std::size_t per = maps.size() / 4;
  for (std::size_t i = 0; i < 4; ++i) {
    std::copy_n(maps.data().data() + perm[i] * per, per, permuted.data().data() + i * per);
  }
  const Tensor a = d.forward(maps, Mode::eval);
  const Tensor b = d.forward(permuted, Mode::eval);
  for (std::size_t i = 0; i < 4; ++i) CHECK(b[i] == a[perm[i]]);
}

TEST_CASE("conditional discriminator takes the image") {
  NetConfig cfg = small_config();
  cfg.conditional_disc = true;
  Rng rng(9);
  Discriminator<float> d(cfg, rng);
  const Tensor maps = uniform(rng, {2, 2, 8, 8});
  const Tensor image = uniform(rng, {2, 1, 8, 8});
  CHECK(d.forward(maps, Mode::train, &image).shape() == Shape{2, 1});
  CHECK(d.backward(Tensor::full({2, 1}, 1.0f)).shape() == maps.shape());
  CHECK_THROWS(d.forward(maps, Mode::train));
}

TEST_CASE("invalid configs") {
  NetConfig cfg;
  cfg.encoder_channels = {};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = NetConfig{};
  cfg.num_classes = 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = NetConfig{};
  cfg.disc_channels = {8, 0};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("end-to-end generator gradient through the reconstruction loss") {
  GradSuiteOptions only;
  only.only = "generator_end_to_end";
  const auto items = run_gradcheck_suite(only);
  REQUIRE(items.size() == 1);
  CHECK(items[0].max_rel_error < 1e-3);
}
