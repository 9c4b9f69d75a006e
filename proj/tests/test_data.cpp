#include <doctest.h>

#include <algorithm>
#include <array>
#include <filesystem>
#include <map>
#include <queue>
#include <set>

#include "adverseg/data.hpp"
#include "adverseg/metrics.hpp"

using namespace adverseg;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("adverseg_test_data_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::map<std::uint8_t, std::size_t> histogram(const LabelMap& l) {
  std::map<std::uint8_t, std::size_t> h;
  for (auto v : l.values()) ++h[v];
  return h;
}

// Number of 4-connected components of `cls`.
std::size_t components(const LabelMap& l, std::uint8_t cls) {
  const std::size_t h = l.dim(0), w = l.dim(1);
  std::vector<bool> seen(l.size(), false);
  std::size_t count = 0;
  for (std::size_t start = 0; start < l.size(); ++start) {
    if (l[start] != cls || seen[start]) continue;
    ++count;
    std::queue<std::size_t> q;
    q.push(start);
    seen[start] = true;
    while (!q.empty()) {
      const std::size_t i = q.front();
      q.pop();
      const std::size_t y = i / w, x = i % w;
      const std::array<std::pair<long, long>, 4> nb{{{-1, 0}, {1, 0}, {0, -1}, {0, 1}}};
      for (auto [dy, dx] : nb) {
        const long ny = static_cast<long>(y) + dy, nx = static_cast<long>(x) + dx;
        if (ny < 0 || nx < 0 || ny >= static_cast<long>(h) || nx >= static_cast<long>(w)) continue;
        const std::size_t j = static_cast<std::size_t>(ny) * w + static_cast<std::size_t>(nx);
        if (l[j] == cls && !seen[j]) {
          seen[j] = true;
          q.push(j);
        }
      }
    }
  }
  return count;
}

bool touches(const LabelMap& l, std::uint8_t a, std::uint8_t b) {
  const std::size_t h = l.dim(0), w = l.dim(1);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      if (l[y * w + x] != a) continue;
      if ((y > 0 && l[(y - 1) * w + x] == b) || (y + 1 < h && l[(y + 1) * w + x] == b) ||
          (x > 0 && l[y * w + x - 1] == b) || (x + 1 < w && l[y * w + x + 1] == b))
        return true;
    }
  return false;
}

}  // namespace

TEST_CASE("TSR1 byte layout") {
  const Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  const auto bytes = encode_tsr1(t);
  CHECK(bytes.size() == tsr1_header_size(2) + 4 * 6);
  CHECK(bytes.size() == 4 + 1 + 4 * 2 + 1 + 24);
  CHECK(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 4) == std::vector<std::uint8_t>{0x54, 0x53, 0x52, 0x31});
  CHECK(bytes[4] == 2);
  CHECK(bytes[5] == 2);
  CHECK(bytes[6] == 0);
  CHECK(bytes[9] == 3);
  CHECK(bytes[13] == 0);
  // 1.0f little-endian.
  CHECK(bytes[14] == 0x00);
  CHECK(bytes[17] == 0x3f);

  const LabelMap l({2, 2}, std::vector<std::uint8_t>{0, 1, 2, 3});
  const auto lb = encode_tsr1(l);
  CHECK(lb.size() == tsr1_header_size(2) + 4);
  CHECK(lb[13] == 1);
}

TEST_CASE("TSR1 file round-trip is bit-exact") {
  const fs::path dir = scratch_dir("roundtrip");
  Rng rng(1);
  for (const Shape& shape : {Shape{7}, Shape{3, 5}, Shape{2, 3, 4}, Shape{1, 2, 3, 4}}) {
    Tensor t = rand_tensor<float>(rng, shape, Normal{0.0, 100.0});
    t[0] = -0.0f;
    const fs::path p = dir / "t.tsr";
    write_tensor(p, t);
    CHECK(fs::file_size(p) == tsr1_header_size(shape.size()) + 4 * t.size());
    const Tensor back = read_tensor(p);
    CHECK(back.shape() == t.shape());
    CHECK(std::equal(back.values().begin(), back.values().end(), t.values().begin(),
                     [](float a, float b) { return std::bit_cast<std::uint32_t>(a) == std::bit_cast<std::uint32_t>(b); }));
  }
  LabelMap l({4, 4}, std::uint8_t{0});
  for (std::size_t i = 0; i < l.size(); ++i) l[i] = static_cast<std::uint8_t>(i * 17);
  write_tensor(dir / "l.tsr", l);
  CHECK(read_label_tensor(dir / "l.tsr") == l);
  CHECK_THROWS_AS(read_tensor(dir / "l.tsr"), FormatError);
  CHECK_THROWS_AS(read_label_tensor(dir / "t.tsr"), FormatError);
}

TEST_CASE("TSR1 corruption raises format errors with offsets") {
  const auto good = encode_tsr1(Tensor({2, 2}, {1, 2, 3, 4}));

  auto bad_magic = good;
  bad_magic[2] = 'X';
  try {
    decode_tsr1(bad_magic);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 0);
  }

  auto bad_dtype = good;
  bad_dtype[13] = 9;
  try {
    decode_tsr1(bad_dtype);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 13);
    CHECK(std::string(e.what()).find("dtype") != std::string::npos);
  }

  for (std::size_t len : {0u, 3u, 4u, 8u, 13u, 20u, 29u}) {
    const std::vector<std::uint8_t> cut(good.begin(), good.begin() + static_cast<long>(len));
    CAPTURE(len);
    CHECK_THROWS_AS(decode_tsr1(cut), FormatError);
  }

  auto zero_dim = good;
  zero_dim[5] = 0;
  CHECK_THROWS_AS(decode_tsr1(zero_dim), FormatError);

  std::size_t consumed = 0;
  auto padded = good;
  padded.push_back(7);
  decode_tsr1(padded, 0, &consumed);
  CHECK(consumed == good.size());

  try {
    decode_tsr1(bad_magic, 100);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 100);
  }

  const fs::path dir = scratch_dir("corrupt");
  write_file_bytes(dir / "trail.tsr", padded);
  CHECK_THROWS_AS(read_tensor(dir / "trail.tsr"), FormatError);
  CHECK_THROWS_AS(read_tensor(dir / "missing.tsr"), DataError);
}

TEST_CASE("phantom class sets and determinism") {
  PhantomSpec spec;
  spec.num_classes = 2;
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    const Sample s = generate_phantom(spec, rng);
    CHECK(s.image.shape() == Shape{1, 64, 64});
    CHECK(s.labels.shape() == Shape{64, 64});
    for (auto v : s.labels.values()) CHECK(v < 2);
    for (float v : s.image.values()) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }

  spec.noise_sigma = 0.0;
  spec.class_intensity = {0.1, 0.9};
  Rng r2(4);
  const Sample clean = generate_phantom(spec, r2);
  std::set<float> values(clean.image.values().begin(), clean.image.values().end());
  CHECK(values == std::set<float>{0.1f, 0.9f});

  Rng a(spec.seed, 5), b(spec.seed, 5);
  CHECK(generate_phantom(spec, a) == generate_phantom(spec, b));
  const auto ds = generate_dataset(spec, 6);
  Rng c(spec.seed, 5);
  CHECK(ds[5] == generate_phantom(spec, c));
}

TEST_CASE("phantom regions are connected and nested") {
  PhantomSpec spec;
  spec.num_classes = 3;
  for (const Sample& s : generate_dataset(spec, 40)) {
    const auto h = histogram(s.labels);
    REQUIRE(h.count(1));
    CHECK(components(s.labels, 1) == 1);
    if (h.count(2)) CHECK(touches(s.labels, 2, 1));
  }
}

TEST_CASE("multi-channel phantoms") {
  PhantomSpec spec;
  spec.in_channels = 3;
  spec.height = 32;
  spec.width = 16;
  const Sample s = generate_dataset(spec, 1).front();
  CHECK(s.image.shape() == Shape{3, 32, 16});
  CHECK(s.labels.shape() == Shape{32, 16});
}

TEST_CASE("invalid phantom specs") {
  PhantomSpec spec;
  spec.num_classes = 1;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = PhantomSpec{};
  spec.max_radius = 0.9;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("one_hot") {
  const LabelMap zeros({3, 3}, std::uint8_t{0});
  const Tensor oh = one_hot(zeros, 2);
  CHECK(oh.shape() == Shape{2, 3, 3});
  for (std::size_t i = 0; i < 9; ++i) {
    CHECK(oh[i] == 1.0f);
    CHECK(oh[9 + i] == 0.0f);
  }

  PhantomSpec spec;
  const Sample s = generate_dataset(spec, 1).front();
  const Tensor h = one_hot(s.labels, 3);
  for (std::size_t p = 0; p < s.labels.size(); ++p) {
    float total = 0;
    for (std::size_t c = 0; c < 3; ++c) total += h[c * s.labels.size() + p];
    CHECK(total == 1.0f);
  }
  CHECK(argmax_labels(h) == s.labels);

  LabelMap bad({2, 2}, std::uint8_t{0});
  bad[3] = 5;
  try {
    one_hot(bad, 3);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("pixel 3") != std::string::npos);
  }
}

TEST_CASE("augmentation") {
  PhantomSpec spec;
  const auto samples = generate_dataset(spec, 20);

  Rng none_rng(1);
  CHECK(augment(samples[0], none_rng, AugmentPolicy::none()) == samples[0]);

  Rng rng(2);
  AugmentPolicy spatial{1.0, 1.0, 0.0, 0.0};
  for (const Sample& s : samples) {
    const Sample a = augment(s, rng, spatial);
    CHECK(histogram(a.labels) == histogram(s.labels));
  }

  // Spatial transforms commute with one-hot encoding.
  Rng rng2(3);
  for (const Sample& s : samples) {
    const AugmentParams p = draw_augmentation(rng2, AugmentPolicy{}, 64, 64);
    const Sample a = apply_augmentation(s, p);
    CHECK(one_hot(a.labels, 3) == apply_spatial(one_hot(s.labels, 3), p));
    for (float v : a.image.values()) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
    CHECK(p.gain >= 0.9);
    CHECK(p.gain <= 1.1);
    CHECK(std::abs(p.offset) <= 0.05);
  }

  // Non-square images never get odd quarter turns.
  Rng rng3(4);
  for (int i = 0; i < 200; ++i) CHECK(draw_augmentation(rng3, AugmentPolicy{}, 32, 64).quarter_turns % 2 == 0);

  Rng r4(5), r5(5);
  CHECK(augment(samples[1], r4, AugmentPolicy{}) == augment(samples[1], r5, AugmentPolicy{}));
}

TEST_CASE("manifest parse and format") {
  const std::string text =
      "# dataset\n"
      "C=3 H=16 W=8 CIN=1\n"
      "a.tsr b.tsr\n"
      "\n"
      "c.tsr d.tsr  # trailing comment\n";
  const DatasetManifest m = parse_manifest(text, "/data");
  CHECK(m.num_classes == 3);
  CHECK(m.height == 16);
  CHECK(m.width == 8);
  CHECK(m.in_channels == 1);
  REQUIRE(m.entries.size() == 2);
  CHECK(m.entries[1] == ManifestEntry{"c.tsr", "d.tsr"});
  const DatasetManifest again = parse_manifest(format_manifest(m), "/data");
  CHECK(again.entries == m.entries);
  CHECK(again.num_classes == 3);

  CHECK_THROWS_AS(parse_manifest("a.tsr b.tsr\n", "."), DataError);
  CHECK_THROWS_AS(parse_manifest("C=3 H=16 W=8\n", "."), DataError);
  CHECK_THROWS_AS(parse_manifest("C=3 H=16 W=8 CIN=1 X=2\n", "."), DataError);
  CHECK_THROWS_AS(parse_manifest("C=3 H=16 W=8 CIN=1\nonly-one\n", "."), DataError);
  CHECK_THROWS_AS(parse_manifest("C=x H=16 W=8 CIN=1\n", "."), DataError);
}

TEST_CASE("dataset write and load round-trip") {
  const fs::path dir = scratch_dir("dataset");
  PhantomSpec spec;
  spec.height = spec.width = 16;
  const auto samples = generate_dataset(spec, 5);
  write_dataset(dir, samples, 3);
  const DatasetManifest m = read_manifest(dir / "manifest.txt");
  CHECK(m.entries.size() == 5);
  CHECK(load_dataset(m) == samples);

  // Declared shape disagreeing with the files.
  DatasetManifest wrong = m;
  wrong.height = 32;
  CHECK_THROWS_AS(load_dataset(wrong), DataError);
  DatasetManifest few = m;
  few.num_classes = 2;
  CHECK_THROWS_AS(load_dataset(few), DataError);

  fs::remove(dir / "image_0002.tsr");
  CHECK_THROWS_AS(load_dataset(read_manifest(dir / "manifest.txt")), DataError);
}

TEST_CASE("batching") {
  const auto batches = batch_indices(100, 16);
  CHECK(batches.size() == 7);
  CHECK(batches.back().size() == 4);
  std::size_t expect = 0;
  for (const auto& b : batches)
    for (std::size_t i : b) CHECK(i == expect++);

  Rng a(9), b(9);
  const auto s1 = batch_indices(100, 16, &a);
  CHECK(s1 == batch_indices(100, 16, &b));
  std::vector<std::size_t> flat;
  for (const auto& x : s1) flat.insert(flat.end(), x.begin(), x.end());
  CHECK(flat != std::vector<std::size_t>(expect));
  std::sort(flat.begin(), flat.end());
  for (std::size_t i = 0; i < 100; ++i) CHECK(flat[i] == i);

  PhantomSpec spec;
  spec.height = spec.width = 16;
  const auto samples = generate_dataset(spec, 10);
  const auto it = batch_iter(samples, 3, 4);
  REQUIRE(it.size() == 3);
  CHECK(it[0].images.shape() == Shape{4, 1, 16, 16});
  CHECK(it[0].one_hot.shape() == Shape{4, 3, 16, 16});
  CHECK(it[2].indices == std::vector<std::size_t>{8, 9});
  CHECK(batch_iter(samples, 3, 4, Rng(1))[0].indices == batch_iter(samples, 3, 4, Rng(1))[0].indices);
  CHECK_THROWS_AS(batch_iter({}, 3, 4), DataError);

  const Split split = split_by_index(200, 0.2);
  CHECK(split.train.size() == 160);
  CHECK(split.holdout.front() == 160);
  CHECK(split_by_index(10, 0.0).holdout.empty());
}
