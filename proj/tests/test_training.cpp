#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "adverseg/training.hpp"

using namespace adverseg;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("adverseg_test_training_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.net.encoder_channels = {4, 8};
  cfg.net.disc_channels = {4, 8};
  cfg.batch_size = 4;
  cfg.steps = 6;
  cfg.eval_every = 3;
  cfg.lr = 1e-3;
  cfg.seed = 17;
  return cfg;
}

std::vector<Sample> tiny_samples(std::size_t count = 15, std::size_t classes = 2) {
  PhantomSpec spec;
  spec.height = spec.width = 16;
  spec.num_classes = classes;
  spec.seed = 3;
  return generate_dataset(spec, count);
}

std::uint64_t hash_params(std::vector<NamedParam<float>> params) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& p : params) {
    for (float v : p.param->value.values()) {
      h ^= std::bit_cast<std::uint32_t>(v);
      h *= 1099511628211ULL;
    }
  }
  return h;
}

Batch first_batch(const std::vector<Sample>& samples, const TrainConfig& cfg) {
  std::vector<std::size_t> idx(samples.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return training_batch(samples, idx, 2, cfg, 0);
}

std::string read_text(const fs::path& p) {
  const auto b = read_file_bytes(p);
  return std::string(b.begin(), b.end());
}

}  // namespace

TEST_CASE("train config text round-trips") {
  TrainConfig cfg = tiny_config();
  cfg.convention = LossConvention::standard_gan;
  cfg.net.head = HeadType::softmax;
  cfg.lambda_rec = 2.5;
  cfg.augment.p_flip = 0.25;
  const TrainConfig back = parse_train_config(format_train_config(cfg));
  CHECK(format_train_config(back) == format_train_config(cfg));
  CHECK(back.net == cfg.net);
  CHECK(back.lambda_rec == 2.5);

  const TrainConfig partial = parse_train_config("# comment\n\nlr = 0.01\nsteps=3  # trailing\n");
  CHECK(partial.lr == 0.01);
  CHECK(partial.steps == 3);
  CHECK(partial.lambda_rec == 10.0);
  CHECK(partial.batch_size == 16);

  try {
    parse_train_config("lr = 0.01\nlearning_rate = 2\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("line 2") != std::string::npos);
    CHECK(msg.find("lambda_rec") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_train_config("lr = 1\nlr = 2\n"), ConfigError);
  CHECK_THROWS_AS(parse_train_config("steps = -1\n"), ConfigError);
  CHECK_THROWS_AS(parse_train_config("head = linear\n"), ConfigError);
  CHECK_THROWS_AS(parse_train_config("nonsense\n"), ConfigError);

  TrainConfig bad;
  bad.lambda_rec = -1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("lr 0 leaves every parameter bit-identical") {
  TrainConfig cfg = tiny_config();
  cfg.lr = 0.0;
  const auto samples = tiny_samples();
  TrainState st(cfg);
  const auto g0 = hash_params(st.generator.parameters());
  const auto d0 = hash_params(st.discriminator.parameters());
  train_step(st, first_batch(samples, cfg));
  CHECK(hash_params(st.generator.parameters()) == g0);
  CHECK(hash_params(st.discriminator.parameters()) == d0);
  CHECK(st.step == 1);
}

TEST_CASE("reconstruction-only step reports zero adversarial terms") {
  TrainConfig cfg = tiny_config();
  cfg.adversarial_enabled = false;
  cfg.lambda_rec = 1.0;
  const auto samples = tiny_samples();
  TrainState st(cfg);
  const auto d0 = hash_params(st.discriminator.parameters());
  const LossBreakdown l = train_step(st, first_batch(samples, cfg));
  CHECK(l.total_g == l.rec);
  CHECK(l.adv_d == 0.0);
  CHECK(l.adv_g == 0.0);
  CHECK(hash_params(st.discriminator.parameters()) == d0);
}

TEST_CASE("discriminator and generator updates are isolated") {
  TrainConfig cfg = tiny_config();
  cfg.d_steps_per_g_step = 2;
  const auto samples = tiny_samples();
  TrainState st(cfg);
  const auto g0 = hash_params(st.generator.parameters());
  auto d_last = hash_params(st.discriminator.parameters());
  std::vector<StepPhase> phases;
  train_step(st, first_batch(samples, cfg), nullptr, [&](StepPhase phase) {
    phases.push_back(phase);
    const auto g = hash_params(st.generator.parameters());
    const auto d = hash_params(st.discriminator.parameters());
    if (phase == StepPhase::discriminator_updated) {
      CHECK(g == g0);
      CHECK(d != d_last);
      d_last = d;
    } else {
      CHECK(d == d_last);
      CHECK(g != g0);
    }
  });
  CHECK(phases == std::vector<StepPhase>{StepPhase::discriminator_updated, StepPhase::discriminator_updated,
                                         StepPhase::generator_updated});
}

TEST_CASE("adversarial step terms") {
  const auto samples = tiny_samples();
  for (LossConvention conv : {LossConvention::paper_equation, LossConvention::standard_gan}) {
    for (bool smooth : {false, true}) {
      TrainConfig cfg = tiny_config();
      cfg.convention = conv;
      cfg.label_smoothing = smooth;
      TrainState st(cfg);
      ScoreRange range;
      const LossBreakdown l = train_step(st, first_batch(samples, cfg), &range);
      CHECK(std::isfinite(l.adv_d));
      CHECK(l.adv_g > 0.0);
      CHECK(l.total_g == total_generator_objective(l.adv_g, l.rec, cfg.lambda_rec));
      CHECK(range.min > 0.0);
      CHECK(range.max < 1.0);
    }
  }
}

TEST_CASE("non-finite loss aborts with the term and step") {
  TrainConfig cfg = tiny_config();
  auto samples = tiny_samples();
  TrainState st(cfg);
  Batch b = first_batch(samples, cfg);
  b.one_hot[5] = std::nanf("");
  try {
    train_step(st, b);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("non-finite rec") != std::string::npos);
    CHECK(msg.find("step 1") != std::string::npos);
  }

  // A NaN pixel is zeroed by the first relu but poisons the weight gradient.
  Batch c = first_batch(samples, cfg);
  c.images[5] = std::nanf("");
  try {
    train_step(st, c);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("enc0.conv.weight") != std::string::npos);
    CHECK(msg.find("step 1") != std::string::npos);
  }

  const fs::path dir = scratch_dir("abort");
  samples[2].image[0] = std::nanf("");
  TrainOptions opts;
  opts.out_dir = dir;
  CHECK_THROWS_AS(train(samples, 2, cfg, opts), NumericError);
  CHECK(fs::exists(dir / "checkpoint.partial.bin"));
  CHECK(fs::exists(dir / "history.txt"));
  CHECK_FALSE(fs::exists(dir / "checkpoint.bin"));
}

TEST_CASE("training batches") {
  const auto samples = tiny_samples(15);
  const TrainConfig cfg = tiny_config();
  const std::vector<std::size_t> train_idx{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11};
  CHECK(batches_per_epoch(12, 4) == 3);
  CHECK(batches_per_epoch(13, 4) == 4);
  for (std::uint64_t epoch = 0; epoch < 3; ++epoch) {
    std::multiset<std::size_t> seen;
    for (std::uint64_t k = 0; k < 3; ++k) {
      const Batch b = training_batch(samples, train_idx, 2, cfg, epoch * 3 + k);
      CHECK(b.images.dim(0) == 4);
      seen.insert(b.indices.begin(), b.indices.end());
    }
    CHECK(seen == std::multiset<std::size_t>(train_idx.begin(), train_idx.end()));
  }
  const Batch a = training_batch(samples, train_idx, 2, cfg, 4);
  const Batch b = training_batch(samples, train_idx, 2, cfg, 4);
  CHECK(a.images == b.images);
  CHECK(a.indices == b.indices);
  CHECK(training_batch(samples, train_idx, 2, cfg, 0).indices != training_batch(samples, train_idx, 2, cfg, 3).indices);
}

TEST_CASE("zero steps returns the initial networks") {
  TrainConfig cfg = tiny_config();
  cfg.steps = 0;
  const auto samples = tiny_samples();
  TrainResult r = train(samples, 2, cfg);
  TrainState fresh(r.state.config);
  CHECK(hash_params(r.state.generator.parameters()) == hash_params(fresh.generator.parameters()));
  CHECK(hash_params(r.state.discriminator.parameters()) == hash_params(fresh.discriminator.parameters()));
  CHECK(r.history.steps.empty());
  CHECK(r.history.evals.size() == 1);
}

TEST_CASE("training is deterministic") {
  const auto samples = tiny_samples();
  const TrainConfig cfg = tiny_config();
  const fs::path a = scratch_dir("det_a"), b = scratch_dir("det_b");
  TrainOptions oa, ob;
  oa.out_dir = a;
  ob.out_dir = b;
  const TrainResult ra = train(samples, 2, cfg, oa);
  const TrainResult rb = train(samples, 2, cfg, ob);
  CHECK(format_history(ra.history) == format_history(rb.history));
  CHECK(read_file_bytes(a / "checkpoint.bin") == read_file_bytes(b / "checkpoint.bin"));
  CHECK(read_file_bytes(a / "best.bin") == read_file_bytes(b / "best.bin"));
  CHECK(read_text(a / "report.txt") == read_text(b / "report.txt"));
  CHECK(ra.history.steps.size() == 6);
  CHECK(ra.history.evals.size() == 2);
  for (std::size_t i = 0; i < ra.history.steps.size(); ++i) CHECK(ra.history.steps[i].step == i + 1);

  const std::string history = read_text(a / "history.txt");
  CHECK(history.rfind("step=1 rec=", 0) == 0);
  CHECK(history.find(" adv_d=") != std::string::npos);
  CHECK(history.find(" total_g=") != std::string::npos);

  TrainConfig other = cfg;
  other.seed = 18;
  CHECK(format_history(train(samples, 2, other).history) != format_history(ra.history));
}

TEST_CASE("evaluation with stub predictors") {
  const auto samples = tiny_samples(10, 3);
  std::vector<std::size_t> idx{1, 3, 4, 7, 9};

  std::size_t cursor = 0;
  const Predictor copy_truth = [&](const Tensor& images) {
    const std::size_t n = images.dim(0), h = images.dim(2), w = images.dim(3);
    Tensor out({n, 3, h, w}, 0.0f);
    for (std::size_t k = 0; k < n; ++k) {
      const Tensor oh = one_hot(samples[idx[cursor++]].labels, 3);
      std::copy(oh.data().begin(), oh.data().end(), out.data().begin() + static_cast<long>(k * oh.size()));
    }
    return out;
  };
  const MetricsReport perfect = make_report("copy", evaluate_counts(copy_truth, samples, idx, 3, 2));
  CHECK(perfect.pixel_accuracy == 1.0);
  CHECK(perfect.recall == 1.0);
  CHECK(perfect.iou == 1.0);
  CHECK(perfect.dice == 1.0);

  const Predictor background = [](const Tensor& images) {
    Tensor out({images.dim(0), 3, images.dim(2), images.dim(3)}, 0.0f);
    const std::size_t plane = images.dim(2) * images.dim(3);
    for (std::size_t k = 0; k < images.dim(0); ++k)
      std::fill_n(out.data().begin() + static_cast<long>(k * 3 * plane), plane, 1.0f);
    return out;
  };
  std::size_t bg = 0, total = 0;
  for (std::size_t i : idx) {
    for (auto v : samples[i].labels.values()) bg += v == 0;
    total += samples[i].labels.size();
  }
  const MetricsReport constant = make_report("bg", evaluate_counts(background, samples, idx, 3));
  CHECK(constant.pixel_accuracy == static_cast<double>(bg) / static_cast<double>(total));
  CHECK(constant.dice == 0.0);
  CHECK(constant.iou == 0.0);

  TrainState st(tiny_config());
  const auto all = split_by_index(10, 0.0).train;
  const auto two_class = tiny_samples(10, 2);
  const MetricsReport e1 = evaluate(st.generator, two_class, all);
  const MetricsReport e2 = evaluate(st.generator, two_class, all);
  CHECK(format_report_line(e1) == format_report_line(e2));
  CHECK_THROWS_AS(evaluate(st.generator, two_class, std::vector<std::size_t>{}), DataError);
}

TEST_CASE("checkpoint round-trip") {
  const auto samples = tiny_samples();
  TrainConfig cfg = tiny_config();
  cfg.steps = 3;
  TrainResult r = train(samples, 2, cfg);
  const auto bytes = encode_checkpoint(r.state);
  TrainState back = decode_checkpoint(bytes);
  CHECK(encode_checkpoint(back) == bytes);
  CHECK(back.step == 3);
  CHECK(back.best_dice == r.state.best_dice);
  CHECK(format_train_config(back.config) == format_train_config(r.state.config));

  const Tensor x = first_batch(samples, cfg).images;
  CHECK(back.generator.forward(x, Mode::eval) == r.state.generator.forward(x, Mode::eval));
  const Tensor maps = r.state.generator.forward(x, Mode::eval);
  CHECK(back.discriminator.forward(maps, Mode::eval) == r.state.discriminator.forward(maps, Mode::eval));

  const fs::path dir = scratch_dir("ckpt");
  save_checkpoint(dir / "c.bin", r.state);
  CHECK(read_file_bytes(dir / "c.bin") == bytes);
  TrainState loaded = load_checkpoint(dir / "c.bin");
  CHECK(encode_checkpoint(loaded) == bytes);

  // Fresh state without optimizer moments also round-trips.
  TrainState fresh(cfg);
  const auto fresh_bytes = encode_checkpoint(fresh);
  TrainState fresh_back = decode_checkpoint(fresh_bytes);
  CHECK(encode_checkpoint(fresh_back) == fresh_bytes);
}

TEST_CASE("corrupt checkpoints raise errors") {
  TrainState st(tiny_config());
  const auto bytes = encode_checkpoint(st);

  auto wrong_version = bytes;
  wrong_version[4] = 2;
  try {
    decode_checkpoint(wrong_version);
    FAIL("expected VersionError");
  } catch (const VersionError& e) {
    CHECK(e.found() == 2);
    CHECK(e.offset() == 4);
  }

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad_magic), FormatError);

  for (std::size_t len : {0ul, 3ul, 5ul, 9ul, 40ul, bytes.size() / 2, bytes.size() - 1}) {
    CAPTURE(len);
    const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + static_cast<long>(len));
    CHECK_THROWS_AS(decode_checkpoint(cut), FormatError);
  }
  auto trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_AS(decode_checkpoint(trailing), FormatError);

  const fs::path dir = scratch_dir("corrupt");
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.bin"), DataError);
}

TEST_CASE("resume matches an uninterrupted run") {
  const auto samples = tiny_samples();
  TrainConfig cfg = tiny_config();
  cfg.steps = 8;
  cfg.eval_every = 4;
  const fs::path straight = scratch_dir("straight"), first = scratch_dir("first"), second = scratch_dir("second");

  TrainOptions os;
  os.out_dir = straight;
  const TrainResult full = train(samples, 2, cfg, os);

  TrainConfig half = cfg;
  half.steps = 4;
  TrainOptions o1;
  o1.out_dir = first;
  train(samples, 2, half, o1);

  TrainOptions o2;
  o2.out_dir = second;
  o2.resume_from = first / "checkpoint.bin";
  const TrainResult resumed = train(samples, 2, cfg, o2);

  REQUIRE(resumed.history.steps.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(format_history_line(resumed.history.steps[i]) == format_history_line(full.history.steps[4 + i]));
  }
  CHECK(read_file_bytes(second / "checkpoint.bin") == read_file_bytes(straight / "checkpoint.bin"));
  CHECK(read_text(second / "report.txt") == read_text(straight / "report.txt"));
}

TEST_CASE("train reads a manifest") {
  const fs::path dir = scratch_dir("manifest");
  const auto samples = tiny_samples(10);
  write_dataset(dir / "data", samples, 2);
  TrainConfig cfg = tiny_config();
  cfg.steps = 2;
  const TrainResult r = train(read_manifest(dir / "data" / "manifest.txt"), cfg);
  CHECK(r.history.steps.size() == 2);
  CHECK(format_history(r.history) == format_history(train(samples, 2, cfg).history));

  TrainConfig deep = cfg;
  deep.net.encoder_channels = {4, 4, 4, 4, 4};
  CHECK_THROWS_AS(train(samples, 2, deep), ConfigError);
}
