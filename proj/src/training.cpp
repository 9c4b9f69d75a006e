#include "adverseg/training.hpp"

#include <chrono>
#include <cmath>

namespace adverseg {

namespace {

constexpr std::uint64_t kShuffleTag = 0x73687566;  // "shuf"
constexpr std::uint64_t kAugmentTag = 0x61756720;  // "aug "

std::uint64_t derive_stream(std::uint64_t tag, std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t s = tag;
  s = splitmix64(s) ^ a;
  s = splitmix64(s) ^ b;
  return splitmix64(s);
}

void require_finite(const char* term, double value, std::uint64_t step) {
  if (!std::isfinite(value)) {
    throw NumericError(std::string("non-finite ") + term + " (" + format_double(value) + ") at step " +
                       std::to_string(step));
  }
}

// Stacks two [B,...] tensors with equal trailing dims along axis 0.
Tensor stack_batch(const Tensor& a, const Tensor& b) {
  Shape shape = a.shape();
  shape[0] += b.dim(0);
  std::vector<float> data(a.data().begin(), a.data().end());
  data.insert(data.end(), b.data().begin(), b.data().end());
  return Tensor(shape, std::move(data));
}

Tensor batch_slice(const Tensor& a, std::size_t begin, std::size_t count) {
  Shape shape = a.shape();
  const std::size_t per = a.size() / shape[0];
  shape[0] = count;
  return Tensor(shape, std::vector<float>(a.data().begin() + static_cast<std::ptrdiff_t>(begin * per),
                                          a.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * per)));
}

template <typename F>
void with_step(std::uint64_t step, F&& f) {
  try {
    f();
  } catch (const NumericError& e) {
    throw NumericError(std::string(e.what()) + " at step " + std::to_string(step));
  }
}

TrainConfig validated(const TrainConfig& cfg) {
  cfg.validate();
  return cfg;
}

}  // namespace

TrainState::TrainState(const TrainConfig& cfg) : TrainState(validated(cfg), Rng(cfg.seed, kInitStream)) {}

TrainState::TrainState(const TrainConfig& cfg, Rng&& rng)
    : config(cfg), generator(cfg.net, rng), discriminator(cfg.net, rng) {}

std::string format_history_line(const StepRecord& r) {
  return "step=" + std::to_string(r.step) + " rec=" + format_double(r.losses.rec) +
         " adv_d=" + format_double(r.losses.adv_d) + " adv_g=" + format_double(r.losses.adv_g) +
         " total_g=" + format_double(r.losses.total_g);
}

std::string format_history(const RunHistory& history) {
  std::string out;
  for (const auto& r : history.steps) out += format_history_line(r) + "\n";
  return out;
}

LossBreakdown train_step(TrainState& st, const Batch& batch, ScoreRange* d_scores, const PhaseObserver& observer) {
  const TrainConfig& cfg = st.config;
  const std::uint64_t step = st.step + 1;
  const AdamConfig adam = cfg.adam();
  if (batch.one_hot.rank() != 4 || batch.one_hot.dim(1) != cfg.net.num_classes) {
    throw ShapeError("train_step: labels " + shape_str(batch.one_hot.shape()) + " do not match " +
                     std::to_string(cfg.net.num_classes) + " classes");
  }
  auto g_params = st.generator.parameters();
  auto d_params = st.discriminator.parameters();
  const std::span<const NamedParam<float>> g_span(g_params), d_span(d_params);

  const Tensor fake = st.generator.forward(batch.images, Mode::train);
  check_same_shape(fake, batch.one_hot, "train_step");
  LossBreakdown out;
  const LossValue<float> rec = reconstruction_loss(fake, batch.one_hot);
  require_finite("rec", rec.value, step);
  out.rec = rec.value;
  Tensor grad_fake = scale(rec.grad, static_cast<float>(cfg.lambda_rec));

  if (cfg.adversarial_enabled) {
    const Tensor* cond = cfg.net.conditional_disc ? &batch.images : nullptr;
    const std::size_t b = fake.dim(0);
    // The fake map is a plain copy here, so nothing flows back into the generator.
    const Tensor real = cfg.label_smoothing ? add_scalar(scale(batch.one_hot, 0.8f), 0.1f) : batch.one_hot;
    const Tensor pair = stack_batch(fake, real);
    const Tensor pair_images = cond ? stack_batch(batch.images, batch.images) : Tensor();
    for (std::size_t k = 0; k < cfg.d_steps_per_g_step; ++k) {
      zero_grads(d_span);
      const Tensor scores = st.discriminator.forward(pair, Mode::train, cond ? &pair_images : nullptr);
      if (d_scores) {
        for (float s : scores.data()) d_scores->include(s);
      }
      const auto d_loss = discriminator_loss(batch_slice(scores, 0, b), batch_slice(scores, b, b), cfg.convention);
      require_finite("adv_d", d_loss.value, step);
      if (k == 0) out.adv_d = d_loss.value;
      // Adam descends, so ascent is descent on the negated objective.
      const float direction = d_loss.maximize ? -1.0f : 1.0f;
      st.discriminator.backward(stack_batch(scale(d_loss.grad_fake, direction), scale(d_loss.grad_real, direction)));
      with_step(step, [&] { adam_step(d_span, st.d_adam, adam); });
      if (observer) observer(StepPhase::discriminator_updated);
    }

    const Tensor scores = st.discriminator.forward(fake, Mode::train_frozen_stats, cond);
    if (d_scores) {
      for (float s : scores.data()) d_scores->include(s);
    }
    const LossValue<float> adv_g = generator_adversarial_loss(scores);
    require_finite("adv_g", adv_g.value, step);
    out.adv_g = adv_g.value;
    accumulate(grad_fake, st.discriminator.backward(adv_g.grad));
    zero_grads(d_span);
  }

  out.total_g = total_generator_objective(out.adv_g, out.rec, cfg.lambda_rec);
  require_finite("total_g", out.total_g, step);
  zero_grads(g_span);
  st.generator.backward(grad_fake);
  with_step(step, [&] { adam_step(g_span, st.g_adam, adam); });
  st.step = step;
  if (observer) observer(StepPhase::generator_updated);
  return out;
}

std::size_t batches_per_epoch(std::size_t train_count, std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  return (train_count + batch_size - 1) / batch_size;
}

Batch training_batch(std::span<const Sample> samples, std::span<const std::size_t> train_indices,
                     std::size_t num_classes, const TrainConfig& cfg, std::uint64_t step) {
  if (train_indices.empty()) throw DataError("training_batch: no training samples");
  const std::size_t per_epoch = batches_per_epoch(train_indices.size(), cfg.batch_size);
  const std::uint64_t epoch = step / per_epoch;
  Rng shuffle(cfg.seed, derive_stream(kShuffleTag, epoch));
  const auto order = batch_indices(train_indices.size(), cfg.batch_size, &shuffle)[step % per_epoch];
  std::vector<Sample> picked;
  std::vector<std::size_t> original;
  picked.reserve(order.size());
  for (std::size_t pos : order) {
    const std::size_t idx = train_indices[pos];
    Rng aug(cfg.seed, derive_stream(kAugmentTag, epoch, idx));
    picked.push_back(augment(samples[idx], aug, cfg.augment));
    original.push_back(idx);
  }
  std::vector<std::size_t> local(picked.size());
  for (std::size_t i = 0; i < local.size(); ++i) local[i] = i;
  Batch batch = make_batch(picked, local, num_classes);
  batch.indices = std::move(original);
  return batch;
}

ConfusionCounts evaluate_counts(const Predictor& predict, std::span<const Sample> samples,
                                std::span<const std::size_t> indices, std::size_t num_classes, std::size_t batch_size) {
  if (indices.empty()) throw DataError("evaluate: no samples to evaluate");
  if (batch_size == 0) throw ConfigError("evaluate: batch_size must be >= 1");
  ConfusionCounts total;
  total.classes.resize(num_classes);
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const std::size_t count = std::min(batch_size, indices.size() - start);
    const auto chunk = indices.subspan(start, count);
    const Sample& first = samples[chunk.front()];
    const std::size_t cin = first.image.dim(0), h = first.image.dim(1), w = first.image.dim(2);
    Tensor images({count, cin, h, w}, 0.0f);
    for (std::size_t k = 0; k < count; ++k) {
      const Tensor& img = samples[chunk[k]].image;
      if (img.shape() != first.image.shape()) throw ShapeError("evaluate: samples differ in shape");
      std::copy(img.data().begin(), img.data().end(),
                images.data().begin() + static_cast<std::ptrdiff_t>(k * cin * h * w));
    }
    const Tensor prob = predict(images);
    if (prob.shape() != Shape{count, num_classes, h, w}) {
      throw ShapeError("evaluate: predictor returned " + shape_str(prob.shape()));
    }
    for (std::size_t k = 0; k < count; ++k) {
      const Tensor maps = batch_slice(prob, k, 1).reshape({num_classes, h, w});
      total += confusion(argmax_labels(maps), samples[chunk[k]].labels, num_classes);
    }
  }
  return total;
}

MetricsReport evaluate(Generator<float>& generator, std::span<const Sample> samples,
                       std::span<const std::size_t> indices, const std::string& model_name, Averaging averaging,
                       std::size_t batch_size) {
  const auto predict = [&](const Tensor& images) { return generator.forward(images, Mode::eval); };
  const ConfusionCounts counts =
      evaluate_counts(predict, samples, indices, generator.config().num_classes, batch_size);
  return make_report(model_name, counts, averaging);
}

MetricsReport evaluate(Generator<float>& generator, const DatasetManifest& manifest, const std::string& model_name,
                       Averaging averaging) {
  if (manifest.entries.empty()) throw DataError("evaluate: manifest lists no samples");
  if (manifest.num_classes != generator.config().num_classes) {
    throw DataError("evaluate: manifest has C=" + std::to_string(manifest.num_classes) + ", generator expects " +
                    std::to_string(generator.config().num_classes));
  }
  const std::vector<Sample> samples = load_dataset(manifest);
  std::vector<std::size_t> all(samples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return evaluate(generator, samples, all, model_name, averaging);
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace

TrainResult train(std::span<const Sample> samples, std::size_t num_classes, const TrainConfig& cfg_in,
                  const TrainOptions& options) {
  if (samples.empty()) throw DataError("train: dataset is empty");
  TrainConfig cfg = cfg_in;
  cfg.net.num_classes = num_classes;
  cfg.net.in_channels = samples.front().image.dim(0);
  cfg.validate();
  const std::size_t h = samples.front().image.dim(1), w = samples.front().image.dim(2);
  const std::size_t multiple = cfg.net.spatial_multiple();
  if (h % multiple != 0 || w % multiple != 0) {
    throw ConfigError("image size " + std::to_string(h) + "x" + std::to_string(w) + " is not divisible by 2^depth = " +
                      std::to_string(multiple));
  }

  TrainResult result{options.resume_from ? load_checkpoint(*options.resume_from) : TrainState(cfg), {}, {}};
  TrainState& state = result.state;
  if (options.resume_from) {
    if (state.config.net.num_classes != num_classes || state.config.net.in_channels != cfg.net.in_channels) {
      throw DataError("train: checkpoint network does not match the dataset");
    }
    state.config.steps = cfg.steps;
  }
  const TrainConfig& run = state.config;

  if (options.out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(*options.out_dir, ec);
    if (ec) throw DataError("cannot create output directory " + options.out_dir->string() + ": " + ec.message());
  }

  const Split split = split_by_index(samples.size(), run.holdout_fraction);
  if (split.train.empty()) throw DataError("train: no samples left for training after the holdout split");
  const std::vector<std::size_t>& eval_indices = split.holdout.empty() ? split.train : split.holdout;

  auto run_eval = [&] {
    EvalRecord rec{state.step, evaluate(state.generator, samples, eval_indices, "generator")};
    if (rec.report.dice > state.best_dice) {
      state.best_dice = rec.report.dice;
      if (options.out_dir) save_checkpoint(*options.out_dir / "best.bin", state);
    }
    result.history.evals.push_back(rec);
    if (options.on_eval) options.on_eval(rec);
    return rec.report;
  };

  const auto start = std::chrono::steady_clock::now();
  try {
    while (state.step < run.steps) {
      const Batch batch = training_batch(samples, split.train, num_classes, run, state.step);
      StepRecord rec;
      rec.losses = train_step(state, batch, &rec.d_scores);
      rec.step = state.step;
      rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      result.history.steps.push_back(rec);
      if (options.on_step) options.on_step(rec);
      if (run.eval_every > 0 && state.step % run.eval_every == 0 && state.step < run.steps) run_eval();
    }
  } catch (const NumericError&) {
    if (options.out_dir) {
      save_checkpoint(*options.out_dir / "checkpoint.partial.bin", state);
      write_text(*options.out_dir / "history.txt", format_history(result.history));
    }
    throw;
  }

  result.final_report = run_eval();
  if (options.out_dir) {
    save_checkpoint(*options.out_dir / "checkpoint.bin", state);
    write_text(*options.out_dir / "history.txt", format_history(result.history));
    write_text(*options.out_dir / "report.txt", format_report_line(result.final_report) + "\n");
  }
  return result;
}

TrainResult train(const DatasetManifest& manifest, const TrainConfig& cfg, const TrainOptions& options) {
  if (manifest.entries.empty()) throw DataError("train: manifest lists no samples");
  const std::vector<Sample> samples = load_dataset(manifest);
  return train(samples, manifest.num_classes, cfg, options);
}

}  // namespace adverseg
