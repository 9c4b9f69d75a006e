#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "adverseg/data.hpp"
#include "adverseg/losses.hpp"
#include "adverseg/metrics.hpp"
#include "adverseg/models.hpp"
#include "adverseg/optim.hpp"

namespace adverseg {

struct TrainConfig {
  double lambda_rec = 10.0;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 0.0;
  std::size_t batch_size = 16;
  std::size_t steps = 200;
  std::uint64_t seed = 0;
  AugmentPolicy augment;
  NetConfig net;
  std::size_t d_steps_per_g_step = 1;
  bool adversarial_enabled = true;
  LossConvention convention = LossConvention::paper_equation;
  // Real maps shown to the discriminator become 0.9 / 0.1 instead of 1 / 0.
  bool label_smoothing = false;
  // Held-out evaluation cadence in steps; 0 evaluates only after the last step.
  std::size_t eval_every = 50;
  double holdout_fraction = 0.2;

  // Throws ConfigError; also validates `net`.
  void validate() const;
  AdamConfig adam() const { return {lr, beta1, beta2, adam_eps, clip_norm}; }
};

/// Line-oriented `key = value` text, `#` comments, blank lines ignored.
/// Unknown keys, duplicate keys, and malformed values raise ConfigError with
/// the line number. Keys absent from the text keep the values in `base`.
TrainConfig parse_train_config(const std::string& text, const TrainConfig& base = {});
// Applies a single `key`/`value` pair (used for command-line overrides).
void set_train_config_key(TrainConfig& cfg, const std::string& key, const std::string& value);
// Every key, one per line, in a fixed order; parse_train_config inverts it.
std::string format_train_config(const TrainConfig& cfg);
const std::vector<std::string>& train_config_keys();

inline constexpr std::uint64_t kInitStream = 0x696e6974;  // "init"

/// Networks and optimizer state driven by the training loop.
struct TrainState {
  TrainConfig config;
  Generator<float> generator;
  Discriminator<float> discriminator;
  AdamState<float> g_adam;
  AdamState<float> d_adam;
  std::uint64_t step = 0;  // completed generator updates
  double best_dice = -1.0;

  // Both networks are initialized from Rng(config.seed, kInitStream), generator first.
  explicit TrainState(const TrainConfig& cfg);

 private:
  TrainState(const TrainConfig& cfg, Rng&& rng);
};

struct ScoreRange {
  double min = 1.0;
  double max = 0.0;

  void include(double v) {
    min = std::min(min, v);
    max = std::max(max, v);
  }
};

struct StepRecord {
  std::uint64_t step = 0;  // 1-based index of the generator update
  LossBreakdown losses;
  ScoreRange d_scores;     // every discriminator output seen during the step
  double wall_seconds = 0.0;
};

struct EvalRecord {
  std::uint64_t step = 0;
  MetricsReport report;
};

struct RunHistory {
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;
};

// `step=<n> rec=<f> adv_d=<f> adv_g=<f> total_g=<f>` with round-trip doubles.
std::string format_history_line(const StepRecord& record);
std::string format_history(const RunHistory& history);

/// One adversarial iteration on `batch`.
///
/// The generator runs forward once in train mode. With adversarial training
/// enabled, the discriminator then takes d_steps_per_g_step updates on the
/// detached generator output (fake) against the one-hot truth (real), both
/// passed through it as a single concatenated batch; under the paper_equation
/// convention it ascends L_adv, under standard_gan it descends. The generator
/// then descends adv_g + lambda * rec, backpropagating through the
/// discriminator in train_frozen_stats mode without updating it. With
/// adversarial training disabled only lambda * rec is descended and the
/// adversarial terms are reported as 0.
///
/// Each reported term is measured just before the update that consumes it;
/// adv_d comes from the first discriminator update. A non-finite loss raises
/// NumericError naming the term and the step. `observer` runs after every
/// optimizer update.
enum class StepPhase { discriminator_updated, generator_updated };
using PhaseObserver = std::function<void(StepPhase)>;

LossBreakdown train_step(TrainState& state, const Batch& batch, ScoreRange* d_scores = nullptr,
                         const PhaseObserver& observer = {});

// Batches per epoch for `train_count` samples.
std::size_t batches_per_epoch(std::size_t train_count, std::size_t batch_size);

/// The batch consumed by 0-based step `step`: the order is a seeded
/// permutation of `train_indices` per epoch, and every sample gets an
/// augmentation drawn from a stream keyed by (seed, epoch, sample index), so
/// any step's batch can be rebuilt without replaying earlier ones.
Batch training_batch(std::span<const Sample> samples, std::span<const std::size_t> train_indices,
                     std::size_t num_classes, const TrainConfig& cfg, std::uint64_t step);

using Predictor = std::function<Tensor(const Tensor& images)>;

// Counts over every listed sample of argmax(predict(images)) against the labels.
ConfusionCounts evaluate_counts(const Predictor& predict, std::span<const Sample> samples,
                                std::span<const std::size_t> indices, std::size_t num_classes,
                                std::size_t batch_size = 16);

// Generator in eval mode. Empty `indices` raises DataError.
MetricsReport evaluate(Generator<float>& generator, std::span<const Sample> samples,
                       std::span<const std::size_t> indices, const std::string& model_name = "generator",
                       Averaging averaging = Averaging::foreground_macro, std::size_t batch_size = 16);
MetricsReport evaluate(Generator<float>& generator, const DatasetManifest& manifest,
                       const std::string& model_name = "generator",
                       Averaging averaging = Averaging::foreground_macro);

// ---- checkpoints ------------------------------------------------------------

inline constexpr std::uint8_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(TrainState& state);
// Throws FormatError (with byte offset) on corruption and VersionError on a version mismatch.
TrainState decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& path);

// ---- driver -----------------------------------------------------------------

struct TrainOptions {
  // When set: checkpoint.bin, best.bin, history.txt and report.txt are written here.
  std::optional<std::filesystem::path> out_dir;
  // Continues from this checkpoint; its config replaces the given one except for `steps`.
  std::optional<std::filesystem::path> resume_from;
  std::function<void(const StepRecord&)> on_step;
  std::function<void(const EvalRecord&)> on_eval;
};

struct TrainResult {
  TrainState state;
  RunHistory history;
  MetricsReport final_report;
};

/// Step-budgeted training on the first (1 - holdout_fraction) of the samples,
/// evaluated on the rest (on the training samples when nothing is held out).
/// On a NumericError the partial state is written as checkpoint.partial.bin
/// together with the history so far before the error propagates.
TrainResult train(std::span<const Sample> samples, std::size_t num_classes, const TrainConfig& cfg,
                  const TrainOptions& options = {});
TrainResult train(const DatasetManifest& manifest, const TrainConfig& cfg, const TrainOptions& options = {});

}  // namespace adverseg
