#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "adverseg/rng.hpp"
#include "adverseg/tensor.hpp"

namespace adverseg {

// Integer label map, shape [H, W].
using LabelMap = BasicTensor<std::uint8_t>;

struct Sample {
  Tensor image;     // [Cin, H, W], intensities in [0, 1]
  LabelMap labels;  // [H, W], values in [0, C)

  friend bool operator==(const Sample&, const Sample&) = default;
};

/// Synthetic phantom: a star-shaped core (class 1) built from 1..k elliptic
/// lobes that all contain the core center, and for C >= 3 nested rings
/// (class c surrounds classes 1..c-1 at distance <= ring width) on background 0.
struct PhantomSpec {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t num_classes = 3;
  std::size_t in_channels = 1;
  std::size_t min_lobes = 1;
  std::size_t max_lobes = 3;
  // Radii and ring width are fractions of min(height, width).
  double min_radius = 0.10;
  double max_radius = 0.20;
  double ring_width = 0.05;
  // Per-class mean intensity; empty selects default_intensities(num_classes).
  std::vector<double> class_intensity;
  double noise_sigma = 0.05;
  std::uint64_t seed = 0;

  void validate() const;
  std::vector<double> intensities() const;
};

// Evenly spaced in [0.1, 0.9] by class index: C=2 gives {0.1, 0.9}.
std::vector<double> default_intensities(std::size_t num_classes);

Sample generate_phantom(const PhantomSpec& spec, Rng& rng);
// Sample i is generate_phantom(spec, Rng(spec.seed, i)).
std::vector<Sample> generate_dataset(const PhantomSpec& spec, std::size_t count);

struct AugmentPolicy {
  double p_flip = 0.5;    // per axis
  double p_rotate = 0.5;  // quarter turns drawn from {1, 2, 3}
  double jitter_gain = 0.1;     // gain in [1 - g, 1 + g]
  double jitter_offset = 0.05;  // offset in [-o, o]

  static AugmentPolicy none() { return {0.0, 0.0, 0.0, 0.0}; }
};

struct AugmentParams {
  bool flip_horizontal = false;
  bool flip_vertical = false;
  int quarter_turns = 0;
  double gain = 1.0;
  double offset = 0.0;
};

// Odd quarter turns are only drawn for square images so batch shapes stay fixed.
AugmentParams draw_augmentation(Rng& rng, const AugmentPolicy& policy, std::size_t height, std::size_t width);

// Flips (horizontal, then vertical), then rotation, on the two trailing axes.
template <typename T>
BasicTensor<T> apply_spatial(const BasicTensor<T>& a, const AugmentParams& params) {
  BasicTensor<T> out = a;
  if (params.flip_horizontal) out = flip_spatial(out, FlipAxis::horizontal);
  if (params.flip_vertical) out = flip_spatial(out, FlipAxis::vertical);
  if (params.quarter_turns != 0) out = rotate90(out, params.quarter_turns);
  return out;
}

// Same spatial transform on image and labels; intensity jitter on the image only.
Sample apply_augmentation(const Sample& s, const AugmentParams& params);
Sample augment(const Sample& s, Rng& rng, const AugmentPolicy& policy);

// [H, W] labels -> [C, H, W] one-hot. Out-of-range labels raise DataError.
Tensor one_hot(const LabelMap& labels, std::size_t num_classes);

// ---- TSR1 binary tensor format ---------------------------------------------
//
// "TSR1" magic (54 53 52 31), u8 rank, rank x u32 LE dims, u8 dtype tag
// (0 = f32, 1 = u8), raw little-endian payload. No padding, no compression.

enum class DType : std::uint8_t { f32 = 0, u8 = 1 };

inline constexpr std::size_t tsr1_header_size(std::size_t rank) { return 4 + 1 + 4 * rank + 1; }

std::vector<std::uint8_t> encode_tsr1(const Tensor& t);
std::vector<std::uint8_t> encode_tsr1(const LabelMap& t);

struct Tsr1Record {
  DType dtype = DType::f32;
  Tensor f32;
  BasicTensor<std::uint8_t> u8;
};

// Decodes one record starting at bytes[0]. `base_offset` is added to error
// offsets; `consumed` (if given) receives the record length.
Tsr1Record decode_tsr1(std::span<const std::uint8_t> bytes, std::size_t base_offset = 0,
                       std::size_t* consumed = nullptr);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

void write_tensor(const std::filesystem::path& path, const Tensor& t);
void write_tensor(const std::filesystem::path& path, const LabelMap& t);
// f32 payloads only; a u8 file raises FormatError.
Tensor read_tensor(const std::filesystem::path& path);
// u8 payloads only.
LabelMap read_label_tensor(const std::filesystem::path& path);

// ---- manifest ---------------------------------------------------------------

struct ManifestEntry {
  std::string image;
  std::string labels;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

/// Line-oriented text: header `C=<int> H=<int> W=<int> CIN=<int>`, then one
/// `<image-relpath> <label-relpath>` pair per line. `#` starts a comment.
/// Paths are relative to the manifest's directory.
struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;
  std::size_t num_classes = 2;
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t in_channels = 1;
};

DatasetManifest parse_manifest(const std::string& text, const std::filesystem::path& root);
DatasetManifest read_manifest(const std::filesystem::path& path);
std::string format_manifest(const DatasetManifest& manifest);

// Loads and validates every listed pair against the declared shapes and class count.
std::vector<Sample> load_dataset(const DatasetManifest& manifest);

// Writes image_NNNN.tsr / labels_NNNN.tsr pairs plus manifest.txt into `dir`.
DatasetManifest write_dataset(const std::filesystem::path& dir, std::span<const Sample> samples,
                              std::size_t num_classes);

// ---- batching ---------------------------------------------------------------

struct Batch {
  Tensor images;   // [B, Cin, H, W]
  Tensor one_hot;  // [B, C, H, W]
  std::vector<std::size_t> indices;
};

/// Partitions [0, count) into consecutive batches, the last one possibly
/// short. With a shuffle generator the order is a Fisher-Yates permutation.
std::vector<std::vector<std::size_t>> batch_indices(std::size_t count, std::size_t batch_size, Rng* shuffle = nullptr);

Batch make_batch(std::span<const Sample> samples, std::span<const std::size_t> indices, std::size_t num_classes);

// One epoch of assembled batches; empty input raises DataError.
std::vector<Batch> batch_iter(std::span<const Sample> samples, std::size_t num_classes, std::size_t batch_size,
                              std::optional<Rng> shuffle = std::nullopt);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> holdout;
};

// First round((1 - holdout_fraction) * count) indices train, the rest are held out.
Split split_by_index(std::size_t count, double holdout_fraction);

}  // namespace adverseg
