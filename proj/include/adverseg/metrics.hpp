#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "adverseg/data.hpp"

namespace adverseg {

struct ClassCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  friend bool operator==(const ClassCounts&, const ClassCounts&) = default;
};

/// One-vs-rest pixel counts per class. Counts from disjoint image sets merge
/// by addition.
struct ConfusionCounts {
  std::vector<ClassCounts> classes;
  std::uint64_t total = 0;

  std::size_t num_classes() const noexcept { return classes.size(); }
  ConfusionCounts& operator+=(const ConfusionCounts& other);

  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

ConfusionCounts confusion(const LabelMap& pred, const LabelMap& truth, std::size_t num_classes);

enum class Averaging {
  foreground_macro,  // unweighted mean over classes c >= 1
  all_macro,         // unweighted mean over every class, background included
};

/// A macro-averaged metric plus its per-class values.
///
/// A class with no ground-truth pixels is skipped from the mean and listed
/// in `skipped`. Its per-class value is 1.0 when the prediction also has no
/// pixels of that class; otherwise recall is undefined (nullopt) and IoU and
/// Dice are 0. When every eligible class is skipped the mean is 1.0 if no
/// eligible class was predicted anywhere and 0.0 otherwise.
struct MetricValue {
  double value = 0.0;
  std::vector<std::optional<double>> per_class;
  std::vector<std::size_t> skipped;
};

// Correct pixels over total pixels; throws DataError when total is 0.
double pixel_accuracy(const ConfusionCounts& counts);
MetricValue recall(const ConfusionCounts& counts, Averaging averaging = Averaging::foreground_macro);
MetricValue iou(const ConfusionCounts& counts, Averaging averaging = Averaging::foreground_macro);
MetricValue dice(const ConfusionCounts& counts, Averaging averaging = Averaging::foreground_macro);

// Per-pixel argmax over axis 0 of [C,H,W]; ties resolve to the lowest class.
LabelMap argmax_labels(const Tensor& prob_map);

struct MetricsReport {
  std::string model;
  double pixel_accuracy = 0.0;
  double recall = 0.0;
  double iou = 0.0;
  double dice = 0.0;
  Averaging averaging = Averaging::foreground_macro;
  std::vector<std::optional<double>> recall_per_class;
  std::vector<std::optional<double>> iou_per_class;
  std::vector<std::optional<double>> dice_per_class;
  std::vector<std::size_t> skipped;
};

MetricsReport make_report(const std::string& model, const ConfusionCounts& counts,
                          Averaging averaging = Averaging::foreground_macro);

// Columns understood by render_table: pa, recall, iou, dice.
const std::vector<std::string>& report_columns();
// Throws ConfigError listing the valid columns on an unknown name.
std::vector<std::string> parse_columns(const std::string& comma_list);

/// Fixed-width table: a header row, then one row per report; values printed
/// with 4 decimals, columns separated by two spaces.
std::string render_table(const std::vector<MetricsReport>& reports, const std::vector<std::string>& columns);

/// One line: `model=<name> pa=<v> recall=<v> iou=<v> dice=<v> averaging=<mode> ...`
/// followed by per-class entries (`dice_c1=<v>`, `na` when undefined) and
/// `skipped=<c,...>`. Names containing whitespace are double-quoted.
std::string format_report_line(const MetricsReport& report);
// Parses one line produced by format_report_line (per-class fields optional).
MetricsReport parse_report_line(const std::string& line);
// Every non-empty, non-comment line of a report file.
std::vector<MetricsReport> parse_report_text(const std::string& text);

// Shortest decimal that round-trips to the same double.
std::string format_double(double v);

}  // namespace adverseg
