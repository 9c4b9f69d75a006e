#include "adverseg/metrics.hpp"

#include <charconv>
#include <cstdio>
#include <sstream>

namespace adverseg {

namespace {

enum class Kind { recall, iou, dice };

std::optional<double> class_value(const ClassCounts& c, Kind kind) {
  const bool truth_absent = c.tp + c.fn == 0;
  const bool pred_absent = c.tp + c.fp == 0;
  if (truth_absent && pred_absent) return 1.0;
  const auto tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp), fn = static_cast<double>(c.fn);
  switch (kind) {
    case Kind::recall:
      if (truth_absent) return std::nullopt;
      return tp / (tp + fn);
    case Kind::iou:
      return tp / (tp + fp + fn);
    case Kind::dice:
      return 2.0 * tp / (2.0 * tp + fp + fn);
  }
  return std::nullopt;
}

MetricValue macro(const ConfusionCounts& counts, Averaging averaging, Kind kind) {
  MetricValue out;
  const std::size_t first = averaging == Averaging::foreground_macro ? 1 : 0;
  double total = 0.0;
  std::size_t used = 0;
  bool predicted_absent_class = false;
  for (std::size_t c = 0; c < counts.num_classes(); ++c) {
    const ClassCounts& cc = counts.classes[c];
    out.per_class.push_back(class_value(cc, kind));
    if (c < first) continue;
    if (cc.tp + cc.fn == 0) {
      out.skipped.push_back(c);
      if (cc.fp > 0) predicted_absent_class = true;
      continue;
    }
    total += *out.per_class.back();
    ++used;
  }
  if (used > 0) {
    out.value = total / static_cast<double>(used);
  } else {
    out.value = predicted_absent_class ? 0.0 : 1.0;
  }
  return out;
}

std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

const char* column_title(const std::string& column) {
  if (column == "pa") return "Pixel Accuracy";
  if (column == "recall") return "Recall";
  if (column == "iou") return "IOU";
  return "Dice";
}

double column_value(const MetricsReport& r, const std::string& column) {
  if (column == "pa") return r.pixel_accuracy;
  if (column == "recall") return r.recall;
  if (column == "iou") return r.iou;
  return r.dice;
}

std::string averaging_name(Averaging a) { return a == Averaging::foreground_macro ? "foreground_macro" : "all_macro"; }

double parse_double(const std::string& key, const std::string& text) {
  double v = 0.0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw DataError("report: bad value for " + key + ": '" + text + "'");
  return v;
}

std::vector<std::pair<std::string, std::string>> tokenize_pairs(const std::string& line) {
  std::vector<std::pair<std::string, std::string>> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i >= line.size()) break;
    const std::size_t eq = line.find('=', i);
    if (eq == std::string::npos) throw DataError("report: expected key=value near '" + line.substr(i) + "'");
    std::string key = line.substr(i, eq - i);
    if (key.empty() || key.find_first_of(" \t") != std::string::npos) {
      throw DataError("report: malformed key near '" + line.substr(i) + "'");
    }
    i = eq + 1;
    std::string value;
    if (i < line.size() && line[i] == '"') {
      const std::size_t close = line.find('"', i + 1);
      if (close == std::string::npos) throw DataError("report: unterminated quote");
      value = line.substr(i + 1, close - i - 1);
      i = close + 1;
    } else {
      const std::size_t start = i;
      while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
      value = line.substr(start, i - start);
    }
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

void append_per_class(std::string& out, const char* prefix, const std::vector<std::optional<double>>& values) {
  for (std::size_t c = 0; c < values.size(); ++c) {
    out += " ";
    out += prefix;
    out += "_c" + std::to_string(c) + "=" + (values[c] ? format_double(*values[c]) : std::string("na"));
  }
}

}  // namespace

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& other) {
  if (classes.empty()) classes.resize(other.classes.size());
  if (classes.size() != other.classes.size()) throw DataError("confusion counts: class count mismatch");
  for (std::size_t c = 0; c < classes.size(); ++c) {
    classes[c].tp += other.classes[c].tp;
    classes[c].fp += other.classes[c].fp;
    classes[c].fn += other.classes[c].fn;
    classes[c].tn += other.classes[c].tn;
  }
  total += other.total;
  return *this;
}

ConfusionCounts confusion(const LabelMap& pred, const LabelMap& truth, std::size_t num_classes) {
  if (pred.shape() != truth.shape()) {
    throw DataError("confusion: shape mismatch " + shape_str(pred.shape()) + " vs " + shape_str(truth.shape()));
  }
  ConfusionCounts counts;
  counts.classes.resize(num_classes);
  counts.total = pred.size();
  std::vector<std::uint64_t> pred_hist(num_classes, 0), truth_hist(num_classes, 0), hit(num_classes, 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const std::size_t p = pred[i], t = truth[i];
    if (p >= num_classes || t >= num_classes) {
      throw DataError("confusion: label out of range at pixel " + std::to_string(i));
    }
    ++pred_hist[p];
    ++truth_hist[t];
    if (p == t) ++hit[p];
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    ClassCounts& cc = counts.classes[c];
    cc.tp = hit[c];
    cc.fp = pred_hist[c] - hit[c];
    cc.fn = truth_hist[c] - hit[c];
    cc.tn = counts.total - cc.tp - cc.fp - cc.fn;
  }
  return counts;
}

double pixel_accuracy(const ConfusionCounts& counts) {
  if (counts.total == 0) throw DataError("pixel_accuracy: no pixels");
  std::uint64_t correct = 0;
  for (const auto& c : counts.classes) correct += c.tp;
  return static_cast<double>(correct) / static_cast<double>(counts.total);
}

MetricValue recall(const ConfusionCounts& counts, Averaging averaging) { return macro(counts, averaging, Kind::recall); }
MetricValue iou(const ConfusionCounts& counts, Averaging averaging) { return macro(counts, averaging, Kind::iou); }
MetricValue dice(const ConfusionCounts& counts, Averaging averaging) { return macro(counts, averaging, Kind::dice); }

LabelMap argmax_labels(const Tensor& prob_map) {
  if (prob_map.rank() != 3) throw ShapeError("argmax_labels expects [C,H,W], got " + shape_str(prob_map.shape()));
  const std::size_t channels = prob_map.dim(0), h = prob_map.dim(1), w = prob_map.dim(2), plane = h * w;
  if (channels > 256) throw ShapeError("argmax_labels: more than 256 classes");
  LabelMap out({h, w}, std::uint8_t{0});
  for (std::size_t i = 0; i < plane; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < channels; ++c) {
      if (prob_map[c * plane + i] > prob_map[best * plane + i]) best = c;
    }
    out[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

MetricsReport make_report(const std::string& model, const ConfusionCounts& counts, Averaging averaging) {
  MetricsReport r;
  r.model = model;
  r.averaging = averaging;
  r.pixel_accuracy = pixel_accuracy(counts);
  const MetricValue rec = recall(counts, averaging);
  const MetricValue jac = iou(counts, averaging);
  const MetricValue dsc = dice(counts, averaging);
  r.recall = rec.value;
  r.iou = jac.value;
  r.dice = dsc.value;
  r.recall_per_class = rec.per_class;
  r.iou_per_class = jac.per_class;
  r.dice_per_class = dsc.per_class;
  r.skipped = rec.skipped;
  return r;
}

const std::vector<std::string>& report_columns() {
  static const std::vector<std::string> columns{"pa", "recall", "iou", "dice"};
  return columns;
}

std::vector<std::string> parse_columns(const std::string& comma_list) {
  std::vector<std::string> out;
  std::stringstream ss(comma_list);
  for (std::string col; std::getline(ss, col, ',');) {
    const auto& valid = report_columns();
    if (std::find(valid.begin(), valid.end(), col) == valid.end()) {
      throw ConfigError("unknown column '" + col + "'; valid columns: pa, recall, iou, dice");
    }
    out.push_back(col);
  }
  if (out.empty()) throw ConfigError("no columns given; valid columns: pa, recall, iou, dice");
  return out;
}

std::string render_table(const std::vector<MetricsReport>& reports, const std::vector<std::string>& columns) {
  if (reports.empty()) throw DataError("render_table: no reports");
  std::size_t name_width = 5;  // "Model"
  for (const auto& r : reports) name_width = std::max(name_width, r.model.size());
  std::vector<std::size_t> widths;
  for (const auto& col : columns) widths.push_back(std::max<std::size_t>(6, std::string(column_title(col)).size()));

  auto pad_right = [](const std::string& s, std::size_t w) { return s + std::string(w - std::min(w, s.size()), ' '); };
  auto pad_left = [](const std::string& s, std::size_t w) { return std::string(w - std::min(w, s.size()), ' ') + s; };

  std::string out = pad_right("Model", name_width);
  for (std::size_t j = 0; j < columns.size(); ++j) out += "  " + pad_left(column_title(columns[j]), widths[j]);
  out += "\n";
  for (const auto& r : reports) {
    std::string row = pad_right(r.model, name_width);
    for (std::size_t j = 0; j < columns.size(); ++j) row += "  " + pad_left(fixed4(column_value(r, columns[j])), widths[j]);
    out += row + "\n";
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return ec == std::errc() ? std::string(buf, ptr) : std::string("nan");
}

std::string format_report_line(const MetricsReport& r) {
  const bool quote = r.model.find_first_of(" \t") != std::string::npos;
  std::string out = "model=" + (quote ? "\"" + r.model + "\"" : r.model);
  out += " pa=" + format_double(r.pixel_accuracy);
  out += " recall=" + format_double(r.recall);
  out += " iou=" + format_double(r.iou);
  out += " dice=" + format_double(r.dice);
  out += " averaging=" + averaging_name(r.averaging);
  append_per_class(out, "recall", r.recall_per_class);
  append_per_class(out, "iou", r.iou_per_class);
  append_per_class(out, "dice", r.dice_per_class);
  std::string skipped;
  for (std::size_t c : r.skipped) skipped += (skipped.empty() ? "" : ",") + std::to_string(c);
  out += " skipped=" + (skipped.empty() ? std::string("none") : skipped);
  return out;
}

MetricsReport parse_report_line(const std::string& line) {
  MetricsReport r;
  bool have_model = false;
  auto set_per_class = [](std::vector<std::optional<double>>& v, std::size_t c, const std::string& key,
                          const std::string& value) {
    if (v.size() <= c) v.resize(c + 1);
    v[c] = value == "na" ? std::nullopt : std::optional<double>(parse_double(key, value));
  };
  for (const auto& [key, value] : tokenize_pairs(line)) {
    if (key == "model") {
      r.model = value;
      have_model = true;
    } else if (key == "pa") {
      r.pixel_accuracy = parse_double(key, value);
    } else if (key == "recall") {
      r.recall = parse_double(key, value);
    } else if (key == "iou") {
      r.iou = parse_double(key, value);
    } else if (key == "dice") {
      r.dice = parse_double(key, value);
    } else if (key == "averaging") {
      if (value == "foreground_macro") {
        r.averaging = Averaging::foreground_macro;
      } else if (value == "all_macro") {
        r.averaging = Averaging::all_macro;
      } else {
        throw DataError("report: unknown averaging '" + value + "'");
      }
    } else if (key == "skipped") {
      if (value != "none") {
        std::stringstream ss(value);
        for (std::string tok; std::getline(ss, tok, ',');) r.skipped.push_back(std::stoul(tok));
      }
    } else if (const auto pos = key.find("_c"); pos != std::string::npos) {
      const std::string metric = key.substr(0, pos);
      const std::size_t c = std::stoul(key.substr(pos + 2));
      if (metric == "recall") {
        set_per_class(r.recall_per_class, c, key, value);
      } else if (metric == "iou") {
        set_per_class(r.iou_per_class, c, key, value);
      } else if (metric == "dice") {
        set_per_class(r.dice_per_class, c, key, value);
      } else {
        throw DataError("report: unknown key '" + key + "'");
      }
    } else {
      throw DataError("report: unknown key '" + key + "'");
    }
  }
  if (!have_model) throw DataError("report: line has no model= field");
  return r;
}

std::vector<MetricsReport> parse_report_text(const std::string& text) {
  std::vector<MetricsReport> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    out.push_back(parse_report_line(line));
  }
  return out;
}

}  // namespace adverseg
