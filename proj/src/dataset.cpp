#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "adverseg/data.hpp"

namespace adverseg {

namespace {

std::string strip_comment(const std::string& line) {
  const auto hash = line.find('#');
  std::string s = hash == std::string::npos ? line : line.substr(0, hash);
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::size_t parse_positive(const std::string& text, const std::string& key, std::size_t line_no) {
  std::size_t value = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || value == 0) {
    throw DataError("manifest line " + std::to_string(line_no) + ": " + key + " must be a positive integer, got '" +
                    text + "'");
  }
  return value;
}

}  // namespace

DatasetManifest parse_manifest(const std::string& text, const std::filesystem::path& root) {
  DatasetManifest m;
  m.root = root;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = strip_comment(raw);
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::vector<std::string> tokens;
    for (std::string tok; fields >> tok;) tokens.push_back(tok);
    if (!have_header) {
      bool seen[4] = {false, false, false, false};
      for (const std::string& tok : tokens) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) throw DataError("manifest line " + std::to_string(line_no) + ": expected KEY=VALUE header");
        const std::string key = tok.substr(0, eq), value = tok.substr(eq + 1);
        const std::size_t v = parse_positive(value, key, line_no);
        if (key == "C") {
          m.num_classes = v;
          seen[0] = true;
        } else if (key == "H") {
          m.height = v;
          seen[1] = true;
        } else if (key == "W") {
          m.width = v;
          seen[2] = true;
        } else if (key == "CIN") {
          m.in_channels = v;
          seen[3] = true;
        } else {
          throw DataError("manifest line " + std::to_string(line_no) + ": unknown header key '" + key + "'");
        }
      }
      if (!(seen[0] && seen[1] && seen[2] && seen[3])) {
        throw DataError("manifest line " + std::to_string(line_no) + ": header needs C=, H=, W= and CIN=");
      }
      if (m.num_classes < 2 || m.num_classes > 255) throw DataError("manifest: C must be in [2, 255]");
      have_header = true;
      continue;
    }
    if (tokens.size() != 2) {
      throw DataError("manifest line " + std::to_string(line_no) + ": expected '<image> <labels>'");
    }
    m.entries.push_back({tokens[0], tokens[1]});
  }
  if (!have_header) throw DataError("manifest: missing header line");
  return m;
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  DatasetManifest m = parse_manifest(buf.str(), path.parent_path());
  for (const auto& e : m.entries) {
    for (const auto& rel : {e.image, e.labels}) {
      if (!std::filesystem::exists(m.root / rel)) throw DataError("manifest: missing file " + (m.root / rel).string());
    }
  }
  return m;
}

std::string format_manifest(const DatasetManifest& m) {
  std::string out = "C=" + std::to_string(m.num_classes) + " H=" + std::to_string(m.height) +
                    " W=" + std::to_string(m.width) + " CIN=" + std::to_string(m.in_channels) + "\n";
  for (const auto& e : m.entries) out += e.image + " " + e.labels + "\n";
  return out;
}

std::vector<Sample> load_dataset(const DatasetManifest& m) {
  std::vector<Sample> out;
  out.reserve(m.entries.size());
  const Shape image_shape{m.in_channels, m.height, m.width};
  const Shape label_shape{m.height, m.width};
  for (const auto& e : m.entries) {
    Sample s{read_tensor(m.root / e.image), read_label_tensor(m.root / e.labels)};
    if (s.image.shape() != image_shape) {
      throw DataError("dataset: " + e.image + " has shape " + shape_str(s.image.shape()) + ", manifest declares " +
                      shape_str(image_shape));
    }
    if (s.labels.shape() != label_shape) {
      throw DataError("dataset: " + e.labels + " has shape " + shape_str(s.labels.shape()) + ", manifest declares " +
                      shape_str(label_shape));
    }
    for (std::size_t i = 0; i < s.labels.size(); ++i) {
      if (s.labels[i] >= m.num_classes) {
        throw DataError("dataset: " + e.labels + " has label " + std::to_string(s.labels[i]) + " at pixel " +
                        std::to_string(i) + ", C=" + std::to_string(m.num_classes));
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

DatasetManifest write_dataset(const std::filesystem::path& dir, std::span<const Sample> samples,
                              std::size_t num_classes) {
  if (samples.empty()) throw DataError("write_dataset: no samples");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory " + dir.string() + ": " + ec.message());
  DatasetManifest m;
  m.root = dir;
  m.num_classes = num_classes;
  m.in_channels = samples.front().image.dim(0);
  m.height = samples.front().image.dim(1);
  m.width = samples.front().image.dim(2);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    char image_name[32], label_name[32];
    std::snprintf(image_name, sizeof image_name, "image_%04zu.tsr", i);
    std::snprintf(label_name, sizeof label_name, "labels_%04zu.tsr", i);
    write_tensor(dir / image_name, samples[i].image);
    write_tensor(dir / label_name, samples[i].labels);
    m.entries.push_back({image_name, label_name});
  }
  const std::string text = format_manifest(m);
  write_file_bytes(dir / "manifest.txt",
                   std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  return m;
}

std::vector<std::vector<std::size_t>> batch_indices(std::size_t count, std::size_t batch_size, Rng* shuffle) {
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  if (shuffle) {
    for (std::size_t i = count; i > 1; --i) {
      const std::size_t j = shuffle->uniform_int(i);
      std::swap(order[i - 1], order[j]);
    }
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < count; start += batch_size) {
    const std::size_t end = std::min(count, start + batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

Batch make_batch(std::span<const Sample> samples, std::span<const std::size_t> indices, std::size_t num_classes) {
  if (indices.empty()) throw DataError("make_batch: empty index list");
  const Sample& first = samples[indices.front()];
  const std::size_t cin = first.image.dim(0), h = first.image.dim(1), w = first.image.dim(2);
  const std::size_t b = indices.size();
  Batch batch{Tensor({b, cin, h, w}, 0.0f), Tensor({b, num_classes, h, w}, 0.0f), {indices.begin(), indices.end()}};
  for (std::size_t k = 0; k < b; ++k) {
    const Sample& s = samples[indices[k]];
    if (s.image.shape() != first.image.shape() || s.labels.shape() != first.labels.shape()) {
      throw ShapeError("make_batch: sample " + std::to_string(indices[k]) + " has a different shape");
    }
    std::copy(s.image.data().begin(), s.image.data().end(), batch.images.data().begin() + static_cast<std::ptrdiff_t>(k * cin * h * w));
    const Tensor oh = one_hot(s.labels, num_classes);
    std::copy(oh.data().begin(), oh.data().end(),
              batch.one_hot.data().begin() + static_cast<std::ptrdiff_t>(k * num_classes * h * w));
  }
  return batch;
}

std::vector<Batch> batch_iter(std::span<const Sample> samples, std::size_t num_classes, std::size_t batch_size,
                              std::optional<Rng> shuffle) {
  if (samples.empty()) throw DataError("batch_iter: empty dataset");
  std::vector<Batch> out;
  for (const auto& idx : batch_indices(samples.size(), batch_size, shuffle ? &*shuffle : nullptr)) {
    out.push_back(make_batch(samples, idx, num_classes));
  }
  return out;
}

Split split_by_index(std::size_t count, double holdout_fraction) {
  if (holdout_fraction < 0.0 || holdout_fraction >= 1.0) throw ConfigError("holdout fraction must be in [0, 1)");
  const auto train_count = static_cast<std::size_t>(std::llround((1.0 - holdout_fraction) * static_cast<double>(count)));
  Split s;
  for (std::size_t i = 0; i < count; ++i) (i < train_count ? s.train : s.holdout).push_back(i);
  return s;
}

}  // namespace adverseg
