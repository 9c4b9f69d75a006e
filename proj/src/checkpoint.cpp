#include <bit>
#include <cstring>
#include <map>

#include "adverseg/training.hpp"

namespace adverseg {

namespace {

constexpr std::uint8_t kMagic[4] = {'A', 'S', 'G', 'K'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void uint(std::uint64_t v, int width) {
    for (int i = 0; i < width; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void record(const std::string& name, const Tensor& t) {
    uint(name.size(), 2);
    bytes(name.data(), name.size());
    const auto enc = encode_tsr1(t);
    bytes(enc.data(), enc.size());
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

  std::size_t pos() const noexcept { return pos_; }
  bool done() const noexcept { return pos_ == b_.size(); }

  void need(std::size_t n, const char* what) const {
    if (b_.size() - pos_ < n) throw FormatError(std::string("checkpoint: truncated ") + what, pos_);
  }
  std::uint64_t uint(int width, const char* what) {
    need(static_cast<std::size_t>(width), what);
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  std::string text(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  Tensor tensor() {
    std::size_t used = 0;
    Tsr1Record rec = decode_tsr1(b_.subspan(pos_), pos_, &used);
    if (rec.dtype != DType::f32) throw FormatError("checkpoint: tensor payload is not f32", pos_);
    pos_ += used;
    return std::move(rec.f32);
  }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

// Every tensor of one network and its optimizer, keyed by checkpoint name.
template <typename Net>
std::vector<std::pair<std::string, Tensor*>> slots(const std::string& net_name, Net& net, AdamState<float>& adam,
                                                     bool with_moments) {
  std::vector<std::pair<std::string, Tensor*>> out;
  auto params = net.parameters();
  for (auto& p : params) out.emplace_back(net_name + "/" + p.name, &p.param->value);
  for (auto& b : net.buffers()) out.emplace_back(net_name + "/" + b.name, b.buffer);
  if (with_moments) {
    if (adam.m.size() != params.size()) {
      adam.m.clear();
      adam.v.clear();
      for (auto& p : params) {
        adam.m.emplace_back(p.param->value.shape(), 0.0f);
        adam.v.emplace_back(p.param->value.shape(), 0.0f);
      }
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
      out.emplace_back(net_name + ".adam_m/" + params[k].name, &adam.m[k]);
      out.emplace_back(net_name + ".adam_v/" + params[k].name, &adam.v[k]);
    }
  }
  return out;
}

std::vector<std::pair<std::string, Tensor*>> all_slots(TrainState& s, bool g_moments, bool d_moments) {
  auto out = slots("generator", s.generator, s.g_adam, g_moments);
  auto d = slots("discriminator", s.discriminator, s.d_adam, d_moments);
  out.insert(out.end(), d.begin(), d.end());
  return out;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(TrainState& state) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u8(kCheckpointVersion);
  const std::string config = format_train_config(state.config);
  w.uint(config.size(), 4);
  w.bytes(config.data(), config.size());
  w.uint(state.step, 8);
  w.uint(std::bit_cast<std::uint64_t>(state.best_dice), 8);
  w.uint(state.g_adam.step, 8);
  w.uint(state.d_adam.step, 8);
  const auto entries = all_slots(state, !state.g_adam.m.empty(), !state.d_adam.m.empty());
  w.uint(entries.size(), 4);
  for (const auto& [name, tensor] : entries) w.record(name, *tensor);
  return w.take();
}

TrainState decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.need(4, "magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("checkpoint: bad magic", 0);
  r.uint(4, "magic");
  const std::size_t version_at = r.pos();
  const auto version = static_cast<unsigned>(r.uint(1, "version"));
  if (version != kCheckpointVersion) throw VersionError(version, kCheckpointVersion, version_at);

  const std::size_t config_at = r.pos() + 4;
  const std::string config_text = r.text(r.uint(4, "config length"), "config");
  TrainConfig cfg;
  try {
    cfg = parse_train_config(config_text);
    cfg.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: invalid config snapshot: ") + e.what(), config_at);
  }
  TrainState state(cfg);
  state.step = r.uint(8, "step");
  state.best_dice = std::bit_cast<double>(r.uint(8, "best dice"));
  state.g_adam.step = r.uint(8, "generator optimizer step");
  state.d_adam.step = r.uint(8, "discriminator optimizer step");

  const std::size_t count_at = r.pos();
  const std::uint64_t count = r.uint(4, "tensor count");
  std::map<std::string, std::pair<Tensor, std::size_t>> found;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::size_t name_at = r.pos();
    std::string name = r.text(r.uint(2, "name length"), "name");
    const std::size_t tensor_at = r.pos();
    Tensor t = r.tensor();
    if (!found.emplace(std::move(name), std::pair{std::move(t), tensor_at}).second) {
      throw FormatError("checkpoint: duplicate tensor name", name_at);
    }
  }
  if (!r.done()) throw FormatError("checkpoint: trailing bytes", r.pos());

  const bool g_moments = found.count("generator.adam_m/head.weight") > 0;
  const bool d_moments = found.count("discriminator.adam_m/head.weight") > 0;
  const auto expected = all_slots(state, g_moments, d_moments);
  if (expected.size() != found.size()) {
    throw FormatError("checkpoint: expected " + std::to_string(expected.size()) + " tensors, found " +
                          std::to_string(found.size()),
                      count_at);
  }
  for (const auto& [name, slot] : expected) {
    auto it = found.find(name);
    if (it == found.end()) throw FormatError("checkpoint: missing tensor " + name, count_at);
    if (it->second.first.shape() != slot->shape()) {
      throw FormatError("checkpoint: tensor " + name + " has shape " + shape_str(it->second.first.shape()) +
                            ", expected " + shape_str(slot->shape()),
                        it->second.second);
    }
    *slot = std::move(it->second.first);
  }
  return state;
}

void save_checkpoint(const std::filesystem::path& path, TrainState& state) {
  write_file_bytes(path, encode_checkpoint(state));
}

TrainState load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file_bytes(path)); }

}  // namespace adverseg
