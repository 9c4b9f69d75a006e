#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "adverseg/data.hpp"

namespace adverseg {

namespace {

constexpr std::uint8_t kMagic[4] = {0x54, 0x53, 0x52, 0x31};
constexpr std::size_t kMaxRank = 16;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[at + i]) << (8 * i);
  return v;
}

template <typename T>
std::vector<std::uint8_t> encode_header(const BasicTensor<T>& t, DType dtype) {
  if (t.empty()) throw ShapeError("tsr1: cannot encode an empty tensor");
  if (t.rank() > kMaxRank) throw ShapeError("tsr1: rank above 16");
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  out.push_back(static_cast<std::uint8_t>(t.rank()));
  for (std::size_t d : t.shape()) {
    if (d > 0xFFFFFFFFu) throw ShapeError("tsr1: dimension does not fit in u32");
    put_u32(out, static_cast<std::uint32_t>(d));
  }
  out.push_back(static_cast<std::uint8_t>(dtype));
  return out;
}

}  // namespace

std::vector<std::uint8_t> encode_tsr1(const Tensor& t) {
  std::vector<std::uint8_t> out = encode_header(t, DType::f32);
  out.reserve(out.size() + 4 * t.size());
  for (float v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

std::vector<std::uint8_t> encode_tsr1(const LabelMap& t) {
  std::vector<std::uint8_t> out = encode_header(t, DType::u8);
  out.insert(out.end(), t.data().begin(), t.data().end());
  return out;
}

Tsr1Record decode_tsr1(std::span<const std::uint8_t> bytes, std::size_t base_offset, std::size_t* consumed) {
  auto need = [&](std::size_t at, std::size_t n, const char* what) {
    if (bytes.size() < at + n) {
      throw FormatError(std::string("tsr1: truncated ") + what + " (need " + std::to_string(at + n) +
                            " bytes, have " + std::to_string(bytes.size()) + ")",
                        base_offset + std::min(bytes.size(), at));
    }
  };
  need(0, 4, "magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("tsr1: bad magic", base_offset);
  need(4, 1, "rank");
  const std::size_t rank = bytes[4];
  if (rank == 0 || rank > kMaxRank) throw FormatError("tsr1: invalid rank " + std::to_string(rank), base_offset + 4);
  need(5, 4 * rank, "dims");
  Shape shape(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    shape[i] = get_u32(bytes, 5 + 4 * i);
    if (shape[i] == 0) throw FormatError("tsr1: zero dimension", base_offset + 5 + 4 * i);
  }
  const std::size_t dtype_at = 5 + 4 * rank;
  need(dtype_at, 1, "dtype");
  const std::uint8_t tag = bytes[dtype_at];
  if (tag > 1) throw FormatError("tsr1: unknown dtype tag " + std::to_string(tag), base_offset + dtype_at);
  const std::size_t numel = shape_numel(shape);
  const std::size_t payload_at = dtype_at + 1;
  Tsr1Record rec;
  rec.dtype = static_cast<DType>(tag);
  if (rec.dtype == DType::f32) {
    need(payload_at, 4 * numel, "payload");
    std::vector<float> values(numel);
    for (std::size_t i = 0; i < numel; ++i) values[i] = std::bit_cast<float>(get_u32(bytes, payload_at + 4 * i));
    rec.f32 = Tensor(shape, std::move(values));
    if (consumed) *consumed = payload_at + 4 * numel;
  } else {
    need(payload_at, numel, "payload");
    std::vector<std::uint8_t> values(bytes.begin() + static_cast<std::ptrdiff_t>(payload_at),
                                     bytes.begin() + static_cast<std::ptrdiff_t>(payload_at + numel));
    rec.u8 = BasicTensor<std::uint8_t>(shape, std::move(values));
    if (consumed) *consumed = payload_at + numel;
  }
  return rec;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing " + path.string());
}

void write_tensor(const std::filesystem::path& path, const Tensor& t) { write_file_bytes(path, encode_tsr1(t)); }

void write_tensor(const std::filesystem::path& path, const LabelMap& t) { write_file_bytes(path, encode_tsr1(t)); }

namespace {

Tsr1Record read_record(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  std::size_t used = 0;
  Tsr1Record rec = decode_tsr1(bytes, 0, &used);
  if (used != bytes.size()) throw FormatError("tsr1: trailing bytes in " + path.string(), used);
  return rec;
}

}  // namespace

Tensor read_tensor(const std::filesystem::path& path) {
  Tsr1Record rec = read_record(path);
  if (rec.dtype != DType::f32) throw FormatError("tsr1: expected f32 payload in " + path.string(), tsr1_header_size(rec.u8.rank()) - 1);
  return std::move(rec.f32);
}

LabelMap read_label_tensor(const std::filesystem::path& path) {
  Tsr1Record rec = read_record(path);
  if (rec.dtype != DType::u8) throw FormatError("tsr1: expected u8 payload in " + path.string(), tsr1_header_size(rec.f32.rank()) - 1);
  return std::move(rec.u8);
}

}  // namespace adverseg
