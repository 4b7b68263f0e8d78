#include "knnmt/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "knnmt/error.hpp"

namespace knnmt {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::shape_mismatch: return "shape_mismatch";
    case ErrorKind::out_of_range: return "out_of_range";
    case ErrorKind::non_finite: return "non_finite";
    case ErrorKind::numerical: return "numerical";
    case ErrorKind::format: return "format";
    case ErrorKind::truncated: return "truncated";
    case ErrorKind::dim_mismatch: return "dim_mismatch";
    case ErrorKind::io: return "io";
    case ErrorKind::config: return "config";
  }
  return "unknown";
}

namespace {

template <typename U>
void append_le(Bytes& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
}

template <typename U>
U load_le(const std::uint8_t* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    v |= static_cast<U>(p[i]) << (8 * i);
  }
  return v;
}

}  // namespace

void ByteWriter::put_magic(std::string_view magic) {
  bytes_.insert(bytes_.end(), magic.begin(), magic.end());
}

void ByteWriter::put_u8(std::uint8_t v) { bytes_.push_back(v); }
void ByteWriter::put_u32(std::uint32_t v) { append_le(bytes_, v); }
void ByteWriter::put_u64(std::uint64_t v) { append_le(bytes_, v); }
void ByteWriter::put_f64(double v) { append_le(bytes_, std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::put_f64s(std::span<const double> values) {
  bytes_.reserve(bytes_.size() + 8 * values.size());
  for (double v : values) put_f64(v);
}

void ByteReader::need(std::size_t n) const {
  if (remaining() < n) {
    throw Error(ErrorKind::truncated, "unexpected end of data: needed " + std::to_string(n) +
                                          " bytes at offset " + std::to_string(pos_) + ", have " +
                                          std::to_string(remaining()));
  }
}

void ByteReader::expect_magic(std::string_view magic, std::string_view what) {
  if (remaining() < magic.size() ||
      std::memcmp(bytes_.data() + pos_, magic.data(), magic.size()) != 0) {
    throw Error(ErrorKind::format, "not a " + std::string(what) + " file (bad magic bytes)");
  }
  pos_ += magic.size();
}

std::uint8_t ByteReader::get_u8() {
  need(1);
  return bytes_[pos_++];
}

std::uint32_t ByteReader::get_u32() {
  need(4);
  auto v = load_le<std::uint32_t>(bytes_.data() + pos_);
  pos_ += 4;
  return v;
}

std::uint64_t ByteReader::get_u64() {
  need(8);
  auto v = load_le<std::uint64_t>(bytes_.data() + pos_);
  pos_ += 8;
  return v;
}

double ByteReader::get_f64() { return std::bit_cast<double>(get_u64()); }

void ByteReader::get_f64s(std::span<double> out) {
  need(8 * out.size());
  for (double& v : out) v = get_f64();
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorKind::io, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_file_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a64(std::string_view text, std::uint64_t seed) {
  return fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()), seed);
}

std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

}  // namespace knnmt
