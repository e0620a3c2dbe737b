#include "igan/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

namespace igan::io {

namespace {

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

std::filesystem::path temp_sibling(const std::filesystem::path& target) {
  std::random_device rd;
  auto name = target.filename().string() + ".tmp" + std::to_string(rd());
  return target.parent_path() / name;
}

void write_file_atomic(const std::filesystem::path& target, const void* data, std::size_t n) {
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  const auto tmp = temp_sibling(target);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw IoError("write failed for " + target.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, target, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot move temp file into place at " + target.string());
  }
}

}  // namespace

void BinaryWriter::bytes(const void* p, std::size_t n) {
  const auto* c = static_cast<const unsigned char*>(p);
  buf_.insert(buf_.end(), c, c + n);
}

void BinaryWriter::u32(std::uint32_t v) {
  v = to_little(v);
  bytes(&v, sizeof v);
}

void BinaryWriter::u64(std::uint64_t v) {
  v = to_little(v);
  bytes(&v, sizeof v);
}

void BinaryWriter::str(const std::string& s) {
  u32(static_cast<std::uint32_t>(s.size()));
  bytes(s.data(), s.size());
}

void BinaryWriter::f32(std::span<const float> v) {
  if constexpr (std::endian::native == std::endian::little) {
    bytes(v.data(), v.size_bytes());
  } else {
    for (float f : v) {
      std::uint32_t u;
      std::memcpy(&u, &f, 4);
      u32(u);
    }
  }
}

void BinaryWriter::i32(std::span<const std::int32_t> v) {
  for (auto x : v) u32(static_cast<std::uint32_t>(x));
}

void BinaryWriter::commit(const std::filesystem::path& target) const {
  write_file_atomic(target, buf_.data(), buf_.size());
}

BinaryReader::BinaryReader(const std::filesystem::path& file) : path_(file) {
  if (!std::filesystem::exists(file)) throw MissingDataError(file);
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open " + file.string());
  buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void BinaryReader::fail(const std::string& what) const { throw CorruptFileError(path_, off_, what); }

void BinaryReader::bytes(void* p, std::size_t n) {
  if (buf_.size() - off_ < n)
    fail("truncated: needed " + std::to_string(n) + " bytes, " +
         std::to_string(buf_.size() - off_) + " remain");
  std::memcpy(p, buf_.data() + off_, n);
  off_ += n;
}

std::uint32_t BinaryReader::u32() {
  std::uint32_t v;
  bytes(&v, sizeof v);
  return to_little(v);
}

std::uint64_t BinaryReader::u64() {
  std::uint64_t v;
  bytes(&v, sizeof v);
  return to_little(v);
}

std::string BinaryReader::str() {
  const auto n = u32();
  if (n > buf_.size() - off_) fail("string length " + std::to_string(n) + " exceeds file");
  std::string s(n, '\0');
  bytes(s.data(), n);
  return s;
}

void BinaryReader::f32(std::span<float> out) {
  bytes(out.data(), out.size_bytes());
  if constexpr (std::endian::native == std::endian::big) {
    for (float& f : out) {
      std::uint32_t u;
      std::memcpy(&u, &f, 4);
      u = to_little(u);
      std::memcpy(&f, &u, 4);
    }
  }
}

void BinaryReader::i32(std::span<std::int32_t> out) {
  for (auto& x : out) x = static_cast<std::int32_t>(u32());
}

void BinaryReader::expect_magic(const char (&magic)[9]) {
  char got[8];
  bytes(got, 8);
  if (std::memcmp(got, magic, 8) != 0) {
    off_ -= 8;
    fail("bad magic, expected " + std::string(magic, 8));
  }
}

void write_text_atomic(const std::filesystem::path& target, const std::string& text) {
  write_file_atomic(target, text.data(), text.size());
}

std::string read_text(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw MissingDataError(file);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace igan::io
