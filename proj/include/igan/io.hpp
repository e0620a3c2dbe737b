#pragma once

#include "igan/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace igan::io {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MissingDataError : public IoError {
 public:
  explicit MissingDataError(const std::filesystem::path& expected)
      : IoError("missing data: expected file at " + expected.string()), path(expected) {}
  std::filesystem::path path;
};

class CorruptFileError : public IoError {
 public:
  CorruptFileError(const std::filesystem::path& file, std::uint64_t off, const std::string& what)
      : IoError("corrupt file " + file.string() + " at byte offset " + std::to_string(off) + ": " +
                what),
        offset(off) {}
  std::uint64_t offset;
};

class VersionError : public IoError {
 public:
  using IoError::IoError;
};

/// Little-endian serializer into an in-memory buffer; commit() writes the
/// buffer to a sibling temp file and renames it over the target.
class BinaryWriter {
 public:
  void bytes(const void* p, std::size_t n);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void str(const std::string& s);  // u32 length + bytes
  void f32(std::span<const float> v);
  void i32(std::span<const std::int32_t> v);

  std::size_t size() const { return buf_.size(); }
  void commit(const std::filesystem::path& target) const;

 private:
  std::vector<unsigned char> buf_;
};

/// Reads a whole file and decodes little-endian fields, reporting the byte
/// offset of any short read.
class BinaryReader {
 public:
  explicit BinaryReader(const std::filesystem::path& file);

  void bytes(void* p, std::size_t n);
  std::uint32_t u32();
  std::uint64_t u64();
  std::string str();
  void f32(std::span<float> out);
  void i32(std::span<std::int32_t> out);
  void expect_magic(const char (&magic)[9]);

  std::uint64_t offset() const { return off_; }
  bool at_end() const { return off_ == buf_.size(); }
  [[noreturn]] void fail(const std::string& what) const;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::vector<unsigned char> buf_;
  std::uint64_t off_ = 0;
};

/// Writes text through the same temp-file-and-rename path as BinaryWriter.
void write_text_atomic(const std::filesystem::path& target, const std::string& text);

std::string read_text(const std::filesystem::path& file);

}  // namespace igan::io
