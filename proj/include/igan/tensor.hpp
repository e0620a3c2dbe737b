#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace igan {

/// Batched activations: one sample per row, each row a flattened CHW block.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixF = Matrix<float>;
using MatrixD = Matrix<double>;

/// Per-sample shape (channels, height, width). Flat features use height = width = 1.
struct Shape {
  int channels = 1;
  int height = 1;
  int width = 1;

  constexpr int size() const { return channels * height * width; }
  constexpr int plane() const { return height * width; }
  constexpr bool operator==(const Shape&) const = default;

  bool valid() const { return channels > 0 && height > 0 && width > 0; }

  std::string str() const {
    return "(" + std::to_string(channels) + "," + std::to_string(height) + "," +
           std::to_string(width) + ")";
  }
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline void require_cols(Eigen::Index cols, const Shape& shape, const char* where) {
  if (cols != shape.size()) {
    throw ShapeError(std::string(where) + ": expected " + std::to_string(shape.size()) +
                     " features per sample " + shape.str() + ", got " + std::to_string(cols));
  }
}

/// FNV-1a over raw bytes; used for spec hashes and parameter checksums.
inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t seed = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a(const std::string& s) { return fnv1a(s.data(), s.size()); }

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

}  // namespace igan
