#pragma once

#include "igan/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace igan::render {

/// 8-bit RGB canvas of equally sized tiles, upscaled by nearest neighbour.
class Grid {
 public:
  Grid(int rows, int cols, Shape tile, int scale = 2, int pad = 2);

  /// Pixel values in [0,1]; one channel renders gray, three render RGB.
  void image(int row, int col, const float* values);
  /// Signed map (one plane per channel, channels averaged): red positive,
  /// blue negative, white zero, scaled by the largest magnitude.
  void signed_map(int row, int col, const float* values);
  /// Non-negative map from white to dark red; `peak` ≤ 0 scales by the map's maximum.
  void heat(int row, int col, const float* values, float peak = 0);

  int width() const { return width_; }
  int height() const { return height_; }
  const std::vector<std::uint8_t>& pixels() const { return rgb_; }
  void save(const std::filesystem::path& path) const;

 private:
  void put(int row, int col, int y, int x, std::uint8_t r, std::uint8_t g, std::uint8_t b);
  std::vector<float> collapse(const float* values) const;

  int rows_, cols_;
  Shape tile_;
  int scale_, pad_;
  int width_, height_;
  std::vector<std::uint8_t> rgb_;
};

/// K×K matrix of values in [0,1] as a white-to-red heatmap, `cell` pixels per entry.
Grid matrix_heatmap(const Eigen::MatrixXd& m, int cell = 24);

/// Writes an 8-bit RGB PNG through a temporary file and rename.
void write_png(const std::filesystem::path& path, const std::vector<std::uint8_t>& rgb, int width, int height);

}  // namespace igan::render
