#include "render.hpp"

#include "igan/io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

namespace igan::render {

namespace {

std::uint8_t byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

Grid::Grid(int rows, int cols, Shape tile, int scale, int pad)
    : rows_(rows), cols_(cols), tile_(tile), scale_(scale), pad_(pad) {
  if (rows < 1 || cols < 1 || !tile.valid() || scale < 1 || pad < 0)
    throw std::invalid_argument("Grid: invalid layout");
  width_ = cols * tile.width * scale + (cols + 1) * pad;
  height_ = rows * tile.height * scale + (rows + 1) * pad;
  rgb_.assign(static_cast<std::size_t>(width_) * height_ * 3, 96);
}

void Grid::put(int row, int col, int y, int x, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  if (row < 0 || row >= rows_ || col < 0 || col >= cols_) throw std::out_of_range("Grid: tile out of range");
  const int y0 = pad_ + row * (tile_.height * scale_ + pad_) + y * scale_;
  const int x0 = pad_ + col * (tile_.width * scale_ + pad_) + x * scale_;
  for (int dy = 0; dy < scale_; ++dy)
    for (int dx = 0; dx < scale_; ++dx) {
      auto* p = &rgb_[(static_cast<std::size_t>(y0 + dy) * width_ + x0 + dx) * 3];
      p[0] = r;
      p[1] = g;
      p[2] = b;
    }
}

std::vector<float> Grid::collapse(const float* values) const {
  const int plane = tile_.plane();
  std::vector<float> out(static_cast<std::size_t>(plane), 0.0f);
  for (int c = 0; c < tile_.channels; ++c)
    for (int k = 0; k < plane; ++k) out[static_cast<std::size_t>(k)] += values[c * plane + k] / tile_.channels;
  return out;
}

void Grid::image(int row, int col, const float* values) {
  const int plane = tile_.plane();
  for (int y = 0; y < tile_.height; ++y)
    for (int x = 0; x < tile_.width; ++x) {
      const int k = y * tile_.width + x;
      if (tile_.channels >= 3)
        put(row, col, y, x, byte(values[k]), byte(values[plane + k]), byte(values[2 * plane + k]));
      else {
        const auto v = byte(values[k]);
        put(row, col, y, x, v, v, v);
      }
    }
}

void Grid::signed_map(int row, int col, const float* values) {
  const auto v = collapse(values);
  float peak = 0;
  for (float a : v) peak = std::max(peak, std::abs(a));
  for (int y = 0; y < tile_.height; ++y)
    for (int x = 0; x < tile_.width; ++x) {
      const double a = peak > 0 ? v[static_cast<std::size_t>(y * tile_.width + x)] / peak : 0.0;
      const auto fade = byte(1.0 - std::abs(a));
      if (a >= 0)
        put(row, col, y, x, 255, fade, fade);
      else
        put(row, col, y, x, fade, fade, 255);
    }
}

void Grid::heat(int row, int col, const float* values, float peak) {
  const auto v = collapse(values);
  if (peak <= 0)
    for (float a : v) peak = std::max(peak, a);
  for (int y = 0; y < tile_.height; ++y)
    for (int x = 0; x < tile_.width; ++x) {
      const double a = peak > 0 ? std::clamp(v[static_cast<std::size_t>(y * tile_.width + x)] / peak, 0.0f, 1.0f) : 0.0;
      put(row, col, y, x, byte(1.0 - 0.4 * a), byte(1.0 - a), byte(1.0 - a));
    }
}

void Grid::save(const std::filesystem::path& path) const { write_png(path, rgb_, width_, height_); }

Grid matrix_heatmap(const Eigen::MatrixXd& m, int cell) {
  Grid g(1, 1, Shape{1, static_cast<int>(m.rows()), static_cast<int>(m.cols())}, cell, 0);
  std::vector<float> v;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) v.push_back(static_cast<float>(m(i, j)));
  g.heat(0, 0, v.data(), 1.0f);
  return g;
}

void write_png(const std::filesystem::path& path, const std::vector<std::uint8_t>& rgb, int width, int height) {
  if (rgb.size() != static_cast<std::size_t>(width) * height * 3) throw std::invalid_argument("write_png: size mismatch");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  std::unique_ptr<FILE, int (*)(FILE*)> f(std::fopen(tmp.c_str(), "wb"), &std::fclose);
  if (!f) throw io::IoError("cannot open " + tmp + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw io::IoError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw io::IoError("libpng failed writing " + tmp);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y)
    png_write_row(png, const_cast<png_bytep>(&rgb[static_cast<std::size_t>(y) * width * 3]));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  f.reset();
  std::filesystem::rename(tmp, path);
}

}  // namespace igan::render
