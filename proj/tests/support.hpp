#pragma once

#include "igan/models/classifier.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include <unistd.h>

namespace igan::testing {

/// Small CNN on 1×8×8 inputs with the same tap/pool layout as the MNIST model.
inline models::ArchitectureSpec tiny_spec(nn::PoolKind pool = nn::PoolKind::max, int labels = 4) {
  using models::LayerDescriptor;
  using models::LayerType;
  models::ArchitectureSpec s;
  s.name = "tiny";
  s.input = Shape{1, 8, 8};
  s.label_count = labels;
  auto conv = [](int ch, std::string tap) {
    LayerDescriptor d;
    d.type = LayerType::conv;
    d.channels = ch;
    d.tap = std::move(tap);
    return d;
  };
  auto pooling = [pool](std::string tap) {
    LayerDescriptor d;
    d.type = LayerType::pool;
    d.pool = pool;
    d.tap = std::move(tap);
    return d;
  };
  auto fc = [](int w, bool relu, std::string tap) {
    LayerDescriptor d;
    d.type = LayerType::fc;
    d.width = w;
    d.relu = relu;
    d.tap = std::move(tap);
    return d;
  };
  s.layers = {conv(3, "Conv1"), pooling("Conv2"), conv(4, "Conv3"), pooling("Conv4"),
              fc(8, true, "FC1"), fc(labels, false, "FC2")};
  return s;
}

/// Single linear map from a C×H×W input to `labels` scores.
inline models::ArchitectureSpec linear_spec(Shape input, int labels) {
  models::ArchitectureSpec s;
  s.name = "linear";
  s.input = input;
  s.label_count = labels;
  models::LayerDescriptor d;
  d.type = models::LayerType::fc;
  d.width = labels;
  d.relu = false;
  d.tap = "FC1";
  s.layers = {d};
  return s;
}

template <typename Scalar>
Matrix<Scalar> uniform(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, double lo = 0, double hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  Matrix<Scalar> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(d(rng));
  return m;
}

/// Central difference of f with respect to *v.
inline double central_difference(const std::function<double()>& f, double* v, double h = 1e-6) {
  const double orig = *v;
  *v = orig + h;
  const double up = f();
  *v = orig - h;
  const double down = f();
  *v = orig;
  return (up - down) / (2 * h);
}

/// |a − n| ≤ tol · max(|a|, |n|, floor).
inline ::testing::AssertionResult relative_close(double analytic, double numeric, double tol = 1e-3,
                                                 double floor = 1e-6) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  if (std::abs(analytic - numeric) <= tol * scale) return ::testing::AssertionSuccess();
  return ::testing::AssertionFailure() << "analytic " << analytic << " vs numeric " << numeric;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() /
                 ("igan_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace igan::testing
