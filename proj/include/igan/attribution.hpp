#pragma once

#include "igan/tensor.hpp"

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace igan::attribution {

/// Per-sample attribution maps, one row per input, shaped like the input.
template <typename Scalar>
struct AttributionMap {
  Matrix<Scalar> values;
  std::string method;
  std::vector<int> labels;
};

namespace detail {

template <typename Model>
void check_labels(const Model& model, std::span<const int> labels, Eigen::Index rows) {
  if (static_cast<Eigen::Index>(labels.size()) != rows)
    throw ShapeError("attribution: label count does not match batch size");
  for (int y : labels)
    if (y < 0 || y >= model.label_count()) throw std::out_of_range("attribution: label out of range");
}

/// d/dx of Σ_i z_i[label_i], where z are the pre-softmax scores.
template <typename Model, typename Scalar>
Matrix<Scalar> score_gradient(const Model& model, const Matrix<Scalar>& x, std::span<const int> labels) {
  return model.input_gradient(x, [&](const Matrix<Scalar>& z) {
    Matrix<Scalar> d = Matrix<Scalar>::Zero(z.rows(), z.cols());
    for (Eigen::Index i = 0; i < z.rows(); ++i) d(i, labels[static_cast<std::size_t>(i)]) = Scalar(1);
    return d;
  });
}

template <typename Scalar>
Vector<Scalar> pick(const Matrix<Scalar>& z, std::span<const int> labels) {
  Vector<Scalar> s(z.rows());
  for (Eigen::Index i = 0; i < z.rows(); ++i) s(i) = z(i, labels[static_cast<std::size_t>(i)]);
  return s;
}

}  // namespace detail

/// Pre-softmax score of each row's label.
template <typename Model, typename Scalar>
Vector<Scalar> target_scores(const Model& model, const Matrix<Scalar>& x, std::span<const int> labels) {
  detail::check_labels(model, labels, x.rows());
  return detail::pick<Scalar>(model.logits(x), labels);
}

/// |∂ score_label / ∂x|.
template <typename Model, typename Scalar>
AttributionMap<Scalar> saliency(const Model& model, const Matrix<Scalar>& x, std::span<const int> labels) {
  detail::check_labels(model, labels, x.rows());
  return {detail::score_gradient(model, x, labels).cwiseAbs(), "saliency", {labels.begin(), labels.end()}};
}

/// x ⊙ ∂ score_label / ∂x.
template <typename Model, typename Scalar>
AttributionMap<Scalar> input_x_gradient(const Model& model, const Matrix<Scalar>& x, std::span<const int> labels) {
  detail::check_labels(model, labels, x.rows());
  return {x.cwiseProduct(detail::score_gradient(model, x, labels)), "input_x_gradient",
          {labels.begin(), labels.end()}};
}

/// (x − baseline) ⊙ mean gradient at the `steps` midpoints of the straight
/// path from baseline to x.
template <typename Model, typename Scalar>
AttributionMap<Scalar> integrated_gradients(const Model& model, const Matrix<Scalar>& x,
                                            const Matrix<Scalar>& baseline, std::span<const int> labels,
                                            int steps = 64) {
  if (steps < 1) throw std::invalid_argument("integrated_gradients: steps must be >= 1");
  if (baseline.rows() != x.rows() || baseline.cols() != x.cols())
    throw ShapeError("integrated_gradients: baseline shape differs from input");
  detail::check_labels(model, labels, x.rows());
  const Matrix<Scalar> delta = x - baseline;
  Matrix<Scalar> sum = Matrix<Scalar>::Zero(x.rows(), x.cols());
  for (int k = 0; k < steps; ++k) {
    const auto t = static_cast<Scalar>((k + 0.5) / steps);
    sum += detail::score_gradient(model, (baseline + t * delta).eval(), labels);
  }
  return {delta.cwiseProduct(sum / static_cast<Scalar>(steps)), "integrated_gradients",
          {labels.begin(), labels.end()}};
}

/// Zero-baseline integrated gradients.
template <typename Model, typename Scalar>
AttributionMap<Scalar> integrated_gradients(const Model& model, const Matrix<Scalar>& x, std::span<const int> labels,
                                            int steps = 64) {
  const Matrix<Scalar> zero = Matrix<Scalar>::Zero(x.rows(), x.cols());
  return integrated_gradients(model, x, zero, labels, steps);
}

/// Window origins along one axis: 0, stride, ... while the window fits.
inline std::vector<int> window_origins(int extent, int window, int stride) {
  std::vector<int> out;
  for (int o = 0; o + window <= extent; o += stride) out.push_back(o);
  return out;
}

/// Number of occlusion windows covering each pixel (1 × H·W).
inline Eigen::RowVectorXi occlusion_coverage(Shape shape, int window, int stride) {
  Eigen::RowVectorXi cov = Eigen::RowVectorXi::Zero(shape.plane());
  for (int oy : window_origins(shape.height, window, stride))
    for (int ox : window_origins(shape.width, window, stride))
      for (int y = oy; y < oy + window; ++y)
        for (int x = ox; x < ox + window; ++x) ++cov(y * shape.width + x);
  return cov;
}

/// Score drop when a window×window patch (all channels) is set to `fill`,
/// averaged over the windows covering each pixel; uncovered pixels are 0.
template <typename Model, typename Scalar>
AttributionMap<Scalar> occlusion(const Model& model, const Matrix<Scalar>& x, std::span<const int> labels,
                                 int window = 4, int stride = 2, Scalar fill = 0) {
  const Shape shape = model.input_shape();
  require_cols(x.cols(), shape, "occlusion");
  detail::check_labels(model, labels, x.rows());
  if (window < 1 || stride < 1) throw std::invalid_argument("occlusion: window and stride must be >= 1");
  if (window > shape.height || window > shape.width)
    throw std::invalid_argument("occlusion: window " + std::to_string(window) + " exceeds input " + shape.str());
  const auto oys = window_origins(shape.height, window, stride);
  const auto oxs = window_origins(shape.width, window, stride);
  const auto positions = static_cast<Eigen::Index>(oys.size() * oxs.size());
  const Eigen::RowVectorXi cov = occlusion_coverage(shape, window, stride);

  AttributionMap<Scalar> out{Matrix<Scalar>::Zero(x.rows(), x.cols()), "occlusion", {labels.begin(), labels.end()}};
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const int label = labels[static_cast<std::size_t>(i)];
    const Scalar base = model.logits(x.row(i).eval())(0, label);
    Matrix<Scalar> batch = x.row(i).replicate(positions, 1);
    Eigen::Index p = 0;
    for (int oy : oys)
      for (int ox : oxs) {
        for (int c = 0; c < shape.channels; ++c)
          for (int y = oy; y < oy + window; ++y)
            for (int xx = ox; xx < ox + window; ++xx) batch(p, c * shape.plane() + y * shape.width + xx) = fill;
        ++p;
      }
    const Matrix<Scalar> z = model.logits(batch);
    Vector<Scalar> plane = Vector<Scalar>::Zero(shape.plane());
    p = 0;
    for (int oy : oys)
      for (int ox : oxs) {
        const Scalar drop = base - z(p++, label);
        for (int y = oy; y < oy + window; ++y)
          for (int xx = ox; xx < ox + window; ++xx) plane(y * shape.width + xx) += drop;
      }
    for (int k = 0; k < shape.plane(); ++k) {
      const Scalar v = cov(k) > 0 ? plane(k) / static_cast<Scalar>(cov(k)) : Scalar(0);
      for (int c = 0; c < shape.channels; ++c) out.values(i, c * shape.plane() + k) = v;
    }
  }
  return out;
}

}  // namespace igan::attribution
