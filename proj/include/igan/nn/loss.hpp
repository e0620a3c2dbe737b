#pragma once

#include "igan/tensor.hpp"

#include <cmath>
#include <span>
#include <vector>

namespace igan::nn {

template <typename Scalar>
Matrix<Scalar> softmax(const Matrix<Scalar>& logits) {
  Matrix<Scalar> out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const Scalar m = logits.row(i).maxCoeff();
    out.row(i) = (logits.row(i).array() - m).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

template <typename Scalar>
Matrix<Scalar> log_softmax(const Matrix<Scalar>& logits) {
  Matrix<Scalar> out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const Scalar m = logits.row(i).maxCoeff();
    const Scalar lse = m + std::log((logits.row(i).array() - m).exp().sum());
    out.row(i) = logits.row(i).array() - lse;
  }
  return out;
}

inline std::vector<int> argmax_rows(const auto& m) {
  std::vector<int> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Eigen::Index j;
    m.row(i).maxCoeff(&j);
    out[static_cast<std::size_t>(i)] = static_cast<int>(j);
  }
  return out;
}

/// Per-sample cross-entropy -log softmax(z)_y.
template <typename Scalar>
Vector<Scalar> cross_entropy_per_sample(const Matrix<Scalar>& logits, std::span<const int> labels) {
  const Matrix<Scalar> ls = log_softmax(logits);
  Vector<Scalar> out(logits.rows());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) out(i) = -ls(i, labels[static_cast<std::size_t>(i)]);
  return out;
}

struct Reduction {
  enum Kind { mean, sum } kind = mean;
};

/// Cross-entropy over rows; writes dLoss/dlogits into *grad when given.
template <typename Scalar>
Scalar cross_entropy(const Matrix<Scalar>& logits, std::span<const int> labels,
                     Matrix<Scalar>* grad = nullptr, Reduction red = {}) {
  const Eigen::Index n = logits.rows();
  const Scalar scale = red.kind == Reduction::mean ? Scalar(1) / static_cast<Scalar>(n) : Scalar(1);
  const Matrix<Scalar> ls = log_softmax(logits);
  Scalar total = 0;
  for (Eigen::Index i = 0; i < n; ++i) total -= ls(i, labels[static_cast<std::size_t>(i)]);
  if (grad) {
    *grad = ls.array().exp().matrix();
    for (Eigen::Index i = 0; i < n; ++i) (*grad)(i, labels[static_cast<std::size_t>(i)]) -= Scalar(1);
    *grad *= scale;
  }
  return total * scale;
}

/// Cross-entropy against soft target distributions (rows of `target`).
template <typename Scalar>
Scalar soft_cross_entropy(const Matrix<Scalar>& logits, const Matrix<Scalar>& target,
                          Matrix<Scalar>* grad = nullptr, Reduction red = {}) {
  const Eigen::Index n = logits.rows();
  const Scalar scale = red.kind == Reduction::mean ? Scalar(1) / static_cast<Scalar>(n) : Scalar(1);
  const Matrix<Scalar> ls = log_softmax(logits);
  const Scalar total = -(target.array() * ls.array()).sum();
  if (grad) {
    // d/dz of -sum_j t_j log p_j = p * sum_j t_j - t
    *grad = ls.array().exp().matrix();
    for (Eigen::Index i = 0; i < n; ++i) grad->row(i) *= target.row(i).sum();
    *grad -= target;
    *grad *= scale;
  }
  return total * scale;
}

/// Mean over rows of KL(softmax(clean) || softmax(adv)); gradients w.r.t.
/// both logit sets are written when the pointers are non-null.
template <typename Scalar>
Scalar kl_divergence(const Matrix<Scalar>& clean_logits, const Matrix<Scalar>& adv_logits,
                     Matrix<Scalar>* grad_clean, Matrix<Scalar>* grad_adv, Reduction red = {}) {
  const Eigen::Index n = clean_logits.rows();
  const Scalar scale = red.kind == Reduction::mean ? Scalar(1) / static_cast<Scalar>(n) : Scalar(1);
  const Matrix<Scalar> lp = log_softmax(clean_logits);
  const Matrix<Scalar> lq = log_softmax(adv_logits);
  const Matrix<Scalar> p = lp.array().exp().matrix();
  const Matrix<Scalar> diff = lp - lq;
  const Vector<Scalar> row_kl = (p.array() * diff.array()).rowwise().sum();
  if (grad_adv) *grad_adv = (lq.array().exp() - p.array()).matrix() * scale;
  if (grad_clean) {
    // dKL/dz_j = p_j (log p_j - log q_j - KL)
    grad_clean->resize(n, clean_logits.cols());
    for (Eigen::Index i = 0; i < n; ++i)
      grad_clean->row(i) = (p.row(i).array() * (diff.row(i).array() - row_kl(i))) * scale;
  }
  return row_kl.sum() * scale;
}

/// log(sigmoid(z)) computed without overflow.
template <typename Scalar>
Scalar log_sigmoid(Scalar z) {
  return z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

template <typename Scalar>
Scalar sigmoid(Scalar z) {
  return z >= 0 ? Scalar(1) / (Scalar(1) + std::exp(-z)) : std::exp(z) / (Scalar(1) + std::exp(z));
}

}  // namespace igan::nn
