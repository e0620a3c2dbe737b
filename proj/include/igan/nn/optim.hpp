#pragma once

#include "igan/nn/layers.hpp"

#include <cmath>
#include <vector>

namespace igan::nn {

/// Plain SGD with optional heavy-ball momentum (momentum 0 = momentum-free).
template <typename Scalar>
class Sgd {
 public:
  explicit Sgd(std::vector<Parameter<Scalar>*> params, double lr, double momentum = 0.0)
      : params_(std::move(params)), lr_(lr), momentum_(momentum) {
    if (momentum_ > 0)
      for (auto* p : params_) velocity_.push_back(Matrix<Scalar>::Zero(p->value.rows(), p->value.cols()));
  }

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  void step() {
    const auto lr = static_cast<Scalar>(lr_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto* p = params_[i];
      if (momentum_ > 0) {
        velocity_[i] = static_cast<Scalar>(momentum_) * velocity_[i] + p->grad;
        p->value -= lr * velocity_[i];
      } else {
        p->value -= lr * p->grad;
      }
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->grad.setZero();
  }

 private:
  std::vector<Parameter<Scalar>*> params_;
  std::vector<Matrix<Scalar>> velocity_;
  double lr_;
  double momentum_;
};

template <typename Scalar>
class Adam {
 public:
  Adam(std::vector<Parameter<Scalar>*> params, double lr, double beta1 = 0.5, double beta2 = 0.999,
       double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    for (auto* p : params_) {
      m_.push_back(Matrix<Scalar>::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Matrix<Scalar>::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, t_);
    const double c2 = 1.0 - std::pow(b2_, t_);
    const auto step = static_cast<Scalar>(lr_ * std::sqrt(c2) / c1);
    const auto b1 = static_cast<Scalar>(b1_), b2 = static_cast<Scalar>(b2_);
    const auto eps = static_cast<Scalar>(eps_ * std::sqrt(c2));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const auto& g = params_[i]->grad;
      m_[i] = b1 * m_[i] + (Scalar(1) - b1) * g;
      v_[i] = b2 * v_[i] + (Scalar(1) - b2) * g.cwiseAbs2();
      params_[i]->value.array() -= step * m_[i].array() / (v_[i].array().sqrt() + eps);
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->grad.setZero();
  }

  long steps() const { return t_; }

  // Moment state is exposed for checkpointing.
  std::vector<Matrix<Scalar>>& first_moments() { return m_; }
  std::vector<Matrix<Scalar>>& second_moments() { return v_; }
  void set_steps(long t) { t_ = t; }

 private:
  std::vector<Parameter<Scalar>*> params_;
  std::vector<Matrix<Scalar>> m_, v_;
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
};

}  // namespace igan::nn
