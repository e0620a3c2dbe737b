#pragma once

#include "igan/tensor.hpp"

#include <cmath>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace igan::nn {

template <typename Scalar>
struct Parameter {
  std::string name;
  Matrix<Scalar> value;
  Matrix<Scalar> grad;

  Parameter() = default;
  Parameter(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)), value(Matrix<Scalar>::Zero(rows, cols)),
        grad(Matrix<Scalar>::Zero(rows, cols)) {}
};

/// A differentiable map between fixed per-sample shapes.
///
/// Layers hold no activation state: callers keep the input/output pair of a
/// forward pass (see Sequential::Tape) and hand it back to backward(). This
/// lets one frozen network be evaluated several times inside a single step.
template <typename Scalar>
class Layer {
 public:
  Layer(Shape in, Shape out) : in_(in), out_(out) {}
  virtual ~Layer() = default;

  const Shape& input_shape() const { return in_; }
  const Shape& output_shape() const { return out_; }

  virtual std::string kind() const = 0;
  virtual void forward(const Matrix<Scalar>& in, Matrix<Scalar>& out) const = 0;

  /// Writes dL/d(in) into *grad_in when non-null and, when `grads` is
  /// non-empty, adds parameter gradients into it (same order as params()).
  virtual void backward(const Matrix<Scalar>& in, const Matrix<Scalar>& out,
                        const Matrix<Scalar>& grad_out, Matrix<Scalar>* grad_in,
                        std::span<Parameter<Scalar>> grads) const = 0;

  virtual std::unique_ptr<Layer> clone() const = 0;
  virtual void initialize(std::mt19937_64&) {}

  std::vector<Parameter<Scalar>>& params() { return params_; }
  const std::vector<Parameter<Scalar>>& params() const { return params_; }

 protected:
  Shape in_;
  Shape out_;
  std::vector<Parameter<Scalar>> params_;
};

namespace detail {

template <typename Scalar>
void uniform_fill(Matrix<Scalar>& m, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(dist(rng));
}

// Rows of `col` enumerate (channel, ky, kx); columns enumerate output pixels.
template <typename Scalar>
void im2col(const Scalar* src, const Shape& s, int k, Matrix<Scalar>& col) {
  const int pad = k / 2;
  const int H = s.height, W = s.width;
  col.resize(static_cast<Eigen::Index>(s.channels) * k * k, H * W);
  for (int c = 0; c < s.channels; ++c) {
    const Scalar* plane = src + static_cast<std::ptrdiff_t>(c) * H * W;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        Scalar* row = col.row((c * k + ky) * k + kx).data();
        const int dx = kx - pad;
        const int x0 = std::max(0, -dx);
        const int x1 = std::min(W, W - dx);
        for (int y = 0; y < H; ++y) {
          Scalar* dst = row + y * W;
          const int iy = y + ky - pad;
          if (iy < 0 || iy >= H || x0 >= x1) {
            std::fill(dst, dst + W, Scalar(0));
            continue;
          }
          std::fill(dst, dst + x0, Scalar(0));
          std::copy(plane + iy * W + x0 + dx, plane + iy * W + x1 + dx, dst + x0);
          std::fill(dst + x1, dst + W, Scalar(0));
        }
      }
    }
  }
}

template <typename Scalar>
void col2im_add(const Matrix<Scalar>& col, const Shape& s, int k, Scalar* dst_base) {
  const int pad = k / 2;
  const int H = s.height, W = s.width;
  for (int c = 0; c < s.channels; ++c) {
    Scalar* plane = dst_base + static_cast<std::ptrdiff_t>(c) * H * W;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const Scalar* row = col.row((c * k + ky) * k + kx).data();
        const int dx = kx - pad;
        const int x0 = std::max(0, -dx);
        const int x1 = std::min(W, W - dx);
        for (int y = 0; y < H; ++y) {
          const int iy = y + ky - pad;
          if (iy < 0 || iy >= H) continue;
          const Scalar* from = row + y * W;
          Scalar* to = plane + iy * W + dx;
          for (int x = x0; x < x1; ++x) to[x] += from[x];
        }
      }
    }
  }
}

}  // namespace detail

/// k×k convolution, stride 1, zero "same" padding (k odd).
template <typename Scalar>
class Conv2d final : public Layer<Scalar> {
  using Base = Layer<Scalar>;
  using Map = Eigen::Map<Matrix<Scalar>>;
  using ConstMap = Eigen::Map<const Matrix<Scalar>>;

 public:
  Conv2d(Shape in, int out_channels, int kernel)
      : Base(in, Shape{out_channels, in.height, in.width}), kernel_(kernel) {
    if (kernel % 2 == 0 || kernel < 1) throw ShapeError("Conv2d: kernel must be odd");
    this->params_.emplace_back("weight", out_channels, in.channels * kernel * kernel);
    this->params_.emplace_back("bias", out_channels, 1);
  }

  std::string kind() const override { return "conv" + std::to_string(kernel_); }
  int kernel() const { return kernel_; }

  void initialize(std::mt19937_64& rng) override {
    const double fan_in = static_cast<double>(this->in_.channels) * kernel_ * kernel_;
    detail::uniform_fill(this->params_[0].value, std::sqrt(6.0 / fan_in), rng);
    this->params_[1].value.setZero();
  }

  void forward(const Matrix<Scalar>& in, Matrix<Scalar>& out) const override {
    const auto& w = this->params_[0].value;
    const auto& b = this->params_[1].value;
    const Shape& is = this->in_;
    const Shape& os = this->out_;
    out.resize(in.rows(), os.size());
    Matrix<Scalar> col;
    for (Eigen::Index n = 0; n < in.rows(); ++n) {
      Map dst(out.row(n).data(), os.channels, os.plane());
      if (kernel_ == 1) {
        ConstMap src(in.row(n).data(), is.channels, is.plane());
        dst.noalias() = w * src;
      } else {
        detail::im2col(in.row(n).data(), is, kernel_, col);
        dst.noalias() = w * col;
      }
      dst.colwise() += b.col(0);
    }
  }

  void backward(const Matrix<Scalar>& in, const Matrix<Scalar>&, const Matrix<Scalar>& grad_out,
                Matrix<Scalar>* grad_in, std::span<Parameter<Scalar>> grads) const override {
    const auto& w = this->params_[0].value;
    const Shape& is = this->in_;
    const Shape& os = this->out_;
    if (grad_in) grad_in->setZero(in.rows(), is.size());
    Matrix<Scalar> col, dcol;
    for (Eigen::Index n = 0; n < in.rows(); ++n) {
      ConstMap g(grad_out.row(n).data(), os.channels, os.plane());
      if (kernel_ == 1) {
        ConstMap src(in.row(n).data(), is.channels, is.plane());
        if (!grads.empty()) {
          grads[0].grad.noalias() += g * src.transpose();
          grads[1].grad.col(0) += g.rowwise().sum();
        }
        if (grad_in) {
          Map gi(grad_in->row(n).data(), is.channels, is.plane());
          gi.noalias() = w.transpose() * g;
        }
        continue;
      }
      if (!grads.empty()) {
        detail::im2col(in.row(n).data(), is, kernel_, col);
        grads[0].grad.noalias() += g * col.transpose();
        grads[1].grad.col(0) += g.rowwise().sum();
      }
      if (grad_in) {
        dcol.noalias() = w.transpose() * g;
        detail::col2im_add(dcol, is, kernel_, grad_in->row(n).data());
      }
    }
  }

  std::unique_ptr<Base> clone() const override { return std::make_unique<Conv2d>(*this); }

 private:
  int kernel_;
};

/// Fully connected map over the flattened sample.
template <typename Scalar>
class Linear final : public Layer<Scalar> {
  using Base = Layer<Scalar>;

 public:
  Linear(Shape in, int out_features) : Base(in, Shape{out_features, 1, 1}) {
    this->params_.emplace_back("weight", out_features, in.size());
    this->params_.emplace_back("bias", 1, out_features);
  }

  std::string kind() const override { return "linear"; }

  void initialize(std::mt19937_64& rng) override {
    detail::uniform_fill(this->params_[0].value, std::sqrt(6.0 / this->in_.size()), rng);
    this->params_[1].value.setZero();
  }

  void forward(const Matrix<Scalar>& in, Matrix<Scalar>& out) const override {
    out.noalias() = in * this->params_[0].value.transpose();
    out.rowwise() += this->params_[1].value.row(0);
  }

  void backward(const Matrix<Scalar>& in, const Matrix<Scalar>&, const Matrix<Scalar>& grad_out,
                Matrix<Scalar>* grad_in, std::span<Parameter<Scalar>> grads) const override {
    if (!grads.empty()) {
      grads[0].grad.noalias() += grad_out.transpose() * in;
      grads[1].grad.row(0) += grad_out.colwise().sum();
    }
    if (grad_in) grad_in->noalias() = grad_out * this->params_[0].value;
  }

  std::unique_ptr<Base> clone() const override { return std::make_unique<Linear>(*this); }
};

enum class Activation { relu, leaky_relu, sigmoid, tanh };

template <typename Scalar>
class Elementwise final : public Layer<Scalar> {
  using Base = Layer<Scalar>;

 public:
  Elementwise(Shape in, Activation act, double slope = 0.2)
      : Base(in, in), act_(act), slope_(static_cast<Scalar>(slope)) {}

  std::string kind() const override {
    switch (act_) {
      case Activation::relu: return "relu";
      case Activation::leaky_relu: return "leaky_relu";
      case Activation::sigmoid: return "sigmoid";
      case Activation::tanh: return "tanh";
    }
    return "?";
  }

  void forward(const Matrix<Scalar>& in, Matrix<Scalar>& out) const override {
    switch (act_) {
      case Activation::relu: out = in.cwiseMax(Scalar(0)); break;
      case Activation::leaky_relu:
        out = in.unaryExpr([s = slope_](Scalar v) { return v > 0 ? v : s * v; });
        break;
      case Activation::sigmoid:
        out = in.unaryExpr([](Scalar v) { return Scalar(1) / (Scalar(1) + std::exp(-v)); });
        break;
      case Activation::tanh: out = in.array().tanh(); break;
    }
  }

  void backward(const Matrix<Scalar>& in, const Matrix<Scalar>& out, const Matrix<Scalar>& grad_out,
                Matrix<Scalar>* grad_in, std::span<Parameter<Scalar>>) const override {
    if (!grad_in) return;
    switch (act_) {
      case Activation::relu:
        *grad_in = (in.array() > Scalar(0)).select(grad_out.array(), Scalar(0)).matrix();
        break;
      case Activation::leaky_relu:
        *grad_in = (in.array() > Scalar(0)).select(grad_out.array(), slope_ * grad_out.array()).matrix();
        break;
      case Activation::sigmoid:
        *grad_in = grad_out.array() * out.array() * (Scalar(1) - out.array());
        break;
      case Activation::tanh:
        *grad_in = grad_out.array() * (Scalar(1) - out.array().square());
        break;
    }
  }

  std::unique_ptr<Base> clone() const override { return std::make_unique<Elementwise>(*this); }

 private:
  Activation act_;
  Scalar slope_;
};

enum class PoolKind { max, avg };

inline std::string to_string(PoolKind k) { return k == PoolKind::max ? "max" : "avg"; }

/// 2×2 window, stride 2. Max ties resolve to the lowest in-window index
/// (0:(0,0) 1:(0,1) 2:(1,0) 3:(1,1)).
template <typename Scalar>
class Pool2 final : public Layer<Scalar> {
  using Base = Layer<Scalar>;

 public:
  Pool2(Shape in, PoolKind kind) : Base(in, halve(in)), kind_(kind) {}

  std::string kind() const override { return to_string(kind_) + "pool"; }
  PoolKind pool_kind() const { return kind_; }

  /// In-window argmax for every output cell of one sample.
  static int window_argmax(const Scalar* plane, int W, int oy, int ox) {
    const Scalar* r0 = plane + (2 * oy) * W + 2 * ox;
    const Scalar* r1 = r0 + W;
    const Scalar v[4] = {r0[0], r0[1], r1[0], r1[1]};
    int best = 0;
    for (int i = 1; i < 4; ++i)
      if (v[i] > v[best]) best = i;
    return best;
  }

  Eigen::Matrix<std::int8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> argmax_indices(
      const Matrix<Scalar>& in) const {
    const Shape& is = this->in_;
    const Shape& os = this->out_;
    Eigen::Matrix<std::int8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> idx(in.rows(),
                                                                                   os.size());
    for (Eigen::Index n = 0; n < in.rows(); ++n)
      for (int c = 0; c < is.channels; ++c) {
        const Scalar* plane = in.row(n).data() + c * is.plane();
        for (int oy = 0; oy < os.height; ++oy)
          for (int ox = 0; ox < os.width; ++ox)
            idx(n, c * os.plane() + oy * os.width + ox) =
                static_cast<std::int8_t>(window_argmax(plane, is.width, oy, ox));
      }
    return idx;
  }

  void forward(const Matrix<Scalar>& in, Matrix<Scalar>& out) const override {
    const Shape& is = this->in_;
    const Shape& os = this->out_;
    out.resize(in.rows(), os.size());
    for (Eigen::Index n = 0; n < in.rows(); ++n)
      for (int c = 0; c < is.channels; ++c) {
        const Scalar* plane = in.row(n).data() + c * is.plane();
        Scalar* dst = out.row(n).data() + c * os.plane();
        for (int oy = 0; oy < os.height; ++oy) {
          const Scalar* r0 = plane + 2 * oy * is.width;
          const Scalar* r1 = r0 + is.width;
          for (int ox = 0; ox < os.width; ++ox) {
            const Scalar a = r0[2 * ox], b = r0[2 * ox + 1], d = r1[2 * ox], e = r1[2 * ox + 1];
            dst[oy * os.width + ox] = kind_ == PoolKind::max
                                          ? std::max(std::max(a, b), std::max(d, e))
                                          : ((a + b) + (d + e)) * Scalar(0.25);
          }
        }
      }
  }

  void backward(const Matrix<Scalar>& in, const Matrix<Scalar>&, const Matrix<Scalar>& grad_out,
                Matrix<Scalar>* grad_in, std::span<Parameter<Scalar>>) const override {
    if (!grad_in) return;
    const Shape& is = this->in_;
    const Shape& os = this->out_;
    grad_in->setZero(in.rows(), is.size());
    for (Eigen::Index n = 0; n < in.rows(); ++n)
      for (int c = 0; c < is.channels; ++c) {
        const Scalar* plane = in.row(n).data() + c * is.plane();
        const Scalar* g = grad_out.row(n).data() + c * os.plane();
        Scalar* gi = grad_in->row(n).data() + c * is.plane();
        for (int oy = 0; oy < os.height; ++oy)
          for (int ox = 0; ox < os.width; ++ox) {
            const Scalar v = g[oy * os.width + ox];
            Scalar* base = gi + 2 * oy * is.width + 2 * ox;
            if (kind_ == PoolKind::max) {
              const int a = window_argmax(plane, is.width, oy, ox);
              base[(a >> 1) * is.width + (a & 1)] += v;
            } else {
              const Scalar q = v * Scalar(0.25);
              base[0] += q;
              base[1] += q;
              base[is.width] += q;
              base[is.width + 1] += q;
            }
          }
      }
  }

  std::unique_ptr<Base> clone() const override { return std::make_unique<Pool2>(*this); }

 private:
  static Shape halve(Shape in) {
    if (in.height % 2 || in.width % 2)
      throw ShapeError("Pool2: spatial dims must be even, got " + in.str());
    return Shape{in.channels, in.height / 2, in.width / 2};
  }
  PoolKind kind_;
};

/// Nearest-neighbour 2× spatial upsampling.
template <typename Scalar>
class Upsample2 final : public Layer<Scalar> {
  using Base = Layer<Scalar>;

 public:
  explicit Upsample2(Shape in) : Base(in, Shape{in.channels, in.height * 2, in.width * 2}) {}

  std::string kind() const override { return "upsample"; }

  void forward(const Matrix<Scalar>& in, Matrix<Scalar>& out) const override {
    const Shape& is = this->in_;
    const Shape& os = this->out_;
    out.resize(in.rows(), os.size());
    for (Eigen::Index n = 0; n < in.rows(); ++n)
      for (int c = 0; c < is.channels; ++c) {
        const Scalar* src = in.row(n).data() + c * is.plane();
        Scalar* dst = out.row(n).data() + c * os.plane();
        for (int y = 0; y < os.height; ++y)
          for (int x = 0; x < os.width; ++x) dst[y * os.width + x] = src[(y / 2) * is.width + x / 2];
      }
  }

  void backward(const Matrix<Scalar>& in, const Matrix<Scalar>&, const Matrix<Scalar>& grad_out,
                Matrix<Scalar>* grad_in, std::span<Parameter<Scalar>>) const override {
    if (!grad_in) return;
    const Shape& is = this->in_;
    const Shape& os = this->out_;
    grad_in->setZero(in.rows(), is.size());
    for (Eigen::Index n = 0; n < in.rows(); ++n)
      for (int c = 0; c < is.channels; ++c) {
        const Scalar* g = grad_out.row(n).data() + c * os.plane();
        Scalar* gi = grad_in->row(n).data() + c * is.plane();
        for (int y = 0; y < os.height; ++y)
          for (int x = 0; x < os.width; ++x) gi[(y / 2) * is.width + x / 2] += g[y * os.width + x];
      }
  }

  std::unique_ptr<Base> clone() const override { return std::make_unique<Upsample2>(*this); }
};

/// Reinterprets the per-sample shape; data is untouched.
template <typename Scalar>
class Reshape final : public Layer<Scalar> {
  using Base = Layer<Scalar>;

 public:
  Reshape(Shape in, Shape out) : Base(in, out) {
    if (in.size() != out.size())
      throw ShapeError("Reshape: " + in.str() + " -> " + out.str() + " changes element count");
  }

  std::string kind() const override { return "reshape"; }
  void forward(const Matrix<Scalar>& in, Matrix<Scalar>& out) const override { out = in; }
  void backward(const Matrix<Scalar>&, const Matrix<Scalar>&, const Matrix<Scalar>& grad_out,
                Matrix<Scalar>* grad_in, std::span<Parameter<Scalar>>) const override {
    if (grad_in) *grad_in = grad_out;
  }
  std::unique_ptr<Base> clone() const override { return std::make_unique<Reshape>(*this); }
};

}  // namespace igan::nn
