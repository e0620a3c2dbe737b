#pragma once

#include "igan/nn/layers.hpp"

#include <limits>
#include <utility>

namespace igan::nn {

/// Recorded activations of one forward pass over layers [begin, end).
/// values[0] is the range input; values[i + 1] is the output of layer begin + i.
template <typename Scalar>
struct Tape {
  std::size_t begin = 0;
  std::vector<Matrix<Scalar>> values;
  const Matrix<Scalar>& output() const { return values.back(); }
};

/// Layer chain with a fixed per-sample input shape.
template <typename Scalar>
class Sequential {
 public:
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

  explicit Sequential(Shape input = {}) : input_(input) {}

  Sequential(const Sequential& other) : input_(other.input_) {
    layers_.reserve(other.layers_.size());
    for (const auto& l : other.layers_) layers_.push_back(l->clone());
  }
  Sequential& operator=(const Sequential& other) {
    if (this != &other) {
      Sequential tmp(other);
      *this = std::move(tmp);
    }
    return *this;
  }
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  /// Appends a layer constructed from the current output shape.
  template <template <typename> class L, typename... Args>
  L<Scalar>& add(Args&&... args) {
    auto layer = std::make_unique<L<Scalar>>(output_shape(), std::forward<Args>(args)...);
    auto& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  Shape input_shape() const { return input_; }
  Shape output_shape() const { return layers_.empty() ? input_ : layers_.back()->output_shape(); }
  Shape shape_at(std::size_t boundary) const {
    return boundary == 0 ? input_ : layers_.at(boundary - 1)->output_shape();
  }

  std::size_t size() const { return layers_.size(); }
  bool empty() const { return layers_.empty(); }
  Layer<Scalar>& layer(std::size_t i) { return *layers_.at(i); }
  const Layer<Scalar>& layer(std::size_t i) const { return *layers_.at(i); }

  void initialize(std::mt19937_64& rng) {
    for (auto& l : layers_) l->initialize(rng);
  }

  Matrix<Scalar> forward(const Matrix<Scalar>& x, std::size_t begin = 0,
                         std::size_t end = npos) const {
    end = clamp_end(end);
    require_cols(x.cols(), shape_at(begin), "Sequential::forward");
    Matrix<Scalar> cur = x, next;
    for (std::size_t i = begin; i < end; ++i) {
      layers_[i]->forward(cur, next);
      cur.swap(next);
    }
    return cur;
  }

  const Matrix<Scalar>& forward(const Matrix<Scalar>& x, Tape<Scalar>& tape, std::size_t begin = 0,
                                std::size_t end = npos) const {
    end = clamp_end(end);
    require_cols(x.cols(), shape_at(begin), "Sequential::forward");
    tape.begin = begin;
    tape.values.resize(end - begin + 1);
    tape.values[0] = x;
    for (std::size_t i = begin; i < end; ++i)
      layers_[i]->forward(tape.values[i - begin], tape.values[i - begin + 1]);
    return tape.output();
  }

  /// Back-propagates through the taped range, accumulating parameter gradients.
  /// Returns dL/d(range input) unless `need_input_grad` is false.
  Matrix<Scalar> backward(const Tape<Scalar>& tape, const Matrix<Scalar>& grad_out,
                          bool need_input_grad = true) {
    return backward_impl(tape, grad_out, need_input_grad, [this](std::size_t i) {
      return std::span<Parameter<Scalar>>(layers_[i]->params());
    });
  }

  /// Input gradient only; parameters and their gradient buffers are untouched.
  Matrix<Scalar> input_gradient(const Tape<Scalar>& tape, const Matrix<Scalar>& grad_out) const {
    return backward_impl(tape, grad_out, true,
                         [](std::size_t) { return std::span<Parameter<Scalar>>(); });
  }

  void zero_grad() {
    for (auto& l : layers_)
      for (auto& p : l->params()) p.grad.setZero();
  }

  std::vector<Parameter<Scalar>*> parameters() {
    std::vector<Parameter<Scalar>*> out;
    for (auto& l : layers_)
      for (auto& p : l->params()) out.push_back(&p);
    return out;
  }
  std::vector<const Parameter<Scalar>*> parameters() const {
    std::vector<const Parameter<Scalar>*> out;
    for (const auto& l : layers_)
      for (const auto& p : l->params()) out.push_back(&p);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto* p : parameters()) n += static_cast<std::size_t>(p->value.size());
    return n;
  }

 private:
  std::size_t clamp_end(std::size_t end) const {
    return end == npos || end > layers_.size() ? layers_.size() : end;
  }

  template <typename GradSink>
  Matrix<Scalar> backward_impl(const Tape<Scalar>& tape, const Matrix<Scalar>& grad_out,
                               bool need_input_grad, GradSink&& sink) const {
    const std::size_t begin = tape.begin;
    const std::size_t end = begin + tape.values.size() - 1;
    Matrix<Scalar> g = grad_out, gin;
    for (std::size_t i = end; i-- > begin;) {
      const bool want_in = need_input_grad || i > begin;
      layers_[i]->backward(tape.values[i - begin], tape.values[i - begin + 1], g,
                           want_in ? &gin : nullptr, sink(i));
      if (!want_in) return {};
      g.swap(gin);
    }
    return g;
  }

  Shape input_;
  std::vector<std::unique_ptr<Layer<Scalar>>> layers_;
};

/// Order-sensitive hash of every parameter value; detects any mutation.
template <typename Scalar>
std::uint64_t parameter_checksum(const std::vector<const Parameter<Scalar>*>& params,
                                 std::uint64_t seed = 0xcbf29ce484222325ULL) {
  std::uint64_t h = seed;
  for (const auto* p : params)
    h = fnv1a(p->value.data(), static_cast<std::size_t>(p->value.size()) * sizeof(Scalar), h);
  return h;
}

}  // namespace igan::nn
