#pragma once

#include "igan/data.hpp"
#include "igan/models/classifier.hpp"
#include "igan/nn/optim.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <deque>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <type_traits>
#include <vector>

namespace igan::interpretgan {

using nn::Sequential;
using nn::Tape;

enum class GeneratorLoss { non_saturating, minimax };

struct GanTrainConfig {
  double lambda = 1.0;
  bool progressive = true;
  /// Epochs per generator scale, coarsest first (progressive mode).
  std::vector<int> scale_epochs{6, 6, 6, 12};
  /// Epochs at full resolution (flat mode).
  int flat_epochs = 10;
  double lr = 1e-3;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int batch_size = 64;
  std::uint64_t seed = 0;
  int latent_dim = 256;
  /// Generator channels per scale, coarsest first; the discriminator mirrors them.
  std::vector<int> channels{64, 64, 32, 16};
  /// Multiplier on the compression-network convolution widths.
  double compression_width = 1.0;
  bool soft_targets = false;
  GeneratorLoss generator_loss = GeneratorLoss::non_saturating;
  /// Floor applied to D(·) and 1 − D(·) before taking logs.
  double log_floor = 1e-12;
  /// Training aborts when the discriminator loss stays below this value for
  /// `divergence_window` consecutive steps.
  double divergence_floor = 1e-4;
  int divergence_window = 200;

  void validate() const;
  int total_epochs() const;
  nlohmann::json to_json() const;
  static GanTrainConfig from_json(const nlohmann::json& j);
};

class UntrainedUnitError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

/// Average-pools (times ≥ 0) or nearest-upsamples (times < 0) by powers of two.
template <typename Scalar>
Matrix<Scalar> rescale(const Matrix<Scalar>& x, Shape shape, int times) {
  Sequential<Scalar> net(shape);
  for (int i = 0; i < std::abs(times); ++i) {
    if (times > 0)
      net.template add<nn::Pool2>(nn::PoolKind::avg);
    else
      net.template add<nn::Upsample2>();
  }
  return net.forward(x);
}

/// Adjoint of nearest upsampling by 2^times: sums each block.
template <typename Scalar>
Matrix<Scalar> upsample_adjoint(const Matrix<Scalar>& g, Shape small, int times) {
  Sequential<Scalar> net(small);
  for (int i = 0; i < times; ++i) net.template add<nn::Upsample2>();
  Tape<Scalar> tape;
  net.forward(Matrix<Scalar>::Zero(g.rows(), small.size()), tape);
  return net.input_gradient(tape, g);
}

inline int log2_exact(int v) {
  int k = 0;
  while ((1 << k) < v) ++k;
  if ((1 << k) != v) throw ShapeError("expected a power of two, got " + std::to_string(v));
  return k;
}

template <typename Scalar>
void append_params(std::vector<nn::Parameter<Scalar>*>& out, Sequential<Scalar>& net) {
  for (auto* p : net.parameters()) out.push_back(p);
}

template <typename Scalar>
void append_params(std::vector<const nn::Parameter<Scalar>*>& out, const Sequential<Scalar>& net) {
  for (const auto* p : net.parameters()) out.push_back(p);
}

}  // namespace detail

/// Maps a tap's latent variable to the generator input. Taps at least 16
/// pixels wide get log2(H) − 2 stages of 3×3 conv + LeakyReLU + 2×2 average
/// pooling (channels start at twice the tap's and double per stage); every
/// tap ends in a fully-connected map to `output_dim`.
template <typename Scalar>
class CompressionNet {
 public:
  CompressionNet(Shape tap_shape, int output_dim, double width = 1.0) : net_(tap_shape) {
    if (output_dim < 1) throw std::invalid_argument("CompressionNet: output_dim must be >= 1");
    if (tap_shape.height >= 16 && tap_shape.height == tap_shape.width) {
      const int stages = detail::log2_exact(tap_shape.height) - 2;
      int ch = 2 * tap_shape.channels;
      for (int s = 0; s < stages; ++s, ch *= 2) {
        net_.template add<nn::Conv2d>(std::max(1, static_cast<int>(std::lround(ch * width))), 3);
        net_.template add<nn::Elementwise>(nn::Activation::leaky_relu);
        net_.template add<nn::Pool2>(nn::PoolKind::avg);
        conv_stages_.push_back(net_.output_shape().channels);
      }
    }
    net_.template add<nn::Linear>(output_dim);
  }

  Shape input_shape() const { return net_.input_shape(); }
  int output_dim() const { return net_.output_shape().size(); }
  /// Output channels of each conv stage (empty for a single FC map).
  const std::vector<int>& conv_stages() const { return conv_stages_; }
  std::string describe() const {
    std::string s;
    for (int ch : conv_stages_) s += "3x3 Conv " + std::to_string(ch) + " -> AvgPool -> ";
    return s + "FC " + std::to_string(output_dim());
  }

  Sequential<Scalar>& network() { return net_; }
  const Sequential<Scalar>& network() const { return net_; }

 private:
  Sequential<Scalar> net_;
  std::vector<int> conv_stages_;
};

/// Multi-scale generator. Scale 0 outputs 4×4; each later scale upsamples 2×
/// and applies two 3×3 convolutions. Each scale has a 1×1 sigmoid output
/// head; during fade-in the output blends the new head with the upsampled
/// previous one, so values always stay in [0,1].
template <typename Scalar>
class Generator {
 public:
  using Mat = Matrix<Scalar>;

  struct Pass {
    int scale = 0;
    Scalar alpha = 1;
    std::vector<Tape<Scalar>> blocks;
    Tape<Scalar> rgb, rgb_prev, up;
  };

  Generator(int latent_dim, Shape image, const std::vector<int>& channels) : image_(image) {
    if (image.height != image.width || image.height < 4)
      throw ShapeError("Generator: square images of side >= 4 required, got " + image.str());
    const int n = detail::log2_exact(image.height) - 1;
    if (static_cast<int>(channels.size()) != n)
      throw std::invalid_argument("Generator: need " + std::to_string(n) + " channel entries for " +
                                  image.str());
    Sequential<Scalar> stem(Shape{latent_dim, 1, 1});
    stem.template add<nn::Linear>(channels[0] * 16);
    stem.template add<nn::Reshape>(Shape{channels[0], 4, 4});
    stem.template add<nn::Elementwise>(nn::Activation::leaky_relu);
    stem.template add<nn::Conv2d>(channels[0], 3);
    stem.template add<nn::Elementwise>(nn::Activation::leaky_relu);
    blocks_.push_back(std::move(stem));
    for (int s = 1; s < n; ++s) {
      Sequential<Scalar> b(blocks_.back().output_shape());
      b.template add<nn::Upsample2>();
      b.template add<nn::Conv2d>(channels[static_cast<std::size_t>(s)], 3);
      b.template add<nn::Elementwise>(nn::Activation::leaky_relu);
      b.template add<nn::Conv2d>(channels[static_cast<std::size_t>(s)], 3);
      b.template add<nn::Elementwise>(nn::Activation::leaky_relu);
      blocks_.push_back(std::move(b));
    }
    for (const auto& b : blocks_) {
      Sequential<Scalar> rgb(b.output_shape());
      rgb.template add<nn::Conv2d>(image.channels, 1);
      rgb.template add<nn::Elementwise>(nn::Activation::sigmoid);
      to_rgb_.push_back(std::move(rgb));
    }
  }

  int scales() const { return static_cast<int>(blocks_.size()); }
  int latent_dim() const { return blocks_.front().input_shape().size(); }
  Shape image_shape() const { return image_; }
  Shape output_shape(int scale) const { return to_rgb_.at(static_cast<std::size_t>(scale)).output_shape(); }

  void initialize(std::mt19937_64& rng) {
    for (auto& b : blocks_) b.initialize(rng);
    for (auto& r : to_rgb_) r.initialize(rng);
  }

  const Mat& forward(const Mat& z, int scale, Scalar alpha, Pass& pass, Mat& out) const {
    check_scale(scale);
    pass.scale = scale;
    pass.alpha = alpha;
    pass.blocks.resize(static_cast<std::size_t>(scale) + 1);
    const Mat* h = &z;
    for (int s = 0; s <= scale; ++s) h = &blocks_[static_cast<std::size_t>(s)].forward(*h, pass.blocks[static_cast<std::size_t>(s)]);
    const Mat& rgb = to_rgb_[static_cast<std::size_t>(scale)].forward(*h, pass.rgb);
    if (!fading(pass)) {
      out = rgb;
      return out;
    }
    const Mat& prev = to_rgb_[static_cast<std::size_t>(scale) - 1].forward(
        pass.blocks[static_cast<std::size_t>(scale) - 1].output(), pass.rgb_prev);
    const Mat& up = upsampler(scale).forward(prev, pass.up);
    out = alpha * rgb + (Scalar(1) - alpha) * up;
    return out;
  }

  Mat forward(const Mat& z, int scale, Scalar alpha = 1) const {
    Pass p;
    Mat out;
    forward(z, scale, alpha, p, out);
    return out;
  }

  /// Back-propagates dL/d(output), accumulating parameter gradients; returns dL/dz.
  Mat backward(const Pass& pass, const Mat& grad_out) {
    const auto s = static_cast<std::size_t>(pass.scale);
    Mat g_h;
    if (!fading(pass)) {
      g_h = to_rgb_[s].backward(pass.rgb, grad_out);
    } else {
      g_h = to_rgb_[s].backward(pass.rgb, pass.alpha * grad_out);
      const Mat g_prev = upsampler(pass.scale).input_gradient(pass.up, (Scalar(1) - pass.alpha) * grad_out);
      Mat g_hprev = to_rgb_[s - 1].backward(pass.rgb_prev, g_prev);
      Mat g = blocks_[s].backward(pass.blocks[s], g_h);
      g += g_hprev;
      g_h = std::move(g);
      for (std::size_t k = s; k-- > 0;) g_h = blocks_[k].backward(pass.blocks[k], g_h);
      return g_h;
    }
    for (std::size_t k = s + 1; k-- > 0;) g_h = blocks_[k].backward(pass.blocks[k], g_h);
    return g_h;
  }

  std::vector<nn::Parameter<Scalar>*> parameters() {
    std::vector<nn::Parameter<Scalar>*> out;
    for (auto& b : blocks_) detail::append_params(out, b);
    for (auto& r : to_rgb_) detail::append_params(out, r);
    return out;
  }
  std::vector<const nn::Parameter<Scalar>*> parameters() const {
    std::vector<const nn::Parameter<Scalar>*> out;
    for (const auto& b : blocks_) detail::append_params(out, b);
    for (const auto& r : to_rgb_) detail::append_params(out, r);
    return out;
  }

 private:
  static bool fading(const Pass& p) { return p.scale > 0 && p.alpha < Scalar(1); }
  void check_scale(int scale) const {
    if (scale < 0 || scale >= scales()) throw std::out_of_range("Generator: scale out of range");
  }
  Sequential<Scalar> upsampler(int scale) const {
    Sequential<Scalar> up(output_shape(scale - 1));
    up.template add<nn::Upsample2>();
    return up;
  }

  Shape image_;
  std::vector<Sequential<Scalar>> blocks_;
  std::vector<Sequential<Scalar>> to_rgb_;
};

/// Mirror of the generator: per-scale 1×1 input heads, blocks of two 3×3
/// convolutions followed by 2×2 average pooling, and a 4×4 head ending in a
/// single logit. Fade-in blends the new block with the pooled input fed to the
/// previous head.
template <typename Scalar>
class Discriminator {
 public:
  using Mat = Matrix<Scalar>;

  struct Pass {
    int scale = 0;
    Scalar alpha = 1;
    Tape<Scalar> from_rgb, from_rgb_prev, pool;
    std::vector<Tape<Scalar>> blocks;  // blocks[k] for k in [1, scale], plus the head at 0
  };

  Discriminator(Shape image, const std::vector<int>& channels) : image_(image) {
    const int n = detail::log2_exact(image.height) - 1;
    if (static_cast<int>(channels.size()) != n)
      throw std::invalid_argument("Discriminator: channel list does not match image size");
    for (int s = 0; s < n; ++s) {
      const int side = 4 << s;
      Sequential<Scalar> rgb(Shape{image.channels, side, side});
      rgb.template add<nn::Conv2d>(channels[static_cast<std::size_t>(s)], 1);
      rgb.template add<nn::Elementwise>(nn::Activation::leaky_relu);
      from_rgb_.push_back(std::move(rgb));
    }
    Sequential<Scalar> head(Shape{channels[0], 4, 4});
    head.template add<nn::Conv2d>(channels[0], 3);
    head.template add<nn::Elementwise>(nn::Activation::leaky_relu);
    head.template add<nn::Linear>(1);
    blocks_.push_back(std::move(head));
    for (int s = 1; s < n; ++s) {
      const int side = 4 << s;
      Sequential<Scalar> b(Shape{channels[static_cast<std::size_t>(s)], side, side});
      b.template add<nn::Conv2d>(channels[static_cast<std::size_t>(s)], 3);
      b.template add<nn::Elementwise>(nn::Activation::leaky_relu);
      b.template add<nn::Conv2d>(channels[static_cast<std::size_t>(s) - 1], 3);
      b.template add<nn::Elementwise>(nn::Activation::leaky_relu);
      b.template add<nn::Pool2>(nn::PoolKind::avg);
      blocks_.push_back(std::move(b));
    }
  }

  int scales() const { return static_cast<int>(blocks_.size()); }
  Shape input_shape(int scale) const { return from_rgb_.at(static_cast<std::size_t>(scale)).input_shape(); }

  void initialize(std::mt19937_64& rng) {
    for (auto& b : blocks_) b.initialize(rng);
    for (auto& r : from_rgb_) r.initialize(rng);
  }

  /// Logits of shape N×1.
  Mat forward(const Mat& x, int scale, Scalar alpha, Pass& pass) const {
    if (scale < 0 || scale >= scales()) throw std::out_of_range("Discriminator: scale out of range");
    const auto s = static_cast<std::size_t>(scale);
    pass.scale = scale;
    pass.alpha = alpha;
    pass.blocks.resize(s + 1);
    Mat h = from_rgb_[s].forward(x, pass.from_rgb);
    if (scale > 0) {
      h = blocks_[s].forward(h, pass.blocks[s]);
      if (fading(pass)) {
        const Mat& pooled = pooler(scale).forward(x, pass.pool);
        const Mat& prev = from_rgb_[s - 1].forward(pooled, pass.from_rgb_prev);
        h = alpha * h + (Scalar(1) - alpha) * prev;
      }
    }
    for (std::size_t k = s; k-- > 1;) h = blocks_[k].forward(h, pass.blocks[k]);
    h = blocks_[0].forward(h, pass.blocks[0]);
    return h;
  }

  Mat forward(const Mat& x, int scale, Scalar alpha = 1) const {
    Pass p;
    return forward(x, scale, alpha, p);
  }

  /// Accumulates parameter gradients; returns dL/dx.
  Mat backward(const Pass& pass, const Mat& grad_logits) { return backward_impl(*this, pass, grad_logits); }

  /// dL/dx only; parameter gradients are untouched.
  Mat input_gradient(const Pass& pass, const Mat& grad_logits) const {
    return backward_impl(*this, pass, grad_logits);
  }

  std::vector<nn::Parameter<Scalar>*> parameters() {
    std::vector<nn::Parameter<Scalar>*> out;
    for (auto& b : blocks_) detail::append_params(out, b);
    for (auto& r : from_rgb_) detail::append_params(out, r);
    return out;
  }
  std::vector<const nn::Parameter<Scalar>*> parameters() const {
    std::vector<const nn::Parameter<Scalar>*> out;
    for (const auto& b : blocks_) detail::append_params(out, b);
    for (const auto& r : from_rgb_) detail::append_params(out, r);
    return out;
  }

 private:
  static bool fading(const Pass& p) { return p.scale > 0 && p.alpha < Scalar(1); }
  Sequential<Scalar> pooler(int scale) const {
    Sequential<Scalar> p(input_shape(scale));
    p.template add<nn::Pool2>(nn::PoolKind::avg);
    return p;
  }

  // Self is const for input-only gradients, mutable when accumulating.
  template <typename Self>
  static Mat backward_impl(Self& self, const Pass& pass, const Mat& grad_logits) {
    auto back = [](auto& net, const Tape<Scalar>& tape, const Mat& g) {
      if constexpr (std::is_const_v<Self>)
        return net.input_gradient(tape, g);
      else
        return net.backward(tape, g);
    };
    const auto s = static_cast<std::size_t>(pass.scale);
    Mat g = grad_logits;
    for (std::size_t k = 0; k < s; ++k) g = back(self.blocks_[k], pass.blocks[k], g);
    if (s == 0) {
      g = back(self.blocks_[0], pass.blocks[0], g);
      return back(self.from_rgb_[0], pass.from_rgb, g);
    }
    Mat g_prev_path;
    if (fading(pass)) {
      const Mat gp = back(self.from_rgb_[s - 1], pass.from_rgb_prev, ((Scalar(1) - pass.alpha) * g).eval());
      g_prev_path = self.pooler(pass.scale).input_gradient(pass.pool, gp);
      g = pass.alpha * g;
    }
    g = back(self.blocks_[s], pass.blocks[s], g);
    Mat gx = back(self.from_rgb_[s], pass.from_rgb, g);
    if (fading(pass)) gx += g_prev_path;
    return gx;
  }

  Shape image_;
  std::vector<Sequential<Scalar>> blocks_;    // [0] is the 4×4 head; [s] maps side 4·2^s to half
  std::vector<Sequential<Scalar>> from_rgb_;
};

struct UnitState {
  int scale = 0;
  double alpha = 1.0;
  long steps = 0;
  int epochs = 0;
  bool trained = false;
};

/// Per-tap explanation unit x̂ = G(C(f_pre(x))). Holds no reference to the
/// classifier beyond its spec hash; every operation takes the classifier as
/// a const argument.
template <typename Scalar>
class InterpretGanUnit {
 public:
  using Mat = Matrix<Scalar>;

  InterpretGanUnit(const models::Classifier<Scalar>& model, const std::string& tap, const GanTrainConfig& cfg)
      : tap_(tap),
        model_hash_(model.spec().hash()),
        tap_shape_(model.tap_shape(tap)),
        cfg_(cfg),
        compression_(tap_shape_, cfg.latent_dim, cfg.compression_width),
        generator_(cfg.latent_dim, model.input_shape(), cfg.channels),
        discriminator_(model.input_shape(), cfg.channels) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed ^ fnv1a(tap));
    compression_.network().initialize(rng);
    generator_.initialize(rng);
    discriminator_.initialize(rng);
    state_.scale = cfg.progressive ? 0 : generator_.scales() - 1;
  }

  const std::string& tap() const { return tap_; }
  const std::string& classifier_hash() const { return model_hash_; }
  Shape tap_shape() const { return tap_shape_; }
  const GanTrainConfig& config() const { return cfg_; }
  UnitState& state() { return state_; }
  const UnitState& state() const { return state_; }

  CompressionNet<Scalar>& compression() { return compression_; }
  const CompressionNet<Scalar>& compression() const { return compression_; }
  Generator<Scalar>& generator() { return generator_; }
  const Generator<Scalar>& generator() const { return generator_; }
  Discriminator<Scalar>& discriminator() { return discriminator_; }
  const Discriminator<Scalar>& discriminator() const { return discriminator_; }

  /// C and G parameters (the generator side of the game).
  std::vector<nn::Parameter<Scalar>*> generator_parameters() {
    auto out = compression_.network().parameters();
    for (auto* p : generator_.parameters()) out.push_back(p);
    return out;
  }
  std::vector<const nn::Parameter<Scalar>*> all_parameters() const {
    auto out = compression_.network().parameters();
    for (const auto* p : generator_.parameters()) out.push_back(p);
    for (const auto* p : discriminator_.parameters()) out.push_back(p);
    return out;
  }
  std::vector<nn::Parameter<Scalar>*> all_parameters() {
    auto out = generator_parameters();
    for (auto* p : discriminator_.parameters()) out.push_back(p);
    return out;
  }

  void check_model(const models::Classifier<Scalar>& model) const {
    if (model.spec().hash() != model_hash_)
      throw models::SpecMismatchError("unit for tap " + tap_ + " was built for classifier spec " +
                                      model_hash_ + ", got " + model.spec().hash());
  }

  /// Generator output at the current scale and fade-in, upsampled to the
  /// classifier input resolution.
  Mat generate(const Mat& latent) const {
    const Mat z = compression_.network().forward(latent);
    const Mat img = generator_.forward(z, state_.scale, static_cast<Scalar>(state_.alpha));
    return upsample_to_input(img, state_.scale);
  }

  /// x̂ = G(C(f_pre(x))).
  Mat explain(const models::Classifier<Scalar>& model, const Mat& x) const {
    if (!state_.trained)
      throw UntrainedUnitError("unit for tap " + tap_ + " has not been trained");
    check_model(model);
    return generate(model.forward_to(tap_, x));
  }

  Mat upsample_to_input(const Mat& img, int scale) const {
    const int times = generator_.scales() - 1 - scale;
    if (times == 0) return img;
    return detail::rescale<Scalar>(img, generator_.output_shape(scale), -times);
  }

 private:
  std::string tap_;
  std::string model_hash_;
  Shape tap_shape_;
  GanTrainConfig cfg_;
  CompressionNet<Scalar> compression_;
  Generator<Scalar> generator_;
  Discriminator<Scalar> discriminator_;
  UnitState state_;
};

template <typename Scalar>
InterpretGanUnit<Scalar> build_unit(const models::Classifier<Scalar>& model, const std::string& tap,
                                    const GanTrainConfig& cfg) {
  return InterpretGanUnit<Scalar>(model, tap, cfg);
}

/// Mean cross-entropy between f(x̂) and hard targets y (the negated
/// interpretability surrogate with the constant H(y) dropped). Writes
/// dL/dx̂ to `grad` when non-null.
template <typename Scalar>
Scalar interpretability_loss(const models::Classifier<Scalar>& model, const Matrix<Scalar>& x_hat,
                             std::span<const int> targets, Matrix<Scalar>* grad = nullptr) {
  Scalar loss = 0;
  if (!grad) return nn::cross_entropy<Scalar>(model.logits(x_hat), targets);
  *grad = model.input_gradient(x_hat, [&](const Matrix<Scalar>& z) {
    Matrix<Scalar> d;
    loss = nn::cross_entropy<Scalar>(z, targets, &d);
    return d;
  });
  return loss;
}

/// Soft-target variant: mean cross-entropy against the distributions `targets`.
template <typename Scalar>
Scalar interpretability_loss(const models::Classifier<Scalar>& model, const Matrix<Scalar>& x_hat,
                             const Matrix<Scalar>& targets, Matrix<Scalar>* grad = nullptr) {
  Scalar loss = 0;
  if (!grad) return nn::soft_cross_entropy<Scalar>(model.logits(x_hat), targets);
  *grad = model.input_gradient(x_hat, [&](const Matrix<Scalar>& z) {
    Matrix<Scalar> d;
    loss = nn::soft_cross_entropy<Scalar>(z, targets, &d);
    return d;
  });
  return loss;
}

/// Losses of the two-player game from discriminator logits a = logit D(·).
/// discriminator = −mean log D(x) − mean log(1 − D(x̂));
/// generator = −mean log D(x̂) (non-saturating) or mean log(1 − D(x̂)) (minimax).
/// Each probability is floored at `floor` before the log; clamped entries get
/// zero gradient.
template <typename Scalar>
struct GanTerms {
  Scalar discriminator = 0;
  Scalar generator = 0;
  Matrix<Scalar> d_grad_real;  // d(discriminator)/d(real logits)
  Matrix<Scalar> d_grad_fake;  // d(discriminator)/d(fake logits)
  Matrix<Scalar> g_grad_fake;  // d(generator)/d(fake logits)
};

namespace detail {

/// log max(σ(a), floor) and its derivative in a.
template <typename Scalar>
std::pair<Scalar, Scalar> floored_log_sigmoid(Scalar a, double floor) {
  const Scalar lf = static_cast<Scalar>(std::log(floor));
  const Scalar v = nn::log_sigmoid(a);
  if (v < lf) return {lf, Scalar(0)};
  return {v, Scalar(1) - nn::sigmoid(a)};
}

}  // namespace detail

template <typename Scalar>
GanTerms<Scalar> gan_value_terms(const Matrix<Scalar>& real_logits, const Matrix<Scalar>& fake_logits,
                                 GeneratorLoss kind = GeneratorLoss::non_saturating,
                                 double floor = 1e-12) {
  GanTerms<Scalar> t;
  const auto nr = static_cast<Scalar>(real_logits.rows());
  const auto nf = static_cast<Scalar>(fake_logits.rows());
  t.d_grad_real.resize(real_logits.rows(), 1);
  t.d_grad_fake.resize(fake_logits.rows(), 1);
  t.g_grad_fake.resize(fake_logits.rows(), 1);
  for (Eigen::Index i = 0; i < real_logits.rows(); ++i) {
    const auto [v, d] = detail::floored_log_sigmoid(real_logits(i, 0), floor);
    t.discriminator -= v / nr;
    t.d_grad_real(i, 0) = -d / nr;
  }
  for (Eigen::Index i = 0; i < fake_logits.rows(); ++i) {
    const Scalar a = fake_logits(i, 0);
    // log(1 − σ(a)) = log σ(−a)
    const auto [vn, dn] = detail::floored_log_sigmoid(-a, floor);
    t.discriminator -= vn / nf;
    t.d_grad_fake(i, 0) = dn / nf;
    if (kind == GeneratorLoss::non_saturating) {
      const auto [vp, dp] = detail::floored_log_sigmoid(a, floor);
      t.generator -= vp / nf;
      t.g_grad_fake(i, 0) = -dp / nf;
    } else {
      t.generator += vn / nf;
      t.g_grad_fake(i, 0) = -dn / nf;
    }
  }
  return t;
}

struct StepStats {
  double discriminator_loss = 0;
  double generator_loss = 0;      // GAN term only
  double interpretability = 0;    // L_I surrogate (NaN when λ = 0)
  double agreement = 0;           // batch rate of argmax f(x̂) = argmax f(x)
};

/// Generator-side objective for one batch and its gradient. When `accumulate`
/// is set, gradients are added into the C and G parameter buffers.
template <typename Scalar>
struct GeneratorObjective {
  Scalar gan = 0;
  Scalar interpretability = std::numeric_limits<Scalar>::quiet_NaN();
  Scalar total = 0;
  Matrix<Scalar> x_hat;  // at classifier resolution
};

/// Targets derived from the clean batch: hard labels argmax f(x) and the
/// softmax f(x) (for soft mode).
template <typename Scalar>
struct BatchTargets {
  std::vector<int> labels;
  Matrix<Scalar> probs;
};

template <typename Scalar>
BatchTargets<Scalar> batch_targets(const models::Classifier<Scalar>& model, const Matrix<Scalar>& x) {
  BatchTargets<Scalar> t;
  const Matrix<Scalar> z = model.logits(x);
  t.labels = nn::argmax_rows(z);
  t.probs = nn::softmax(z);
  return t;
}

/// Evaluates V-term + λ·L_I for the generator at the unit's current scale on
/// latents `latent`, with D frozen. Gradient flows from D's input and from the
/// classifier's input back through G and C.
template <typename Scalar>
GeneratorObjective<Scalar> generator_objective(InterpretGanUnit<Scalar>& unit,
                                               const models::Classifier<Scalar>& model,
                                               const Matrix<Scalar>& latent,
                                               const BatchTargets<Scalar>& targets, bool accumulate) {
  const auto& cfg = unit.config();
  const auto& st = unit.state();
  const auto alpha = static_cast<Scalar>(st.alpha);
  GeneratorObjective<Scalar> obj;
  Tape<Scalar> c_tape;
  typename Generator<Scalar>::Pass g_pass;
  Matrix<Scalar> fake;
  const Matrix<Scalar>& z = unit.compression().network().forward(latent, c_tape);
  unit.generator().forward(z, st.scale, alpha, g_pass, fake);

  typename Discriminator<Scalar>::Pass d_pass;
  const Matrix<Scalar> fake_logits = unit.discriminator().forward(fake, st.scale, alpha, d_pass);
  const auto terms = gan_value_terms<Scalar>(Matrix<Scalar>(0, 1), fake_logits, cfg.generator_loss, cfg.log_floor);
  obj.gan = terms.generator;
  obj.total = terms.generator;
  obj.x_hat = unit.upsample_to_input(fake, st.scale);

  Matrix<Scalar> g_fake;
  if (accumulate) g_fake = unit.discriminator().input_gradient(d_pass, terms.g_grad_fake);
  if (cfg.lambda > 0) {
    Matrix<Scalar> g_xhat;
    obj.interpretability = cfg.soft_targets
                               ? interpretability_loss<Scalar>(model, obj.x_hat, targets.probs,
                                                               accumulate ? &g_xhat : nullptr)
                               : interpretability_loss<Scalar>(model, obj.x_hat, targets.labels,
                                                               accumulate ? &g_xhat : nullptr);
    const auto lambda = static_cast<Scalar>(cfg.lambda);
    obj.total += lambda * obj.interpretability;
    if (accumulate) {
      const int times = unit.generator().scales() - 1 - st.scale;
      if (times > 0)
        g_xhat = detail::upsample_adjoint<Scalar>(g_xhat, unit.generator().output_shape(st.scale), times);
      g_fake += lambda * g_xhat;
    }
  }
  if (accumulate) {
    const Matrix<Scalar> gz = unit.generator().backward(g_pass, g_fake);
    unit.compression().network().backward(c_tape, gz, false);
  }
  return obj;
}

/// One alternating update (D first, then C and G) on a batch of real images.
template <typename Scalar>
class UnitTrainer {
 public:
  UnitTrainer(InterpretGanUnit<Scalar>& unit, const models::Classifier<Scalar>& model)
      : unit_(unit),
        model_(model),
        opt_g_(unit.generator_parameters(), unit.config().lr, unit.config().beta1, unit.config().beta2),
        opt_d_(unit.discriminator().parameters(), unit.config().lr, unit.config().beta1,
               unit.config().beta2) {
    unit.check_model(model);
  }

  StepStats step(const Matrix<Scalar>& x) {
    const auto& cfg = unit_.config();
    const auto& st = unit_.state();
    const auto alpha = static_cast<Scalar>(st.alpha);
    StepStats stats;

    const Matrix<Scalar> latent = model_.forward_to(unit_.tap(), x);
    BatchTargets<Scalar> targets;
    if (cfg.lambda > 0) targets = batch_targets(model_, x);

    // Discriminator update on real (downscaled) and current fakes.
    const int down = unit_.generator().scales() - 1 - st.scale;
    const Matrix<Scalar> real =
        down > 0 ? detail::rescale<Scalar>(x, model_.input_shape(), down) : x;
    const Matrix<Scalar> fake = unit_.generator().forward(
        unit_.compression().network().forward(latent), st.scale, alpha);
    opt_d_.zero_grad();
    typename Discriminator<Scalar>::Pass pr, pf;
    const Matrix<Scalar> real_logits = unit_.discriminator().forward(real, st.scale, alpha, pr);
    const Matrix<Scalar> fake_logits = unit_.discriminator().forward(fake, st.scale, alpha, pf);
    const auto terms = gan_value_terms<Scalar>(real_logits, fake_logits, cfg.generator_loss, cfg.log_floor);
    unit_.discriminator().backward(pr, terms.d_grad_real);
    unit_.discriminator().backward(pf, terms.d_grad_fake);
    opt_d_.step();
    stats.discriminator_loss = static_cast<double>(terms.discriminator);

    // Generator-side update against the refreshed discriminator.
    opt_g_.zero_grad();
    const auto obj = generator_objective<Scalar>(unit_, model_, latent, targets, true);
    opt_g_.step();
    stats.generator_loss = static_cast<double>(obj.gan);
    stats.interpretability = static_cast<double>(obj.interpretability);

    const auto pred_hat = model_.predict(obj.x_hat);
    const auto pred = cfg.lambda > 0 ? targets.labels : model_.predict(x);
    long agree = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) agree += pred[i] == pred_hat[i];
    stats.agreement = static_cast<double>(agree) / static_cast<double>(pred.size());
    ++unit_.state().steps;
    return stats;
  }

  nn::Adam<Scalar>& generator_optimizer() { return opt_g_; }
  nn::Adam<Scalar>& discriminator_optimizer() { return opt_d_; }

 private:
  InterpretGanUnit<Scalar>& unit_;
  const models::Classifier<Scalar>& model_;
  nn::Adam<Scalar> opt_g_;
  nn::Adam<Scalar> opt_d_;
};

struct GanEpochRecord {
  int epoch = 0;
  int scale = 0;
  double alpha_end = 1;
  double discriminator_loss = 0;
  double generator_loss = 0;
  double interpretability = 0;
  double agreement = 0;            // running mean over the epoch's batches
  double heldout_agreement = std::numeric_limits<double>::quiet_NaN();
  double seconds = 0;
};

struct GanHistory {
  std::vector<GanEpochRecord> epochs;
};

using GanEpochCallback = std::function<void(const GanEpochRecord&)>;

/// Rate of argmax f(x̂) = argmax f(x) over `data` (or ground truth when `use_labels`).
double agreement_rate(const InterpretGanUnit<float>& unit, const models::Classifier<float>& model,
                      const data::LabeledBatch& data, bool use_labels = false, int batch_size = 250);

/// Trains C, G and D on `train` images (progressive or flat per the unit's
/// config). The classifier is read-only throughout.
GanHistory train_unit(InterpretGanUnit<float>& unit, const models::Classifier<float>& model,
                      const data::LabeledBatch& train, const data::LabeledBatch* heldout = nullptr,
                      const GanEpochCallback& on_epoch = {});

/// Unit checkpoint: "IGANUNIT", u32 version, JSON header {tap, classifier_hash,
/// tap_shape, config, state}, then all C, G, D parameters as f32.
inline constexpr std::uint32_t kUnitVersion = 1;
void save_unit(const InterpretGanUnit<float>& unit, const std::filesystem::path& path);
/// Refuses a classifier whose spec hash differs from the one recorded.
InterpretGanUnit<float> load_unit(const std::filesystem::path& path, const models::Classifier<float>& model);

}  // namespace igan::interpretgan
