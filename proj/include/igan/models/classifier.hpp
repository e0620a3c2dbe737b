#pragma once

#include "igan/nn/loss.hpp"
#include "igan/nn/sequential.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace igan::models {

using nn::PoolKind;

enum class LayerType { conv, pool, fc };

/// One architectural unit. A conv or fc descriptor expands to the linear map
/// plus its ReLU (fc layers may disable it); a pool descriptor is a 2×2/2
/// pooling site. A non-empty `tap` names the boundary right after the unit.
struct LayerDescriptor {
  LayerType type = LayerType::conv;
  int kernel = 3;
  int channels = 0;
  int width = 0;
  bool relu = true;
  PoolKind pool = PoolKind::max;
  std::string tap;

  bool operator==(const LayerDescriptor&) const = default;
};

struct ArchitectureSpec {
  std::string name;
  Shape input;
  int label_count = 10;
  std::vector<LayerDescriptor> layers;

  std::vector<std::string> tap_names() const;
  std::vector<std::string> pool_site_names() const;

  /// Same architecture with every pooling site switched to `kind`.
  ArchitectureSpec with_pooling(PoolKind kind) const;

  /// Uniform pooling kind of the spec; throws if sites disagree or none exist.
  PoolKind pooling() const;

  nlohmann::json to_json() const;
  static ArchitectureSpec from_json(const nlohmann::json& j);

  /// FNV-1a of the canonical JSON serialization, as 16 hex digits.
  std::string hash() const;

  bool operator==(const ArchitectureSpec&) const = default;

  /// Four 3×3 convolutions (32, 32, 64, 64) with a pooling site after the
  /// second and fourth, then FC 200, FC 200, FC 10. Taps Conv1..Conv4 and
  /// FC1..FC3; Conv2/Conv4 taps sit after their pooling site, FC3 is the logits.
  static ArchitectureSpec mnist(PoolKind pool = PoolKind::max);
};

class UnknownTapError : public std::invalid_argument {
 public:
  explicit UnknownTapError(const std::string& tap) : std::invalid_argument("unknown tap: " + tap) {}
};

class UnsupportedSiteError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class SpecMismatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Classifier f with named tap points factorizing f = f_post ∘ f_pre.
///
/// The network computes logits; forward() applies the terminal softmax. A tap
/// is a layer boundary: forward_to(tap) runs layers [0, b) and
/// forward_from(tap) runs [b, end) followed by softmax.
template <typename Scalar>
class Classifier {
 public:
  using Mat = Matrix<Scalar>;

  Classifier(const ArchitectureSpec& spec, std::uint64_t seed) : spec_(spec), net_(spec.input) {
    build();
    std::mt19937_64 rng(seed);
    net_.initialize(rng);
  }

  const ArchitectureSpec& spec() const { return spec_; }
  Shape input_shape() const { return spec_.input; }
  int label_count() const { return spec_.label_count; }

  nn::Sequential<Scalar>& network() { return net_; }
  const nn::Sequential<Scalar>& network() const { return net_; }

  std::vector<std::string> taps() const { return spec_.tap_names(); }
  std::vector<std::string> pool_sites() const { return spec_.pool_site_names(); }

  std::size_t tap_boundary(const std::string& tap) const {
    const auto it = taps_.find(tap);
    if (it == taps_.end()) throw UnknownTapError(tap);
    return it->second;
  }
  Shape tap_shape(const std::string& tap) const { return net_.shape_at(tap_boundary(tap)); }

  Mat logits(const Mat& x) const {
    require_cols(x.cols(), spec_.input, "Classifier::logits");
    return net_.forward(x);
  }
  Mat forward(const Mat& x) const { return nn::softmax(logits(x)); }

  Mat forward_to(const std::string& tap, const Mat& x) const {
    require_cols(x.cols(), spec_.input, "Classifier::forward_to");
    return net_.forward(x, 0, tap_boundary(tap));
  }
  Mat logits_from(const std::string& tap, const Mat& latent) const {
    return net_.forward(latent, tap_boundary(tap));
  }
  Mat forward_from(const std::string& tap, const Mat& latent) const {
    return nn::softmax(logits_from(tap, latent));
  }

  std::vector<int> predict(const Mat& x) const { return nn::argmax_rows(logits(x)); }

  /// Gradient of a logit-space objective w.r.t. the input. `dlogits` maps the
  /// batch logits to dL/dlogits.
  template <typename LogitGrad>
  Mat input_gradient(const Mat& x, LogitGrad&& dlogits, Mat* logits_out = nullptr) const {
    require_cols(x.cols(), spec_.input, "Classifier::input_gradient");
    nn::Tape<Scalar> tape;
    const Mat& z = net_.forward(x, tape);
    const Mat g = dlogits(z);
    if (logits_out) *logits_out = z;
    return net_.input_gradient(tape, g);
  }

  /// d/dx of Σ_i CE(f(x_i), y_i) (per-sample gradients, no batch averaging).
  Mat loss_input_gradient(const Mat& x, std::span<const int> labels,
                          Vector<Scalar>* per_sample_loss = nullptr) const {
    Mat z;
    Mat g = input_gradient(
        x,
        [&](const Mat& logits) {
          Mat d;
          nn::cross_entropy<Scalar>(logits, labels, &d, {nn::Reduction::sum});
          return d;
        },
        &z);
    if (per_sample_loss) *per_sample_loss = nn::cross_entropy_per_sample<Scalar>(z, labels);
    return g;
  }

  /// Pre-pool activations at a pooling site.
  Mat pool_input(const Mat& x, const std::string& site) const {
    return net_.forward(x, 0, pool_layer(site));
  }

  /// Per-window argmax index in {0,1,2,3} at a max-pooling site.
  Eigen::Matrix<std::int8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> pool_argmax_indices(
      const Mat& x, const std::string& site) const {
    const std::size_t li = pool_layer(site);
    const auto& pool = static_cast<const nn::Pool2<Scalar>&>(net_.layer(li));
    if (pool.pool_kind() != PoolKind::max)
      throw UnsupportedSiteError("pooling site " + site + " is average pooling; argmax indices "
                                 "are defined for max-pooling sites only");
    return pool.argmax_indices(net_.forward(x, 0, li));
  }

  std::uint64_t checksum() const { return nn::parameter_checksum<Scalar>(net_.parameters()); }

  /// Copy with parameters converted to another scalar type.
  template <typename Other>
  Classifier<Other> cast() const {
    Classifier<Other> out(spec_, 0);
    auto dst = out.network().parameters();
    const auto src = net_.parameters();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value.template cast<Other>();
    return out;
  }

 private:
  std::size_t pool_layer(const std::string& site) const {
    const auto it = pools_.find(site);
    if (it == pools_.end()) throw UnsupportedSiteError("unknown pooling site: " + site);
    return it->second;
  }

  void build() {
    if (!spec_.input.valid()) throw ShapeError("ArchitectureSpec " + spec_.name + ": invalid input shape");
    int pool_index = 0;
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
      const auto& d = spec_.layers[i];
      const std::string where = "layer " + std::to_string(i) + (d.tap.empty() ? "" : " (" + d.tap + ")");
      try {
        switch (d.type) {
          case LayerType::conv:
            if (net_.output_shape().height == 1 && net_.output_shape().width == 1 && i > 0)
              throw ShapeError("convolution after a flat layer");
            if (d.channels < 1) throw ShapeError("convolution needs channels >= 1");
            net_.template add<nn::Conv2d>(d.channels, d.kernel);
            if (d.relu) net_.template add<nn::Elementwise>(nn::Activation::relu);
            break;
          case LayerType::pool:
            net_.template add<nn::Pool2>(d.pool);
            pools_["Pool" + std::to_string(++pool_index)] = net_.size() - 1;
            break;
          case LayerType::fc:
            if (d.width < 1) throw ShapeError("fully-connected layer needs width >= 1");
            net_.template add<nn::Linear>(d.width);
            if (d.relu) net_.template add<nn::Elementwise>(nn::Activation::relu);
            break;
        }
      } catch (const ShapeError& e) {
        throw ShapeError("ArchitectureSpec " + spec_.name + ": inconsistent shape chain at " + where +
                         ": " + e.what());
      }
      if (!d.tap.empty()) {
        if (taps_.count(d.tap)) throw std::invalid_argument("duplicate tap name " + d.tap);
        taps_[d.tap] = net_.size();
      }
    }
    const Shape out = net_.output_shape();
    if (out != Shape{spec_.label_count, 1, 1})
      throw ShapeError("ArchitectureSpec " + spec_.name + ": final layer must produce " +
                       std::to_string(spec_.label_count) + " logits, got " + out.str());
  }

  ArchitectureSpec spec_;
  nn::Sequential<Scalar> net_;
  std::map<std::string, std::size_t> taps_;
  std::map<std::string, std::size_t> pools_;
};

template <typename Scalar>
Classifier<Scalar> build_classifier(const ArchitectureSpec& spec, std::uint64_t seed) {
  return Classifier<Scalar>(spec, seed);
}

/// Checkpoint layout (little-endian): "IGANCKPT", u32 version, u32-prefixed
/// JSON header {spec, spec_hash}, u32 parameter count, then per parameter a
/// u32-prefixed name, u32 rows, u32 cols and f32 values.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Classifier<float>& model, const std::filesystem::path& path);

/// Loads parameters into `model`; the stored spec must equal model.spec().
void load_checkpoint(Classifier<float>& model, const std::filesystem::path& path);

/// Reconstructs the classifier described by the checkpoint header.
Classifier<float> load_classifier(const std::filesystem::path& path);

/// Spec stored in a checkpoint header (hash-verified).
ArchitectureSpec read_checkpoint_spec(const std::filesystem::path& path);

}  // namespace igan::models
