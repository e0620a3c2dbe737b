#pragma once

#include "igan/attacks.hpp"
#include "igan/data.hpp"
#include "igan/models/classifier.hpp"

#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

namespace igan::models {

enum class TrainMode { natural, adversarial };

struct TrainConfig {
  int epochs = 10;
  /// (first epoch, learning rate) phases, sorted by epoch.
  std::vector<std::pair<int, double>> lr_schedule{{0, 0.01}, {5, 0.001}};
  int batch_size = 50;
  std::uint64_t seed = 0;
  double momentum = 0.0;
  TrainMode mode = TrainMode::natural;
  double trades_beta = 6.0;
  bool atta_reuse = true;
  attacks::AttackConfig inner{attacks::AttackMethod::pgd, 0.3, 1, 0.075, false, 0.0, 0};

  double lr_at(int epoch) const;
  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0;
  double loss = 0;           // mean training objective over the epoch
  double test_accuracy = 0;  // NaN when no test set was supplied
  double seconds = 0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Fraction of argmax-correct predictions.
template <typename Scalar>
double evaluate(const Classifier<Scalar>& model, const data::LabeledBatch& data, int batch_size = 250) {
  if (data.empty()) throw std::invalid_argument("evaluate: empty dataset");
  long correct = 0;
  for (Eigen::Index i = 0; i < data.size(); i += batch_size) {
    const Eigen::Index n = std::min<Eigen::Index>(batch_size, data.size() - i);
    const auto pred = model.predict(data.images.middleRows(i, n).template cast<Scalar>());
    for (Eigen::Index k = 0; k < n; ++k)
      correct += pred[static_cast<std::size_t>(k)] == data.labels[static_cast<std::size_t>(i + k)];
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

/// Minibatch SGD on cross-entropy. Epoch e visits samples in the order
/// permutation(n, seed + e).
TrainHistory train_natural(Classifier<float>& model, const data::LabeledBatch& train,
                           const data::LabeledBatch* test, const TrainConfig& cfg,
                           const EpochCallback& on_epoch = {});

/// TRADES objective CE(f(x), y) + β·KL(f(x) ‖ f(x')) where x' comes from
/// `cfg.inner.steps` sign-gradient steps maximizing the KL term. With
/// atta_reuse, each sample's final perturbation seeds its next-epoch attack;
/// otherwise attacks start from x + 0.001·N(0, 1).
TrainHistory train_adversarial(Classifier<float>& model, const data::LabeledBatch& train,
                               const data::LabeledBatch* test, const TrainConfig& cfg,
                               const EpochCallback& on_epoch = {});

/// Gradient of the batch TRADES consistency term β·KL(f(x) ‖ f(x')) w.r.t. x'
/// (used by the inner maximization).
MatrixF trades_inner_gradient(const Classifier<float>& model, const MatrixF& clean_logits,
                              const MatrixF& x_adv);

}  // namespace igan::models
