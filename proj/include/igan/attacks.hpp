#pragma once

#include "igan/data.hpp"
#include "igan/models/classifier.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <random>
#include <string>
#include <vector>

namespace igan::attacks {

enum class AttackMethod { fgsm, pgd, mpgd };

std::string to_string(AttackMethod m);
AttackMethod parse_method(const std::string& s);

/// Untargeted l∞ attack against the cross-entropy loss.
struct AttackConfig {
  AttackMethod method = AttackMethod::pgd;
  double epsilon = 0.3;
  int steps = 40;
  double step_size = 0.01;
  bool random_start = true;
  double momentum_decay = 0.0;
  std::uint64_t seed = 0;

  /// α = 0.01 for the MNIST budget (ε = 0.3, 40 steps), ε/4 otherwise.
  static double default_step_size(double epsilon, int steps);

  static AttackConfig fgsm(double epsilon);
  static AttackConfig pgd(double epsilon, int steps, std::uint64_t seed = 0);
  static AttackConfig mpgd(double epsilon, int steps, double momentum_decay = 1.0,
                           std::uint64_t seed = 0);

  /// Throws std::invalid_argument on invalid fields; returns advisory warnings
  /// (e.g. step_size > epsilon).
  std::vector<std::string> validate() const;

  /// Short label such as "PGD-40" or "FGSM".
  std::string label() const;

  nlohmann::json to_json() const;
  static AttackConfig from_json(const nlohmann::json& j);

  /// Canonical serialization stored alongside generated datasets.
  std::string fingerprint() const { return to_json().dump(); }
};

template <typename Scalar>
struct AttackResult {
  Matrix<Scalar> adversarial;
  std::vector<bool> success;       // prediction on x* differs from the label
  Vector<Scalar> loss;             // per-sample cross-entropy at x*
  std::vector<bool> zero_gradient; // input gradient vanished at the first step
};

/// Clamp to [origin − ε, origin + ε], then to [0,1].
template <typename Scalar>
Matrix<Scalar> project_linf(const Matrix<Scalar>& origin, const Matrix<Scalar>& candidate,
                            double epsilon) {
  if (!(epsilon > 0)) throw std::invalid_argument("project_linf: epsilon must be > 0");
  if (origin.rows() != candidate.rows() || origin.cols() != candidate.cols())
    throw ShapeError("project_linf: origin and candidate shapes differ");
  const auto eps = static_cast<Scalar>(epsilon);
  return candidate.array()
      .max(origin.array() - eps)
      .min(origin.array() + eps)
      .max(Scalar(0))
      .min(Scalar(1))
      .matrix();
}

/// Called with (iteration, iterate) after every projected update.
template <typename Scalar>
using IterateObserver = std::function<void(int, const Matrix<Scalar>&)>;

/// Gradient of the attack objective w.r.t. the current iterate.
template <typename Scalar>
using ObjectiveGradient = std::function<Matrix<Scalar>(const Matrix<Scalar>&)>;

namespace detail {

template <typename Scalar>
Matrix<Scalar> sign(const Matrix<Scalar>& g) {
  return g.unaryExpr([](Scalar v) { return Scalar((v > 0) - (v < 0)); });
}

/// Uniform draws in [-1,1]; scaled by ε so starts for different budgets share draws.
template <typename Scalar>
Matrix<Scalar> uniform_unit(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Matrix<Scalar> u(rows, cols);
  for (Eigen::Index i = 0; i < u.size(); ++i) u.data()[i] = static_cast<Scalar>(dist(rng));
  return u;
}

}  // namespace detail

/// Shared sign-gradient ascent loop behind FGSM, PGD and M-PGD. Returns the
/// final iterate; `zero_grad` (if non-null) flags rows whose first gradient
/// was identically zero.
template <typename Scalar>
Matrix<Scalar> sign_gradient_ascent(const Matrix<Scalar>& x0, const AttackConfig& cfg,
                                    const ObjectiveGradient<Scalar>& grad_fn,
                                    std::vector<bool>* zero_grad = nullptr,
                                    const IterateObserver<Scalar>& observe = {}) {
  if (zero_grad) zero_grad->assign(static_cast<std::size_t>(x0.rows()), false);
  if (cfg.epsilon == 0.0) return x0;
  const bool one_step = cfg.method == AttackMethod::fgsm;
  const auto alpha = static_cast<Scalar>(one_step ? cfg.epsilon : cfg.step_size);
  Matrix<Scalar> x = x0;
  if (cfg.random_start && !one_step) {
    const Matrix<Scalar> u = detail::uniform_unit<Scalar>(x0.rows(), x0.cols(), cfg.seed);
    x = (x0 + static_cast<Scalar>(cfg.epsilon) * u).cwiseMax(Scalar(0)).cwiseMin(Scalar(1));
  }
  const bool momentum = cfg.method == AttackMethod::mpgd;
  Matrix<Scalar> accum = Matrix<Scalar>::Zero(x0.rows(), x0.cols());
  const int steps = one_step ? 1 : cfg.steps;
  for (int k = 0; k < steps; ++k) {
    Matrix<Scalar> g = grad_fn(x);
    if (k == 0 && zero_grad)
      for (Eigen::Index i = 0; i < g.rows(); ++i)
        (*zero_grad)[static_cast<std::size_t>(i)] = g.row(i).cwiseAbs().maxCoeff() == Scalar(0);
    if (momentum) {
      const auto mu = static_cast<Scalar>(cfg.momentum_decay);
      for (Eigen::Index i = 0; i < g.rows(); ++i) {
        const Scalar l1 = g.row(i).template lpNorm<1>();
        accum.row(i) = mu * accum.row(i) + (l1 > 0 ? (g.row(i) / l1).eval() : g.row(i).eval());
      }
      g = accum;
    }
    x = project_linf<Scalar>(x0, x + alpha * detail::sign(g), cfg.epsilon);
    if (observe) observe(k, x);
  }
  return x;
}

template <typename Scalar>
AttackResult<Scalar> run_attack(const models::Classifier<Scalar>& model, const Matrix<Scalar>& x,
                                std::span<const int> labels, const AttackConfig& cfg,
                                const IterateObserver<Scalar>& observe = {}) {
  cfg.validate();
  if (static_cast<Eigen::Index>(labels.size()) != x.rows())
    throw ShapeError("attack: label count does not match batch size");
  AttackResult<Scalar> r;
  const ObjectiveGradient<Scalar> grad = [&](const Matrix<Scalar>& xi) {
    return model.loss_input_gradient(xi, labels);
  };
  r.adversarial = sign_gradient_ascent<Scalar>(x, cfg, grad, &r.zero_gradient, observe);
  const Matrix<Scalar> z = model.logits(r.adversarial);
  r.loss = nn::cross_entropy_per_sample<Scalar>(z, labels);
  const auto pred = nn::argmax_rows(z);
  r.success.resize(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) r.success[i] = pred[i] != labels[i];
  return r;
}

template <typename Scalar>
AttackResult<Scalar> fgsm(const models::Classifier<Scalar>& model, const Matrix<Scalar>& x,
                          std::span<const int> labels, const AttackConfig& cfg) {
  if (cfg.method != AttackMethod::fgsm) throw std::invalid_argument("fgsm: config method is not fgsm");
  return run_attack(model, x, labels, cfg);
}

template <typename Scalar>
AttackResult<Scalar> pgd(const models::Classifier<Scalar>& model, const Matrix<Scalar>& x,
                         std::span<const int> labels, const AttackConfig& cfg,
                         const IterateObserver<Scalar>& observe = {}) {
  if (cfg.method != AttackMethod::pgd) throw std::invalid_argument("pgd: config method is not pgd");
  return run_attack(model, x, labels, cfg, observe);
}

template <typename Scalar>
AttackResult<Scalar> mpgd(const models::Classifier<Scalar>& model, const Matrix<Scalar>& x,
                          std::span<const int> labels, const AttackConfig& cfg,
                          const IterateObserver<Scalar>& observe = {}) {
  if (cfg.method != AttackMethod::mpgd) throw std::invalid_argument("mpgd: config method is not mpgd");
  return run_attack(model, x, labels, cfg, observe);
}

/// Attacks `data` in chunks of `batch_size`; chunk b uses seed cfg.seed + b.
MatrixF attack_dataset(const models::Classifier<float>& model, const data::LabeledBatch& data,
                       const AttackConfig& cfg, int batch_size = 100);

/// Accuracy of the model on attacked inputs.
double robust_accuracy(const models::Classifier<float>& model, const data::LabeledBatch& data,
                       const AttackConfig& cfg, int batch_size = 100);

data::AdversarialDataset generate_adversarial_dataset(const models::Classifier<float>& model,
                                                      const data::DatasetSpec& spec,
                                                      const data::LabeledBatch& data,
                                                      const AttackConfig& cfg,
                                                      int batch_size = 100);

/// Checks a dataset's stored fingerprint against a configuration.
bool fingerprint_matches(const data::AdversarialDataset& ds, const AttackConfig& cfg);

}  // namespace igan::attacks
