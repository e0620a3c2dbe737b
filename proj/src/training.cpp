#include "igan/models/training.hpp"

#include "igan/nn/optim.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <random>

namespace igan::models {

using nlohmann::json;

double TrainConfig::lr_at(int epoch) const {
  double lr = lr_schedule.empty() ? 0.01 : lr_schedule.front().second;
  for (const auto& [start, rate] : lr_schedule)
    if (epoch >= start) lr = rate;
  return lr;
}

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (trades_beta < 0) throw std::invalid_argument("TrainConfig: trades_beta must be >= 0");
  if (momentum < 0 || momentum >= 1) throw std::invalid_argument("TrainConfig: momentum must be in [0,1)");
  for (const auto& [start, rate] : lr_schedule)
    if (start < 0 || !(rate > 0)) throw std::invalid_argument("TrainConfig: bad lr_schedule entry");
  if (mode == TrainMode::adversarial) inner.validate();
}

json TrainConfig::to_json() const {
  json sched = json::array();
  for (const auto& [start, rate] : lr_schedule) sched.push_back({start, rate});
  return json{{"epochs", epochs},
              {"lr_schedule", sched},
              {"batch_size", batch_size},
              {"seed", seed},
              {"momentum", momentum},
              {"mode", mode == TrainMode::natural ? "natural" : "adversarial"},
              {"trades_beta", trades_beta},
              {"atta_reuse", atta_reuse},
              {"inner", inner.to_json()}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  if (j.contains("lr_schedule")) {
    c.lr_schedule.clear();
    for (const auto& e : j.at("lr_schedule")) c.lr_schedule.emplace_back(e.at(0).get<int>(), e.at(1).get<double>());
  }
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  c.momentum = j.value("momentum", c.momentum);
  const auto mode = j.value("mode", std::string("natural"));
  if (mode != "natural" && mode != "adversarial") throw std::invalid_argument("unknown train mode " + mode);
  c.mode = mode == "natural" ? TrainMode::natural : TrainMode::adversarial;
  c.trades_beta = j.value("trades_beta", c.trades_beta);
  c.atta_reuse = j.value("atta_reuse", c.atta_reuse);
  if (j.contains("inner")) c.inner = attacks::AttackConfig::from_json(j.at("inner"));
  c.validate();
  return c;
}

MatrixF trades_inner_gradient(const Classifier<float>& model, const MatrixF& clean_logits,
                              const MatrixF& x_adv) {
  return model.input_gradient(x_adv, [&](const MatrixF& adv_logits) {
    MatrixF g;
    nn::kl_divergence<float>(clean_logits, adv_logits, nullptr, &g, {nn::Reduction::sum});
    return g;
  });
}

namespace {

using Clock = std::chrono::steady_clock;

void check_finite(double loss, int epoch, std::size_t step) {
  if (!std::isfinite(loss))
    throw TrainingError("non-finite training loss at epoch " + std::to_string(epoch) + ", step " +
                        std::to_string(step));
}

// Shared epoch loop; `step` returns the batch objective after updating gradients.
template <typename StepFn>
TrainHistory run_epochs(Classifier<float>& model, const data::LabeledBatch& train,
                        const data::LabeledBatch* test, const TrainConfig& cfg,
                        const EpochCallback& on_epoch, StepFn&& step) {
  cfg.validate();
  if (train.empty()) throw std::invalid_argument("train: empty training set");
  nn::Sgd<float> opt(model.network().parameters(), cfg.lr_at(0), cfg.momentum);
  TrainHistory hist;
  const auto n = static_cast<std::size_t>(train.size());
  for (int e = 0; e < cfg.epochs; ++e) {
    const auto t0 = Clock::now();
    opt.set_lr(cfg.lr_at(e));
    const auto order = data::permutation(n, cfg.seed + static_cast<std::uint64_t>(e));
    double total = 0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < n; b += static_cast<std::size_t>(cfg.batch_size), ++batches) {
      const std::size_t m = std::min(n - b, static_cast<std::size_t>(cfg.batch_size));
      const std::span<const std::size_t> idx(order.data() + b, m);
      const data::LabeledBatch batch = train.gather(idx);
      opt.zero_grad();
      const double loss = step(batch, idx);
      check_finite(loss, e, batches);
      opt.step();
      total += loss;
    }
    EpochRecord rec;
    rec.epoch = e;
    rec.lr = opt.lr();
    rec.loss = total / static_cast<double>(batches);
    rec.test_accuracy = test ? evaluate(model, *test) : std::numeric_limits<double>::quiet_NaN();
    rec.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    hist.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return hist;
}

}  // namespace

TrainHistory train_natural(Classifier<float>& model, const data::LabeledBatch& train,
                           const data::LabeledBatch* test, const TrainConfig& cfg,
                           const EpochCallback& on_epoch) {
  if (cfg.mode != TrainMode::natural) throw std::invalid_argument("train_natural: mode must be natural");
  auto& net = model.network();
  nn::Tape<float> tape;
  return run_epochs(model, train, test, cfg, on_epoch,
                    [&](const data::LabeledBatch& batch, std::span<const std::size_t>) {
                      const MatrixF& z = net.forward(batch.images, tape);
                      MatrixF g;
                      const float loss = nn::cross_entropy<float>(z, batch.labels, &g);
                      net.backward(tape, g, false);
                      return static_cast<double>(loss);
                    });
}

TrainHistory train_adversarial(Classifier<float>& model, const data::LabeledBatch& train,
                               const data::LabeledBatch* test, const TrainConfig& cfg,
                               const EpochCallback& on_epoch) {
  if (cfg.mode != TrainMode::adversarial)
    throw std::invalid_argument("train_adversarial: mode must be adversarial");
  auto& net = model.network();
  const auto& inner = cfg.inner;
  const float eps = static_cast<float>(inner.epsilon);
  const float alpha = static_cast<float>(inner.method == attacks::AttackMethod::fgsm ? inner.epsilon
                                                                                     : inner.step_size);
  const int inner_steps = inner.method == attacks::AttackMethod::fgsm ? 1 : inner.steps;
  std::mt19937_64 init_rng(cfg.seed ^ 0x5eed5eed5eed5eedULL);
  std::normal_distribution<float> gauss(0.0f, 1.0f);

  // Per-sample perturbation memory for ATTA, keyed by training-set index.
  MatrixF stored;
  std::vector<bool> has_stored;
  if (cfg.atta_reuse) {
    stored = MatrixF::Zero(train.images.rows(), train.images.cols());
    has_stored.assign(static_cast<std::size_t>(train.size()), false);
  }

  nn::Tape<float> clean_tape, adv_tape;
  return run_epochs(
      model, train, test, cfg, on_epoch,
      [&](const data::LabeledBatch& batch, std::span<const std::size_t> idx) {
        const MatrixF& x = batch.images;
        const MatrixF& zc = net.forward(x, clean_tape);
        MatrixF grad_clean;
        double loss = nn::cross_entropy<float>(zc, batch.labels, &grad_clean);

        if (cfg.trades_beta > 0) {
          MatrixF x_adv = x;
          if (eps > 0) {
            for (Eigen::Index i = 0; i < x.rows(); ++i) {
              const std::size_t k = idx[static_cast<std::size_t>(i)];
              if (cfg.atta_reuse && has_stored[k]) {
                x_adv.row(i) = x.row(i) + stored.row(static_cast<Eigen::Index>(k));
              } else {
                for (Eigen::Index j = 0; j < x.cols(); ++j) x_adv(i, j) += 0.001f * gauss(init_rng);
              }
            }
            x_adv = attacks::project_linf<float>(x, x_adv, eps);
            for (int s = 0; s < inner_steps; ++s) {
              const MatrixF g = trades_inner_gradient(model, zc, x_adv);
              x_adv = attacks::project_linf<float>(x, x_adv + alpha * attacks::detail::sign(g), eps);
            }
            if (cfg.atta_reuse)
              for (Eigen::Index i = 0; i < x.rows(); ++i) {
                const std::size_t k = idx[static_cast<std::size_t>(i)];
                stored.row(static_cast<Eigen::Index>(k)) = x_adv.row(i) - x.row(i);
                has_stored[k] = true;
              }
          }
          const MatrixF& za = net.forward(x_adv, adv_tape);
          MatrixF gkc, gka;
          const double kl = nn::kl_divergence<float>(zc, za, &gkc, &gka);
          const auto beta = static_cast<float>(cfg.trades_beta);
          loss += cfg.trades_beta * kl;
          grad_clean += beta * gkc;
          gka *= beta;
          net.backward(adv_tape, gka, false);
        }
        net.backward(clean_tape, grad_clean, false);
        return loss;
      });
}

}  // namespace igan::models
