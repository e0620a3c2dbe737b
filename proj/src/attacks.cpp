#include "igan/attacks.hpp"

#include <cmath>

namespace igan::attacks {

using nlohmann::json;

std::string to_string(AttackMethod m) {
  switch (m) {
    case AttackMethod::fgsm: return "fgsm";
    case AttackMethod::pgd: return "pgd";
    case AttackMethod::mpgd: return "mpgd";
  }
  return "?";
}

AttackMethod parse_method(const std::string& s) {
  if (s == "fgsm") return AttackMethod::fgsm;
  if (s == "pgd") return AttackMethod::pgd;
  if (s == "mpgd") return AttackMethod::mpgd;
  throw std::invalid_argument("unknown attack method: " + s);
}

double AttackConfig::default_step_size(double epsilon, int steps) {
  if (std::abs(epsilon - 0.3) < 1e-12 && steps == 40) return 0.01;
  return epsilon / 4.0;
}

AttackConfig AttackConfig::fgsm(double epsilon) {
  AttackConfig c;
  c.method = AttackMethod::fgsm;
  c.epsilon = epsilon;
  c.steps = 1;
  c.step_size = epsilon;
  c.random_start = false;
  return c;
}

AttackConfig AttackConfig::pgd(double epsilon, int steps, std::uint64_t seed) {
  AttackConfig c;
  c.method = AttackMethod::pgd;
  c.epsilon = epsilon;
  c.steps = steps;
  c.step_size = default_step_size(epsilon, steps);
  c.random_start = true;
  c.seed = seed;
  return c;
}

AttackConfig AttackConfig::mpgd(double epsilon, int steps, double momentum_decay, std::uint64_t seed) {
  AttackConfig c = pgd(epsilon, steps, seed);
  c.method = AttackMethod::mpgd;
  c.momentum_decay = momentum_decay;
  return c;
}

std::vector<std::string> AttackConfig::validate() const {
  if (!(epsilon >= 0) || !std::isfinite(epsilon))
    throw std::invalid_argument("attack epsilon must be a finite value >= 0");
  if (steps < 1) throw std::invalid_argument("attack steps must be >= 1");
  if (method == AttackMethod::fgsm && steps != 1)
    throw std::invalid_argument("fgsm implies steps = 1");
  if (method != AttackMethod::fgsm && !(step_size > 0))
    throw std::invalid_argument("attack step_size must be > 0");
  if (momentum_decay < 0) throw std::invalid_argument("momentum_decay must be >= 0");
  std::vector<std::string> warnings;
  if (method != AttackMethod::fgsm && step_size > epsilon)
    warnings.push_back("step_size " + std::to_string(step_size) + " exceeds epsilon " +
                       std::to_string(epsilon));
  return warnings;
}

std::string AttackConfig::label() const {
  switch (method) {
    case AttackMethod::fgsm: return "FGSM";
    case AttackMethod::pgd: return "PGD-" + std::to_string(steps);
    case AttackMethod::mpgd: return "M-PGD-" + std::to_string(steps);
  }
  return "?";
}

json AttackConfig::to_json() const {
  return json{{"method", to_string(method)},
              {"epsilon", epsilon},
              {"steps", steps},
              {"step_size", step_size},
              {"random_start", random_start},
              {"momentum_decay", momentum_decay},
              {"seed", seed},
              {"norm", "linf"},
              {"loss", "cross_entropy"},
              {"targeted", false}};
}

AttackConfig AttackConfig::from_json(const json& j) {
  AttackConfig c;
  c.method = parse_method(j.value("method", "pgd"));
  c.epsilon = j.value("epsilon", 0.3);
  c.steps = j.value("steps", c.method == AttackMethod::fgsm ? 1 : 40);
  c.step_size = j.contains("step_size")
                    ? j.at("step_size").get<double>()
                    : (c.method == AttackMethod::fgsm ? c.epsilon
                                                      : default_step_size(c.epsilon, c.steps));
  c.random_start = j.value("random_start", c.method != AttackMethod::fgsm);
  c.momentum_decay = j.value("momentum_decay", c.method == AttackMethod::mpgd ? 1.0 : 0.0);
  c.seed = j.value("seed", std::uint64_t{0});
  if (j.value("norm", "linf") != "linf") throw std::invalid_argument("only the linf norm is supported");
  c.validate();
  return c;
}

MatrixF attack_dataset(const models::Classifier<float>& model, const data::LabeledBatch& data,
                       const AttackConfig& cfg, int batch_size) {
  if (data.empty()) throw std::invalid_argument("attack: empty dataset");
  MatrixF out(data.images.rows(), data.images.cols());
  std::uint64_t b = 0;
  for (Eigen::Index i = 0; i < data.size(); i += batch_size, ++b) {
    const Eigen::Index n = std::min<Eigen::Index>(batch_size, data.size() - i);
    AttackConfig c = cfg;
    c.seed = cfg.seed + b;
    const MatrixF x = data.images.middleRows(i, n);
    const std::span<const int> y(data.labels.data() + i, static_cast<std::size_t>(n));
    out.middleRows(i, n) = run_attack<float>(model, x, y, c).adversarial;
  }
  return out;
}

double robust_accuracy(const models::Classifier<float>& model, const data::LabeledBatch& data,
                       const AttackConfig& cfg, int batch_size) {
  const MatrixF adv = attack_dataset(model, data, cfg, batch_size);
  long correct = 0;
  for (Eigen::Index i = 0; i < adv.rows(); i += batch_size) {
    const Eigen::Index n = std::min<Eigen::Index>(batch_size, adv.rows() - i);
    const auto pred = model.predict(adv.middleRows(i, n));
    for (Eigen::Index k = 0; k < n; ++k) correct += pred[static_cast<std::size_t>(k)] == data.labels[static_cast<std::size_t>(i + k)];
  }
  return static_cast<double>(correct) / static_cast<double>(adv.rows());
}

data::AdversarialDataset generate_adversarial_dataset(const models::Classifier<float>& model,
                                                      const data::DatasetSpec& spec,
                                                      const data::LabeledBatch& data,
                                                      const AttackConfig& cfg, int batch_size) {
  data::AdversarialDataset ds;
  ds.spec = spec;
  ds.clean = data;
  ds.adversarial = attack_dataset(model, data, cfg, batch_size);
  ds.attack_fingerprint = cfg.fingerprint();
  ds.source_model_id = model.spec().hash() + ":" + hex64(model.checksum());
  ds.validate();
  return ds;
}

bool fingerprint_matches(const data::AdversarialDataset& ds, const AttackConfig& cfg) {
  return AttackConfig::from_json(json::parse(ds.attack_fingerprint)).fingerprint() ==
         cfg.fingerprint();
}

}  // namespace igan::attacks
