#include "igan/interpretgan.hpp"

#include "igan/io.hpp"

#include <sstream>

namespace igan::interpretgan {

using nlohmann::json;

void GanTrainConfig::validate() const {
  if (!(lambda >= 0) || !std::isfinite(lambda)) throw std::invalid_argument("GanTrainConfig: lambda must be >= 0");
  if (progressive) {
    if (scale_epochs.empty()) throw std::invalid_argument("GanTrainConfig: scale_epochs is empty");
    for (int e : scale_epochs)
      if (e < 0) throw std::invalid_argument("GanTrainConfig: scale_epochs entries must be >= 0");
  } else if (flat_epochs < 0) {
    throw std::invalid_argument("GanTrainConfig: flat_epochs must be >= 0");
  }
  if (!(lr > 0)) throw std::invalid_argument("GanTrainConfig: lr must be > 0");
  if (batch_size < 1) throw std::invalid_argument("GanTrainConfig: batch_size must be >= 1");
  if (latent_dim < 1) throw std::invalid_argument("GanTrainConfig: latent_dim must be >= 1");
  if (!(compression_width > 0)) throw std::invalid_argument("GanTrainConfig: compression_width must be > 0");
  for (int c : channels)
    if (c < 1) throw std::invalid_argument("GanTrainConfig: channels must be >= 1");
  if (!(log_floor > 0 && log_floor < 1)) throw std::invalid_argument("GanTrainConfig: log_floor must be in (0,1)");
  if (divergence_window < 1) throw std::invalid_argument("GanTrainConfig: divergence_window must be >= 1");
}

int GanTrainConfig::total_epochs() const {
  if (!progressive) return flat_epochs;
  int n = 0;
  for (int e : scale_epochs) n += e;
  return n;
}

json GanTrainConfig::to_json() const {
  return json{{"lambda", lambda},
              {"progressive", progressive},
              {"scale_epochs", scale_epochs},
              {"flat_epochs", flat_epochs},
              {"lr", lr},
              {"beta1", beta1},
              {"beta2", beta2},
              {"batch_size", batch_size},
              {"seed", seed},
              {"latent_dim", latent_dim},
              {"channels", channels},
              {"compression_width", compression_width},
              {"soft_targets", soft_targets},
              {"generator_loss", generator_loss == GeneratorLoss::minimax ? "minimax" : "non_saturating"},
              {"log_floor", log_floor},
              {"divergence_floor", divergence_floor},
              {"divergence_window", divergence_window}};
}

GanTrainConfig GanTrainConfig::from_json(const json& j) {
  GanTrainConfig c;
  c.lambda = j.value("lambda", c.lambda);
  c.progressive = j.value("progressive", c.progressive);
  c.scale_epochs = j.value("scale_epochs", c.scale_epochs);
  c.flat_epochs = j.value("flat_epochs", c.flat_epochs);
  c.lr = j.value("lr", c.lr);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.channels = j.value("channels", c.channels);
  c.compression_width = j.value("compression_width", c.compression_width);
  c.soft_targets = j.value("soft_targets", c.soft_targets);
  const auto loss = j.value("generator_loss", std::string("non_saturating"));
  if (loss == "minimax")
    c.generator_loss = GeneratorLoss::minimax;
  else if (loss == "non_saturating")
    c.generator_loss = GeneratorLoss::non_saturating;
  else
    throw std::invalid_argument("unknown generator_loss " + loss);
  c.log_floor = j.value("log_floor", c.log_floor);
  c.divergence_floor = j.value("divergence_floor", c.divergence_floor);
  c.divergence_window = j.value("divergence_window", c.divergence_window);
  c.validate();
  return c;
}

double agreement_rate(const InterpretGanUnit<float>& unit, const models::Classifier<float>& model,
                      const data::LabeledBatch& data, bool use_labels, int batch_size) {
  if (data.empty()) throw std::invalid_argument("agreement_rate: empty dataset");
  unit.check_model(model);
  long agree = 0;
  for (Eigen::Index i = 0; i < data.size(); i += batch_size) {
    const Eigen::Index n = std::min<Eigen::Index>(batch_size, data.size() - i);
    const MatrixF x = data.images.middleRows(i, n);
    const auto pred_hat = model.predict(unit.generate(model.forward_to(unit.tap(), x)));
    std::vector<int> ref;
    if (use_labels)
      ref.assign(data.labels.begin() + i, data.labels.begin() + i + n);
    else
      ref = model.predict(x);
    for (Eigen::Index k = 0; k < n; ++k) agree += pred_hat[static_cast<std::size_t>(k)] == ref[static_cast<std::size_t>(k)];
  }
  return static_cast<double>(agree) / static_cast<double>(data.size());
}

GanHistory train_unit(InterpretGanUnit<float>& unit, const models::Classifier<float>& model,
                      const data::LabeledBatch& train, const data::LabeledBatch* heldout,
                      const GanEpochCallback& on_epoch) {
  const auto& cfg = unit.config();
  cfg.validate();
  unit.check_model(model);
  if (train.empty()) throw std::invalid_argument("train_unit: empty training set");
  const int scales = unit.generator().scales();
  if (cfg.progressive && static_cast<int>(cfg.scale_epochs.size()) != scales)
    throw std::invalid_argument("train_unit: scale_epochs has " + std::to_string(cfg.scale_epochs.size()) +
                                " entries but the generator has " + std::to_string(scales) + " scales");

  // (scale, epochs) phases.
  std::vector<std::pair<int, int>> phases;
  if (cfg.progressive)
    for (int s = 0; s < scales; ++s) phases.emplace_back(s, cfg.scale_epochs[static_cast<std::size_t>(s)]);
  else
    phases.emplace_back(scales - 1, cfg.flat_epochs);

  UnitTrainer<float> trainer(unit, model);
  auto& st = unit.state();
  GanHistory hist;
  const auto n = static_cast<std::size_t>(train.size());
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t steps_per_epoch = (n + bs - 1) / bs;
  int below_floor = 0;
  int epoch = 0;

  for (const auto& [scale, epochs] : phases) {
    if (epochs == 0) continue;
    st.scale = scale;
    const double fade_steps = cfg.progressive && scale > 0 ? 0.5 * static_cast<double>(epochs * steps_per_epoch) : 0.0;
    std::size_t phase_step = 0;
    for (int e = 0; e < epochs; ++e, ++epoch) {
      const auto t0 = std::chrono::steady_clock::now();
      const auto order = data::permutation(n, cfg.seed + static_cast<std::uint64_t>(epoch));
      GanEpochRecord rec;
      rec.epoch = epoch;
      rec.scale = scale;
      std::size_t batches = 0;
      for (std::size_t b = 0; b < n; b += bs, ++batches, ++phase_step) {
        st.alpha = fade_steps > 0 ? std::min(1.0, static_cast<double>(phase_step + 1) / fade_steps) : 1.0;
        const std::span<const std::size_t> idx(order.data() + b, std::min(bs, n - b));
        const auto s = trainer.step(train.gather(idx).images);
        if (!std::isfinite(s.discriminator_loss) || !std::isfinite(s.generator_loss)) {
          std::ostringstream msg;
          msg << "unit " << unit.tap() << ": non-finite loss at epoch " << epoch << ", step " << st.steps
              << " (D " << s.discriminator_loss << ", G " << s.generator_loss << ")";
          throw DivergenceError(msg.str());
        }
        below_floor = s.discriminator_loss < cfg.divergence_floor ? below_floor + 1 : 0;
        if (below_floor >= cfg.divergence_window) {
          std::ostringstream msg;
          msg << "unit " << unit.tap() << ": discriminator loss below " << cfg.divergence_floor << " for "
              << below_floor << " consecutive steps (epoch " << epoch << ", scale " << scale << ", step "
              << st.steps << ", last D " << s.discriminator_loss << ", G " << s.generator_loss
              << "); the generator has collapsed";
          throw DivergenceError(msg.str());
        }
        rec.discriminator_loss += s.discriminator_loss;
        rec.generator_loss += s.generator_loss;
        rec.interpretability += s.interpretability;
        rec.agreement += s.agreement;
      }
      const auto nb = static_cast<double>(batches);
      rec.discriminator_loss /= nb;
      rec.generator_loss /= nb;
      rec.interpretability /= nb;
      rec.agreement /= nb;
      rec.alpha_end = st.alpha;
      st.epochs = epoch + 1;
      if (heldout) rec.heldout_agreement = agreement_rate(unit, model, *heldout);
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      hist.epochs.push_back(rec);
      if (on_epoch) on_epoch(rec);
    }
  }
  st.trained = true;
  return hist;
}

namespace {

constexpr char kMagic[9] = "IGANUNIT";

json state_json(const UnitState& s) {
  return json{{"scale", s.scale}, {"alpha", s.alpha}, {"steps", s.steps}, {"epochs", s.epochs}, {"trained", s.trained}};
}

}  // namespace

void save_unit(const InterpretGanUnit<float>& unit, const std::filesystem::path& path) {
  const Shape ts = unit.tap_shape();
  const json header{{"tap", unit.tap()},
                    {"classifier_hash", unit.classifier_hash()},
                    {"tap_shape", {ts.channels, ts.height, ts.width}},
                    {"config", unit.config().to_json()},
                    {"state", state_json(unit.state())}};
  io::BinaryWriter w;
  w.bytes(kMagic, 8);
  w.u32(kUnitVersion);
  w.str(header.dump());
  const auto params = unit.all_parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    w.u32(static_cast<std::uint32_t>(p->value.rows()));
    w.u32(static_cast<std::uint32_t>(p->value.cols()));
    w.f32({p->value.data(), static_cast<std::size_t>(p->value.size())});
  }
  w.commit(path);
}

InterpretGanUnit<float> load_unit(const std::filesystem::path& path, const models::Classifier<float>& model) {
  io::BinaryReader r(path);
  r.expect_magic(kMagic);
  const auto version = r.u32();
  if (version != kUnitVersion)
    throw io::VersionError("unit " + path.string() + " has version " + std::to_string(version) + ", expected " +
                           std::to_string(kUnitVersion));
  const auto off = r.offset();
  json header;
  try {
    header = json::parse(r.str());
  } catch (const json::parse_error& e) {
    throw io::CorruptFileError(path, off, std::string("header: ") + e.what());
  }
  const auto hash = header.at("classifier_hash").get<std::string>();
  const auto tap = header.at("tap").get<std::string>();
  if (hash != model.spec().hash())
    throw models::SpecMismatchError("unit " + path.string() + " (tap " + tap + ") was trained against classifier spec " +
                                    hash + " but the supplied classifier has spec " + model.spec().hash());
  InterpretGanUnit<float> unit(model, tap, GanTrainConfig::from_json(header.at("config")));
  auto params = unit.all_parameters();
  if (r.u32() != params.size()) r.fail("parameter count mismatch");
  for (auto* p : params) {
    const auto rows = r.u32();
    const auto cols = r.u32();
    if (rows != p->value.rows() || cols != p->value.cols()) r.fail("parameter shape mismatch");
    r.f32({p->value.data(), static_cast<std::size_t>(p->value.size())});
  }
  if (!r.at_end()) r.fail("trailing bytes");
  const auto& s = header.at("state");
  auto& st = unit.state();
  st.scale = s.at("scale").get<int>();
  st.alpha = s.at("alpha").get<double>();
  st.steps = s.at("steps").get<long>();
  st.epochs = s.at("epochs").get<int>();
  st.trained = s.at("trained").get<bool>();
  return unit;
}

}  // namespace igan::interpretgan
