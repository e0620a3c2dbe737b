#include "pipeline.hpp"

#include "render.hpp"

#include "igan/attribution.hpp"
#include "igan/diagnostics.hpp"
#include "igan/io.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <map>
#include <sstream>

namespace igan::pipeline {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string pool_name(nn::PoolKind k) { return k == nn::PoolKind::max ? "max" : "avg"; }

nn::PoolKind parse_pool(const std::string& s) {
  if (s == "max") return nn::PoolKind::max;
  if (s == "avg") return nn::PoolKind::avg;
  throw UsageError("unknown pooling kind " + s + " (expected max or avg)");
}

std::string fmt4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

/// File-name form of an attack: "pgd-40_eps0.3000".
std::string attack_slug(const attacks::AttackConfig& a) {
  std::string s = a.label();
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s + "_eps" + fmt4(a.epsilon);
}

}  // namespace

// ---------------------------------------------------------------- config

void ExperimentConfig::apply_seed(std::uint64_t s) {
  seed = s;
  train.seed = s;
  train.inner.seed = s;
  for (auto& a : attacks) a.seed = s;
  gan.seed = s;
}

void ExperimentConfig::validate() const {
  if (synthetic < 0) throw UsageError("synthetic must be >= 0");
  if (train_limit < 0 || test_limit < 0 || attack_limit < 0 || gan_train_limit < 0 || gan_heldout < 0)
    throw UsageError("sample limits must be >= 0");
  if (attacks.empty()) throw UsageError("at least one attack is required");
  if (explain_count < 1) throw UsageError("explain_count must be >= 1");
  train.validate();
  for (const auto& a : attacks) a.validate();
  gan.validate();
  const auto known = models::ArchitectureSpec::mnist().tap_names();
  for (const auto& t : taps)
    if (std::find(known.begin(), known.end(), t) == known.end()) throw UsageError("unknown tap " + t);
}

json ExperimentConfig::to_json() const {
  json a = json::array();
  for (const auto& c : attacks) a.push_back(c.to_json());
  return json{{"data_dir", data_dir.string()},
              {"synthetic", synthetic},
              {"train_limit", train_limit},
              {"test_limit", test_limit},
              {"pooling", pool_name(pooling)},
              {"train", train.to_json()},
              {"attacks", a},
              {"attack_limit", attack_limit},
              {"gan", gan.to_json()},
              {"taps", taps},
              {"gan_train_limit", gan_train_limit},
              {"gan_heldout", gan_heldout},
              {"explain_count", explain_count},
              {"seed", seed}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  try {
    c.data_dir = j.value("data_dir", c.data_dir.string());
    c.synthetic = j.value("synthetic", c.synthetic);
    c.train_limit = j.value("train_limit", c.train_limit);
    c.test_limit = j.value("test_limit", c.test_limit);
    c.pooling = parse_pool(j.value("pooling", std::string("max")));
    if (j.contains("train")) c.train = models::TrainConfig::from_json(j.at("train"));
    if (j.contains("attacks")) {
      c.attacks.clear();
      for (const auto& a : j.at("attacks")) c.attacks.push_back(attacks::AttackConfig::from_json(a));
    }
    c.attack_limit = j.value("attack_limit", c.attack_limit);
    if (j.contains("gan")) c.gan = interpretgan::GanTrainConfig::from_json(j.at("gan"));
    c.taps = j.value("taps", c.taps);
    c.gan_train_limit = j.value("gan_train_limit", c.gan_train_limit);
    c.gan_heldout = j.value("gan_heldout", c.gan_heldout);
    c.explain_count = j.value("explain_count", c.explain_count);
  } catch (const json::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  } catch (const UsageError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  c.apply_seed(j.value("seed", std::uint64_t{0}));
  c.validate();
  return c;
}

std::string ExperimentConfig::hash() const { return hex64(fnv1a(to_json().dump())); }

// -------------------------------------------------------------- manifest

Manifest::Manifest(fs::path out_dir) : dir_(std::move(out_dir)) { fs::create_directories(dir_); }

template <typename F>
void Manifest::locked(F&& f) {
  const auto lock_path = dir_ / ".manifest.lock";
  const int fd = ::open(lock_path.c_str(), O_CREAT | O_RDWR, 0644);
  if (fd < 0) throw io::IoError("cannot open lock file " + lock_path.string());
  if (::flock(fd, LOCK_EX) != 0) {
    ::close(fd);
    throw io::IoError("cannot lock " + lock_path.string());
  }
  try {
    f();
  } catch (...) {
    ::flock(fd, LOCK_UN);
    ::close(fd);
    throw;
  }
  ::flock(fd, LOCK_UN);
  ::close(fd);
}

void Manifest::load() {
  stages_.clear();
  const auto path = dir_ / "manifest.json";
  if (!fs::exists(path)) return;
  json j;
  try {
    j = json::parse(io::read_text(path));
  } catch (const json::exception& e) {
    throw StageError("manifest " + path.string() + " is unreadable: " + e.what());
  }
  if (j.value("config_hash", std::string()) != hash_) return;
  for (const auto& s : j.at("stages")) {
    StageRecord r;
    r.name = s.at("name").get<std::string>();
    r.artifacts = s.at("artifacts").get<std::vector<std::string>>();
    r.seconds = s.at("seconds").get<double>();
    bool present = true;
    for (const auto& a : r.artifacts) present = present && fs::exists(dir_ / a);
    if (present) stages_.push_back(std::move(r));
  }
}

void Manifest::store() const {
  json stages = json::array();
  for (const auto& s : stages_)
    stages.push_back(json{{"name", s.name}, {"artifacts", s.artifacts}, {"seconds", s.seconds}});
  io::write_text_atomic(dir_ / "manifest.json", json{{"config_hash", hash_}, {"stages", stages}}.dump(2) + "\n");
}

void Manifest::sync(const std::string& config_hash) {
  hash_ = config_hash;
  locked([&] {
    load();
    store();
  });
}

bool Manifest::completed(const std::string& stage) const {
  return std::any_of(stages_.begin(), stages_.end(), [&](const StageRecord& r) { return r.name == stage; });
}

void Manifest::record(const StageRecord& r) {
  locked([&] {
    load();
    std::erase_if(stages_, [&](const StageRecord& s) { return s.name == r.name; });
    stages_.push_back(r);
    store();
  });
}

void Manifest::forget(const std::string& stage) {
  locked([&] {
    load();
    std::erase_if(stages_, [&](const StageRecord& s) { return s.name == stage; });
    store();
  });
}

// ---------------------------------------------------------------- stages

namespace {

struct Splits {
  data::LabeledBatch train, test;
};

Splits load_data(const ExperimentConfig& c) {
  const auto spec = data::DatasetSpec::mnist();
  Splits s;
  if (c.synthetic > 0) {
    s.train = data::make_synthetic(c.seed, c.synthetic, spec);
    s.test = data::make_synthetic(c.seed + 1, c.synthetic, spec);
  } else {
    s.train = data::load_split(spec, data::Split::train, c.data_dir);
    s.test = data::load_split(spec, data::Split::test, c.data_dir);
  }
  if (c.train_limit > 0) s.train = s.train.take(c.train_limit);
  if (c.test_limit > 0) s.test = s.test.take(c.test_limit);
  return s;
}

data::LabeledBatch limit(const data::LabeledBatch& b, long n) { return n > 0 ? b.take(n) : b; }

std::vector<std::string> taps_of(const ExperimentConfig& c) {
  return c.taps.empty() ? models::ArchitectureSpec::mnist().tap_names() : c.taps;
}

std::string unit_path(const std::string& tap) { return "units/" + tap + ".unit"; }
std::string attack_path(const attacks::AttackConfig& a) { return "attacks/" + attack_slug(a) + ".adv"; }

models::Classifier<float> trained_model(const Context& ctx, models::ArchitectureSpec spec, const data::LabeledBatch& train,
                                        const data::LabeledBatch& test, const std::string& tag) {
  models::Classifier<float> model(spec, ctx.config.seed);
  const auto on_epoch = [&](const models::EpochRecord& r) {
    ctx.log(tag + " epoch " + std::to_string(r.epoch) + " lr " + fmt4(r.lr) + " loss " + fmt4(r.loss) +
            " test accuracy " + fmt4(r.test_accuracy) + " (" + fmt4(r.seconds) + " s)");
  };
  if (ctx.config.train.mode == models::TrainMode::natural)
    models::train_natural(model, train, &test, ctx.config.train, on_epoch);
  else
    models::train_adversarial(model, train, &test, ctx.config.train, on_epoch);
  return model;
}

std::vector<std::string> stage_train_classifier(const Context& ctx) {
  const auto d = load_data(ctx.config);
  const auto model = trained_model(ctx, models::ArchitectureSpec::mnist(ctx.config.pooling), d.train, d.test, "classifier");
  models::save_checkpoint(model, ctx.out / "classifier.ckpt");
  io::write_text_atomic(ctx.out / "classifier_accuracy.csv",
                        "metric,value\ntest_accuracy," + fmt4(models::evaluate(model, d.test)) + "\n");
  return {"classifier.ckpt", "classifier_accuracy.csv"};
}

std::vector<std::string> stage_attack(const Context& ctx) {
  const auto model = models::load_classifier(ctx.out / "classifier.ckpt");
  const auto test = limit(load_data(ctx.config).test, ctx.config.attack_limit);
  std::vector<std::string> out;
  std::string summary = "attack,epsilon,robust_accuracy\nclean,0.0000," + fmt4(models::evaluate(model, test)) + "\n";
  for (const auto& a : ctx.config.attacks) {
    ctx.log("attack " + a.label() + " eps " + fmt4(a.epsilon) + " on " + std::to_string(test.size()) + " samples");
    const auto ds = attacks::generate_adversarial_dataset(model, data::DatasetSpec::mnist(), test, a);
    data::save_adversarial(ds, ctx.out / attack_path(a));
    data::LabeledBatch attacked{ds.adversarial, ds.clean.labels};
    summary += a.label() + "," + fmt4(a.epsilon) + "," + fmt4(models::evaluate(model, attacked)) + "\n";
    out.push_back(attack_path(a));
  }
  io::write_text_atomic(ctx.out / "attacks/summary.csv", summary);
  out.push_back("attacks/summary.csv");
  return out;
}

std::vector<std::string> stage_train_interpret(const Context& ctx) {
  const auto model = models::load_classifier(ctx.out / "classifier.ckpt");
  const auto d = load_data(ctx.config);
  const auto train = limit(d.train, ctx.config.gan_train_limit);
  const auto held = limit(d.test, ctx.config.gan_heldout);
  std::vector<std::string> out;
  for (const auto& tap : taps_of(ctx.config)) {
    const auto path = ctx.out / unit_path(tap);
    if (!ctx.force && fs::exists(path)) {
      try {
        const auto existing = interpretgan::load_unit(path, model);
        if (existing.state().trained && existing.config().to_json() == ctx.config.gan.to_json()) {
          ctx.log("unit " + tap + " already trained, reusing " + path.string());
          out.push_back(unit_path(tap));
          continue;
        }
      } catch (const std::exception& e) {
        ctx.log("unit " + tap + ": retraining (" + e.what() + ")");
      }
    }
    auto unit = interpretgan::build_unit(model, tap, ctx.config.gan);
    std::string hist = "epoch,scale,alpha,d_loss,g_loss,interpretability,agreement,heldout_agreement,seconds\n";
    interpretgan::train_unit(unit, model, train, &held, [&](const interpretgan::GanEpochRecord& r) {
      ctx.log("unit " + tap + " epoch " + std::to_string(r.epoch) + " scale " + std::to_string(r.scale) + " D " +
              fmt4(r.discriminator_loss) + " G " + fmt4(r.generator_loss) + " L_I " + fmt4(r.interpretability) +
              " held-out agreement " + fmt4(r.heldout_agreement));
      hist += std::to_string(r.epoch) + "," + std::to_string(r.scale) + "," + fmt4(r.alpha_end) + "," +
              fmt4(r.discriminator_loss) + "," + fmt4(r.generator_loss) + "," + fmt4(r.interpretability) + "," +
              fmt4(r.agreement) + "," + fmt4(r.heldout_agreement) + "," + fmt4(r.seconds) + "\n";
    });
    interpretgan::save_unit(unit, path);
    io::write_text_atomic(ctx.out / ("units/" + tap + "_history.csv"), hist);
    out.push_back(unit_path(tap));
    out.push_back("units/" + tap + "_history.csv");
  }
  return out;
}

struct LoadedUnits {
  models::Classifier<float> model;
  std::vector<interpretgan::InterpretGanUnit<float>> units;
};

LoadedUnits load_units(const Context& ctx) {
  LoadedUnits l{models::load_classifier(ctx.out / "classifier.ckpt"), {}};
  for (const auto& tap : taps_of(ctx.config)) l.units.push_back(interpretgan::load_unit(ctx.out / unit_path(tap), l.model));
  return l;
}

data::AdversarialDataset primary_attack(const Context& ctx) {
  const auto& a = ctx.config.attacks.front();
  return data::load_adversarial(ctx.out / attack_path(a), a.epsilon);
}

std::vector<std::string> stage_explain(const Context& ctx) {
  const auto l = load_units(ctx);
  const auto ds = primary_attack(ctx);
  const auto n = std::min<Eigen::Index>(ctx.config.explain_count, ds.clean.size());
  const Shape shape = l.model.input_shape();
  std::vector<std::string> out;
  for (const auto& [name, images] : {std::pair<std::string, MatrixF>{"clean", ds.clean.images.topRows(n)},
                                     std::pair<std::string, MatrixF>{"adversarial", ds.adversarial.topRows(n)}}) {
    render::Grid grid(static_cast<int>(n), static_cast<int>(l.units.size()) + 1, shape);
    for (Eigen::Index i = 0; i < n; ++i) grid.image(static_cast<int>(i), 0, images.row(i).data());
    for (std::size_t u = 0; u < l.units.size(); ++u) {
      const MatrixF xh = l.units[u].explain(l.model, images);
      for (Eigen::Index i = 0; i < n; ++i) grid.image(static_cast<int>(i), static_cast<int>(u) + 1, xh.row(i).data());
    }
    const std::string rel = "explain/explanations_" + name + ".png";
    grid.save(ctx.out / rel);
    out.push_back(rel);
  }
  return out;
}

std::vector<std::string> stage_diagnose(const Context& ctx) {
  const auto l = load_units(ctx);
  const auto ds = primary_attack(ctx);
  std::map<std::string, diagnostics::ExplainFn> fns;
  for (const auto& u : l.units) fns[u.tap()] = diagnostics::make_explainer(u, l.model);
  const auto profile = diagnostics::explanation_accuracy(l.model, fns, ds, taps_of(ctx.config));
  const auto vul = diagnostics::vulnerability_from_acc(profile);
  diagnostics::write_profile_csv(profile, &vul, ctx.out / "diagnose/profile.csv");
  std::vector<std::string> out{"diagnose/profile.csv"};
  if (ctx.config.pooling == nn::PoolKind::max) {
    diagnostics::write_drift_csv(diagnostics::pool_index_drift(l.model, ds.clean.images, ds.adversarial),
                                 ctx.out / "diagnose/drift.csv");
    out.push_back("diagnose/drift.csv");
  } else {
    ctx.log("diagnose: average-pooling model has no argmax indices; skipping drift");
  }
  return out;
}

std::vector<std::string> stage_confusion(const Context& ctx) {
  const auto model = models::load_classifier(ctx.out / "classifier.ckpt");
  const auto c = diagnostics::misclassification_distribution(model, primary_attack(ctx));
  diagnostics::write_confusion_csv(c, ctx.out / "confusion/confusion.csv");
  render::matrix_heatmap(c.matrix).save(ctx.out / "confusion/confusion.png");
  return {"confusion/confusion.csv", "confusion/confusion.png"};
}

std::vector<std::string> stage_attribution(const Context& ctx) {
  const auto model = models::load_classifier(ctx.out / "classifier.ckpt");
  const auto ds = primary_attack(ctx);
  const auto n = std::min<Eigen::Index>(ctx.config.explain_count, ds.clean.size());
  const MatrixF x = ds.adversarial.topRows(n);
  const auto labels = model.predict(x);
  const Shape shape = model.input_shape();
  render::Grid grid(static_cast<int>(n), 5, shape);
  const auto sal = attribution::saliency(model, x, labels).values;
  const auto ixg = attribution::input_x_gradient(model, x, labels).values;
  const auto ig = attribution::integrated_gradients(model, x, labels).values;
  const auto occ = attribution::occlusion(model, x, labels).values;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int r = static_cast<int>(i);
    grid.image(r, 0, x.row(i).data());
    grid.heat(r, 1, sal.row(i).data());
    grid.signed_map(r, 2, ixg.row(i).data());
    grid.signed_map(r, 3, ig.row(i).data());
    grid.signed_map(r, 4, occ.row(i).data());
  }
  grid.save(ctx.out / "attribution/attribution.png");
  return {"attribution/attribution.png"};
}

std::vector<std::string> stage_pooling_study(const Context& ctx) {
  const auto d = load_data(ctx.config);
  const auto test = limit(d.test, ctx.config.attack_limit);
  std::string csv = "pooling,clean";
  for (const auto& a : ctx.config.attacks) csv += "," + a.label();
  csv += "\n";
  std::vector<std::string> out;
  for (auto kind : {nn::PoolKind::max, nn::PoolKind::avg}) {
    const auto model = trained_model(ctx, models::ArchitectureSpec::mnist(kind), d.train, d.test, pool_name(kind) + "-pool");
    const std::string rel = "pooling/" + pool_name(kind) + ".ckpt";
    models::save_checkpoint(model, ctx.out / rel);
    out.push_back(rel);
    csv += pool_name(kind) + "," + fmt4(models::evaluate(model, test));
    for (const auto& a : ctx.config.attacks) {
      ctx.log(pool_name(kind) + "-pool: " + a.label());
      csv += "," + fmt4(attacks::robust_accuracy(model, test, a));
    }
    csv += "\n";
  }
  io::write_text_atomic(ctx.out / "pooling/robustness.csv", csv);
  out.push_back("pooling/robustness.csv");
  return out;
}

using StageFn = std::vector<std::string> (*)(const Context&);

const std::map<std::string, StageFn>& stage_table() {
  static const std::map<std::string, StageFn> t{{"train-classifier", stage_train_classifier},
                                                {"attack", stage_attack},
                                                {"train-interpret", stage_train_interpret},
                                                {"explain", stage_explain},
                                                {"diagnose", stage_diagnose},
                                                {"confusion", stage_confusion},
                                                {"attribution", stage_attribution},
                                                {"pooling-study", stage_pooling_study}};
  return t;
}

}  // namespace

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"train-classifier", "attack",    "train-interpret", "explain",
                                              "diagnose",         "confusion", "attribution",     "pooling-study"};
  return names;
}

const std::vector<std::string>& stage_dependencies(const std::string& stage) {
  static const std::map<std::string, std::vector<std::string>> deps{
      {"train-classifier", {}},
      {"attack", {"train-classifier"}},
      {"train-interpret", {"train-classifier"}},
      {"explain", {"attack", "train-interpret"}},
      {"diagnose", {"attack", "train-interpret"}},
      {"confusion", {"attack"}},
      {"attribution", {"attack"}},
      {"pooling-study", {}}};
  const auto it = deps.find(stage);
  if (it == deps.end()) throw UsageError("unknown stage " + stage);
  return it->second;
}

bool run_stage(Context& ctx, Manifest& manifest, const std::string& stage) {
  const auto& fn = stage_table().at(stage);
  for (const auto& dep : stage_dependencies(stage))
    if (!manifest.completed(dep))
      throw StageError("stage " + stage + " needs stage " + dep + ", which has not completed for config " +
                       ctx.config.hash() + " in " + ctx.out.string() + "; run `igan " + dep + "` first");
  if (manifest.completed(stage) && !ctx.force) {
    ctx.log(stage + ": up to date");
    return false;
  }
  manifest.forget(stage);
  ctx.log(stage + ": running");
  const auto t0 = std::chrono::steady_clock::now();
  StageRecord r;
  r.name = stage;
  r.artifacts = fn(ctx);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  manifest.record(r);
  ctx.log(stage + ": done in " + fmt4(r.seconds) + " s");
  return true;
}

void run_all(Context& ctx, Manifest& manifest, const std::string& last) {
  if (!last.empty()) stage_dependencies(last);
  for (const auto& s : stage_names()) {
    run_stage(ctx, manifest, s);
    if (s == last) break;
  }
}

}  // namespace igan::pipeline
