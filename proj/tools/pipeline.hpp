#pragma once

#include "igan/attacks.hpp"
#include "igan/data.hpp"
#include "igan/interpretgan.hpp"
#include "igan/models/training.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace igan::pipeline {

/// Declarative experiment description; `seed` overrides every sub-config seed.
struct ExperimentConfig {
  std::filesystem::path data_dir = "data/mnist";
  /// When > 0, use synthetic train/test sets of this many samples instead of MNIST.
  int synthetic = 0;
  long train_limit = 0;  // 0 keeps the whole split
  long test_limit = 0;
  nn::PoolKind pooling = nn::PoolKind::max;
  models::TrainConfig train;
  /// Attack battery; the first entry defines D* for explain/diagnose/confusion/attribution.
  std::vector<attacks::AttackConfig> attacks{attacks::AttackConfig::pgd(0.3, 40), attacks::AttackConfig::pgd(0.3, 100),
                                             attacks::AttackConfig::mpgd(0.3, 40), attacks::AttackConfig::fgsm(0.3)};
  long attack_limit = 0;
  interpretgan::GanTrainConfig gan;
  std::vector<std::string> taps;  // empty: every tap
  long gan_train_limit = 10000;
  long gan_heldout = 1000;
  int explain_count = 8;
  std::uint64_t seed = 0;

  void apply_seed(std::uint64_t s);
  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  /// Hash of the canonical JSON form.
  std::string hash() const;
};

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class StageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StageRecord {
  std::string name;
  std::vector<std::string> artifacts;  // relative to the output directory
  double seconds = 0;
};

/// out/manifest.json: config hash plus completed stages in completion order.
/// Every read-modify-write happens under an exclusive lock on out/.manifest.lock.
class Manifest {
 public:
  explicit Manifest(std::filesystem::path out_dir);

  /// Loads the manifest, dropping stages recorded under a different config hash
  /// or whose artifacts are missing.
  void sync(const std::string& config_hash);
  bool completed(const std::string& stage) const;
  const std::vector<StageRecord>& stages() const { return stages_; }
  void record(const StageRecord& r);
  void forget(const std::string& stage);

 private:
  template <typename F>
  void locked(F&& f);
  void load();
  void store() const;

  std::filesystem::path dir_;
  std::string hash_;
  std::vector<StageRecord> stages_;
};

struct Context {
  ExperimentConfig config;
  std::filesystem::path out;
  bool force = false;
  std::function<void(const std::string&)> log;
};

/// Stage names in dependency order.
const std::vector<std::string>& stage_names();
const std::vector<std::string>& stage_dependencies(const std::string& stage);

/// Runs one stage (checking prerequisites); a no-op when already completed
/// for this config unless `force` is set. Returns false on a no-op.
bool run_stage(Context& ctx, Manifest& manifest, const std::string& stage);

/// Runs every stage up to and including `last` (all when empty).
void run_all(Context& ctx, Manifest& manifest, const std::string& last = {});

}  // namespace igan::pipeline
