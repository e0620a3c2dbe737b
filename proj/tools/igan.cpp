#include "pipeline.hpp"

#include "igan/io.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace pl = igan::pipeline;

namespace {

struct Options {
  std::string config;
  std::string out = "runs/default";
  std::optional<std::uint64_t> seed;
  std::string stage;
  bool force = false;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "experiment config (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--seed", o.seed, "seed overriding every config seed");
  cmd->add_flag("--force", o.force, "rerun stages already recorded in the manifest");
}

pl::ExperimentConfig load_config(const Options& o) {
  nlohmann::json j = nlohmann::json::object();
  if (!o.config.empty()) {
    try {
      j = nlohmann::json::parse(igan::io::read_text(o.config));
    } catch (const nlohmann::json::exception& e) {
      throw pl::UsageError("cannot parse " + o.config + ": " + e.what());
    }
  }
  auto cfg = pl::ExperimentConfig::from_json(j);
  if (o.seed) {
    cfg.apply_seed(*o.seed);
    cfg.validate();
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Per-layer explanation generators and adversarial diagnostics"};
  app.require_subcommand(1);
  Options o;
  std::vector<CLI::App*> stage_cmds;
  for (const auto& s : pl::stage_names()) {
    auto* cmd = app.add_subcommand(s, "run the " + s + " stage");
    add_common(cmd, o);
    stage_cmds.push_back(cmd);
  }
  auto* run = app.add_subcommand("run", "run every stage in order");
  add_common(run, o);
  run->add_option("--stage", o.stage, "stop after this stage")->check(CLI::IsMember(pl::stage_names()));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    pl::Context ctx{load_config(o), o.out, o.force, [](const std::string& m) { std::cerr << "[igan] " << m << std::endl; }};
    pl::Manifest manifest(ctx.out);
    manifest.sync(ctx.config.hash());
    igan::io::write_text_atomic(ctx.out / "config.json", ctx.config.to_json().dump(2) + "\n");
    if (run->parsed()) {
      pl::run_all(ctx, manifest, o.stage);
    } else {
      for (auto* cmd : stage_cmds)
        if (cmd->parsed()) pl::run_stage(ctx, manifest, cmd->get_name());
    }
  } catch (const pl::UsageError& e) {
    std::cerr << "igan: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "igan: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
