#include "dis2/cli.h"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

#include "dis2/checkpoint.h"
#include "dis2/config.h"
#include "dis2/engine.h"
#include "dis2/viz.h"

namespace dis2 {

namespace fs = std::filesystem;

namespace {

struct UsageError : Error {
  using Error::Error;
};

struct CommonOptions {
  std::string config;
  std::string output_dir;
  std::optional<uint64_t> seed;
};

ExperimentConfig resolve_config(const CommonOptions& o) {
  if (o.config.empty()) throw UsageError("--config is required");
  if (!fs::exists(o.config)) throw UsageError("config file not found: " + o.config);
  auto config = load_config(o.config);
  if (const char* root = std::getenv(kOutputRootEnv); root && *root) config.output_dir = root;
  if (!o.output_dir.empty()) config.output_dir = o.output_dir;
  if (o.seed) config.seed = *o.seed;
  return config;
}

fs::path checkpoint_path(const ExperimentConfig& config, const std::string& flag) {
  fs::path p = flag.empty() ? config.output_dir / "model.ckpt" : fs::path(flag);
  if (!fs::exists(p)) throw UsageError("checkpoint not found: " + p.string() + " (run `train` first or pass --checkpoint)");
  return p;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

int run_train(const CommonOptions& common, std::optional<int> steps, std::optional<int> batch_size,
              std::optional<double> lr) {
  auto config = resolve_config(common);
  if (steps) config.optim.steps = *steps;
  if (batch_size) config.optim.batch_size = *batch_size;
  if (lr) config.optim.learning_rate = *lr;
  config.validate();
  fs::create_directories(config.output_dir);
  save_config(config, config.output_dir / "config.json");

  Trainer trainer(config, load_training_set(config));
  std::ofstream csv(config.output_dir / "loss.csv");
  csv << "step," << LossReport::csv_header() << '\n';
  try {
    trainer.fit(config.optim.steps, [&](int step, const LossReport& r) {
      csv << step << ',' << r.csv_row() << '\n';
      if (step % 50 == 0 || step == config.optim.steps)
        std::cout << "step " << step << " total " << r.total << " (" << r.student_scenario.name() << ")\n";
    });
  } catch (const NonFiniteLoss& e) {
    csv << trainer.step() + 1 << ',' << e.report().csv_row() << '\n';
    std::cerr << "aborted: " << e.what() << " at step " << trainer.step() + 1 << "\n  " << LossReport::csv_header()
              << "\n  " << e.report().csv_row() << '\n';
    return kExitNonFinite;
  }
  save_checkpoint(trainer.model(), config, config.output_dir / "model.ckpt");
  std::cout << "trained " << config.toggles.name() << " for " << config.optim.steps << " steps -> "
            << (config.output_dir / "model.ckpt").string() << '\n';
  return kExitOk;
}

std::vector<ScenarioMask> scenarios_from(const std::string& name) {
  if (name == "all") return {kAllScenarios.begin(), kAllScenarios.end()};
  try {
    return {ScenarioMask::parse(name)};
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
}

int run_eval(const CommonOptions& common, const std::string& scenario, const std::string& ckpt) {
  auto config = resolve_config(common);
  auto model = load_checkpoint(checkpoint_path(config, ckpt), config);
  const auto data = load_evaluation_set(config);
  for (auto s : scenarios_from(scenario)) {
    const auto report = evaluate(model, data, s);
    write_text(config.output_dir / ("metrics_" + s.name() + ".json"), report.to_json().dump(2) + "\n");
    write_text(config.output_dir / ("metrics_" + s.name() + ".csv"), report.to_csv());
    std::printf("%-13s mF1 %6.2f  mIoU %6.2f  OA %6.2f\n", s.name().c_str(), report.mean_f1, report.mean_iou,
                report.overall_accuracy);
  }
  return kExitOk;
}

int run_diagnose(const CommonOptions& common, const std::string& kind, const std::string& ckpt) {
  auto config = resolve_config(common);
  auto model = load_checkpoint(checkpoint_path(config, ckpt), config);
  const auto data = load_evaluation_set(config);
  if (kind == "distance") {
    const auto table = penultimate_distance(model, data);
    emit_distance_table(table, config.output_dir);
    for (const auto& e : table.entries)
      std::printf("%-13s vs %-13s L2 %.6e\n", e.a.name().c_str(), e.b.name().c_str(), e.distance);
    return kExitOk;
  }
  if (kind == "orthogonality") {
    const auto stats = pooled_orthogonality(model, data);
    nlohmann::json j;
    for (int m = 0; m < 2; ++m) j[std::string(to_string(kModalities[m]))] = stats.mean_abs_cos[m];
    write_text(config.output_dir / "orthogonality.json", j.dump(2) + "\n");
    for (int m = 0; m < 2; ++m) {
      std::printf("%s mean|cos|", std::string(to_string(kModalities[m])).c_str());
      for (double v : stats.mean_abs_cos[m]) std::printf(" %.4f", v);
      std::printf("\n");
    }
    return kExitOk;
  }
  throw UsageError("unknown diagnose kind '" + kind + "' (expected distance or orthogonality)");
}

int run_viz(const CommonOptions& common, const std::string& kind, std::optional<int> cls, const std::string& scenario,
            int patch_index, const std::string& ckpt) {
  if (kind != "cwam" && kind != "query" && kind != "branches")
    throw UsageError("unknown viz kind '" + kind + "' (expected cwam, query or branches)");
  auto config = resolve_config(common);
  auto model = load_checkpoint(checkpoint_path(config, ckpt), config);
  const auto dir = config.output_dir / "viz";
  VizArtifacts art;
  if (kind == "query") {
    art = emit_query_heatmap(model, dir);
  } else {
    const auto data = load_evaluation_set(config);
    if (patch_index < 0 || patch_index >= static_cast<int>(data.size()))
      throw UsageError("--patch out of range (evaluation set has " + std::to_string(data.size()) + " patches)");
    for (auto s : scenarios_from(scenario)) {
      auto part = kind == "cwam" ? emit_cwam(model, data[patch_index], s, dir, cls)
                                 : emit_branch_activations(model, data[patch_index], s, dir);
      art.images.insert(art.images.end(), part.images.begin(), part.images.end());
      art.dumps.insert(art.dumps.end(), part.dumps.begin(), part.dumps.end());
    }
  }
  std::cout << "wrote " << art.images.size() << " images and " << art.dumps.size() << " dumps to " << dir.string()
            << '\n';
  return kExitOk;
}

int run_synth(const std::string& spec_path, const std::string& output_dir, const std::string& split) {
  if (!fs::exists(spec_path)) throw UsageError("spec file not found: " + spec_path);
  std::ifstream in(spec_path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("cannot parse spec " + spec_path + ": " + e.what());
  }
  // Accept either a bare synthetic spec or a full experiment config.
  const bool nested = j.contains("dataset") && j.at("dataset").contains("synthetic");
  const auto spec = synthetic_spec_from_json(nested ? j.at("dataset").at("synthetic") : j);

  fs::path out = output_dir;
  if (out.empty()) {
    const char* root = std::getenv(kOutputRootEnv);
    out = (root && *root) ? fs::path(root) : fs::path("runs/synthetic");
  }
  const auto patches = generate_synthetic(spec);
  ColorMap colors = isprs_color_map();
  while (static_cast<int>(colors.colors.size()) < spec.num_classes)
    colors.colors.push_back({static_cast<uint8_t>(37 * colors.colors.size() % 256),
                             static_cast<uint8_t>(91 * colors.colors.size() % 256),
                             static_cast<uint8_t>(53 * colors.colors.size() % 256)});
  colors.colors.resize(static_cast<size_t>(spec.num_classes));
  write_isprs_tiles(out, parse_split(split), patches, colors);
  nlohmann::json legend = nlohmann::json::array();
  for (const auto& c : colors.colors) legend.push_back({c[0], c[1], c[2]});
  write_text(out / "colors.json", legend.dump() + "\n");
  std::cout << "wrote " << patches.size() << " patches to " << (out / split).string() << '\n';
  return kExitOk;
}

}  // namespace

int cli_main(const std::vector<std::string>& args) {
  CLI::App app{"DIS2 missing-modality segmentation: train, evaluate, diagnose and visualise"};
  app.require_subcommand(1);

  CommonOptions common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", common.config, "experiment config (JSON)");
    sub->add_option("-o,--output-dir", common.output_dir, "output directory (overrides config and $DIS2_OUTPUT_ROOT)");
    sub->add_option("--seed", common.seed, "override the config seed");
  };

  auto* train = app.add_subcommand("train", "train a model and write model.ckpt + loss.csv");
  add_common(train);
  std::optional<int> steps, batch_size;
  std::optional<double> lr;
  train->add_option("--steps", steps, "optimiser steps");
  train->add_option("--batch-size", batch_size, "patches per step");
  train->add_option("--lr", lr, "peak learning rate");

  std::string scenario = "all", ckpt;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint under one or all scenarios");
  add_common(eval);
  eval->add_option("--scenario", scenario, "full | missing_rgir | missing_ndsm | all");
  eval->add_option("--checkpoint", ckpt, "checkpoint (default <output_dir>/model.ckpt)");

  std::string diag_kind = "distance";
  auto* diagnose = app.add_subcommand("diagnose", "penultimate-distance or orthogonality diagnostics");
  add_common(diagnose);
  diagnose->add_option("--kind", diag_kind, "distance | orthogonality");
  diagnose->add_option("--checkpoint", ckpt, "checkpoint (default <output_dir>/model.ckpt)");

  std::string viz_kind;
  std::optional<int> viz_class;
  int patch_index = 0;
  std::string viz_scenario = "all";
  auto* viz = app.add_subcommand("viz", "emit attention / query / branch activation figures");
  add_common(viz);
  viz->add_option("--kind", viz_kind, "cwam | query | branches")->required();
  viz->add_option("--class", viz_class, "only this class (cwam)");
  viz->add_option("--scenario", viz_scenario, "full | missing_rgir | missing_ndsm | all");
  viz->add_option("--patch", patch_index, "index into the evaluation set");
  viz->add_option("--checkpoint", ckpt, "checkpoint (default <output_dir>/model.ckpt)");

  std::string spec_path, synth_out, synth_split = "train";
  auto* synth = app.add_subcommand("synth-data", "write a synthetic dataset in the ISPRS directory layout");
  synth->add_option("--spec", spec_path, "synthetic spec (JSON)")->required();
  synth->add_option("-o,--output-dir", synth_out, "dataset root");
  synth->add_option("--split", synth_split, "train | val | test");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (train->parsed()) return run_train(common, steps, batch_size, lr);
    if (eval->parsed()) return run_eval(common, scenario, ckpt);
    if (diagnose->parsed()) return run_diagnose(common, diag_kind, ckpt);
    if (viz->parsed()) return run_viz(common, viz_kind, viz_class, viz_scenario, patch_index, ckpt);
    if (synth->parsed()) return run_synth(spec_path, synth_out, synth_split);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

int cli_main(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return cli_main(args);
}

}  // namespace dis2
