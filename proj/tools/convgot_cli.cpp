#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "convgot/commands.hpp"
#include "convgot/errors.hpp"

namespace {

enum Exit { kOk = 0, kUsage = 2, kData = 3, kNumeric = 4 };

}  // namespace

int main(int argc, char** argv) {
  using namespace convgot;
  CLI::App app{"convgot: causal speech-act, anchor and rationale pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  app.add_option("--config", config_path, "engine config (INI)")->check(CLI::ExistingFile);
  app.add_option("--set", overrides, "section.key=value override, repeatable");

  auto* synth = app.add_subcommand("synth", "generate a labeled synthetic corpus");
  SynthOptions so;
  std::optional<std::uint64_t> synth_seed;
  std::vector<double> ratios;
  synth->add_option("--seed", synth_seed, "scenario seed (default: engine.seed)");
  synth->add_option("--dialogues", so.scenario.dialogues);
  synth->add_option("--duration", so.scenario.duration, "seconds per dialogue");
  synth->add_option("--dim", so.scenario.dim);
  synth->add_option("--margin", so.scenario.margin);
  synth->add_option("--noise", so.scenario.noise);
  synth->add_option("--ratios", ratios, "train val test")->expected(3);

  std::string data_dir;
  auto* tp = app.add_subcommand("train-perceiver", "fit the speech-act perceiver on the train split");
  auto* ts = app.add_subcommand("train-selector", "fit the anchor selector on the train split");
  auto* td = app.add_subcommand("train-decoder", "fit the seq2seq rationale decoder on the train split");
  for (auto* sc : {tp, ts, td}) sc->add_option("--data", data_dir, "synth output directory")->required();

  auto* run = app.add_subcommand("run", "stream records through the causal pipeline");
  std::string input, models, part = "all";
  run->add_option("--input", input, "stream.jsonl or a directory holding one")->required();
  auto* models_opt = run->add_option("--models", models, "directory with perceiver/selector/decoder checkpoints");
  bool init = false;
  auto* init_flag = run->add_flag("--init", init, "use freshly initialized models");
  models_opt->excludes(init_flag);
  run->add_option("--split", part, "train|val|test|all");

  auto* eval = app.add_subcommand("eval", "score a run against gold labels");
  std::string run_dir;
  eval->add_option("--run", run_dir, "run output directory")->required();
  eval->add_option("--data", data_dir, "directory with stream.jsonl and labels.jsonl")->required();

  auto* stats = app.add_subcommand("stats", "turn-taking event table from VAD");
  stats->add_option("--input", input, "stream.jsonl, a directory holding one, or a ch0,ch1 CSV")->required();

  for (auto* sc : {synth, tp, ts, td, run, eval, stats}) sc->add_option("--out-dir", out_dir)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    EngineConfig cfg = config_path.empty() ? EngineConfig{} : load_engine_config(config_path);
    for (const auto& o : overrides) apply_override(cfg, o);
    validate(cfg);

    if (*synth) {
      so.scenario.seed = synth_seed.value_or(cfg.seed);
      if (!ratios.empty()) so.ratios = {ratios[0], ratios[1], ratios[2]};
      cmd_synth(cfg, so, out_dir);
    } else if (*tp) {
      cmd_train_perceiver(cfg, data_dir, out_dir);
    } else if (*ts) {
      cmd_train_selector(cfg, data_dir, out_dir);
    } else if (*td) {
      cmd_train_decoder(cfg, data_dir, out_dir);
    } else if (*run) {
      if (models.empty() && !init) throw UsageError("run needs --models DIR or --init");
      RunOptions ro;
      ro.input = input;
      if (!models.empty()) ro.models_dir = models;
      ro.split = part;
      cmd_run(cfg, ro, out_dir);
    } else if (*eval) {
      const auto report = cmd_eval(cfg, run_dir, data_dir, out_dir);
      std::cout << "macro_f1 high " << report.at("macro_f1_high").get<double>() << " low "
                << report.at("macro_f1_low").get<double>() << " anchor_f1 "
                << report.at("anchors").at("f1").get<double>() << '\n';
    } else if (*stats) {
      std::cout << events_csv(cmd_stats(cfg, input, out_dir));
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << '\n';
    return kData;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kOk;
}
