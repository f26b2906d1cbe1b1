#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "convgot/config.hpp"
#include "convgot/pipeline.hpp"
#include "convgot/synth.hpp"

// Subcommand bodies shared by the CLI and the python module. Every command writes into an
// output directory and finishes with manifest.json.
namespace convgot {

namespace fs = std::filesystem;

inline constexpr const char* kStreamFile = "stream.jsonl";
inline constexpr const char* kLabelsFile = "labels.jsonl";
inline constexpr const char* kSplitFile = "split.json";
inline constexpr const char* kPerceiverFile = "perceiver.json";
inline constexpr const char* kSelectorFile = "selector.json";
inline constexpr const char* kDecoderFile = "decoder.json";

struct ManifestEntry {
  std::string path;  // relative to the output directory
  std::string sha256;
  std::uintmax_t bytes = 0;
};

// Files in `excluded` are listed by name only (wall-clock content).
nlohmann::json write_manifest(const fs::path& out_dir, const std::string& command, const EngineConfig& cfg,
                              const std::vector<std::string>& files, const std::vector<std::string>& excluded = {});

struct SynthOptions {
  ScenarioConfig scenario;
  std::array<double, 3> ratios{0.6, 0.2, 0.2};
};

struct DatasetSplit {
  std::vector<std::string> train, val, test;
  const std::vector<std::string>& part(const std::string& name) const;
};

DatasetSplit read_split(const fs::path& path);

// stream.jsonl (no gold), labels.jsonl, split.json, scenario.json
void cmd_synth(const EngineConfig& cfg, const SynthOptions& opts, const fs::path& out_dir);

// Records of data_dir/stream.jsonl with labels attached, restricted to a split part ("all" keeps everything).
std::vector<SecondRecord> load_labeled(const fs::path& data_dir, const std::string& part);

void cmd_train_perceiver(const EngineConfig& cfg, const fs::path& data_dir, const fs::path& out_dir);
void cmd_train_selector(const EngineConfig& cfg, const fs::path& data_dir, const fs::path& out_dir);
void cmd_train_decoder(const EngineConfig& cfg, const fs::path& data_dir, const fs::path& out_dir);

// (chain, rationale) pairs from replaying the graph with gold labels and gold anchors.
struct GoldPair {
  LinearizedChain chain;
  std::string rationale;
};
std::vector<GoldPair> gold_pairs(std::span<const SecondRecord> dialogue, const EngineConfig& cfg);

struct RunOptions {
  fs::path input;                     // stream.jsonl, or a directory holding one
  std::optional<fs::path> models_dir;  // unset: freshly initialized models from cfg.seed
  std::string split = "all";          // needs split.json next to the stream otherwise
};

EngineModels load_models(const EngineConfig& cfg, const std::optional<fs::path>& models_dir);

// predictions/selections/rationales.jsonl, latency.jsonl, latency_summary.json, skipped.txt (lenient)
void cmd_run(const EngineConfig& cfg, const RunOptions& opts, const fs::path& out_dir);

struct AnchorScore {
  std::int64_t tp = 0, fp = 0, fn = 0;
  double precision() const;
  double recall() const;
  double f1() const;
};

// report.json: speech-act metrics over the run's ticks plus anchor and rationale agreement.
nlohmann::json cmd_eval(const EngineConfig& cfg, const fs::path& run_dir, const fs::path& data_dir,
                        const fs::path& out_dir);

// events.json / events.csv from a stream's VAD, or from a "ch0,ch1" CSV of 0/1 rows.
EventTable cmd_stats(const EngineConfig& cfg, const fs::path& input, const fs::path& out_dir);

std::vector<std::array<bool, 2>> read_vad_csv(const fs::path& path);

}  // namespace convgot
