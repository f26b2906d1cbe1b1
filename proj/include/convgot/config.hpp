#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "convgot/got_graph.hpp"
#include "convgot/metrics.hpp"
#include "convgot/optimizer.hpp"
#include "convgot/perceiver.hpp"
#include "convgot/rationale.hpp"
#include "convgot/selector.hpp"

namespace convgot {

enum class BackendKind { Template, Trainable, Remote };
std::string_view to_string(BackendKind kind);

struct TrainSchedule {
  OptimizerConfig optimizer;
  std::size_t epochs = 15;
  std::size_t batch_size = 8;
};

struct EngineConfig {
  std::int64_t window = 90;
  double tick_seconds = 1.0;
  std::uint64_t seed = 42;
  bool strict = true;
  std::size_t recent = 3;  // committed sentences in the decoding condition
  BackendKind backend = BackendKind::Template;
  bool silence_fallback = false;
  std::int64_t silence_ticks = 2;
  std::int64_t min_silence_ticks = 1;  // event statistics

  PerceiverConfig perceiver;
  SelectorConfig selector;
  Seq2SeqConfig decoder;
  TrainSchedule perceiver_train;
  TrainSchedule selector_train;
  TrainSchedule decoder_train;
  std::size_t decoder_pairs = 200;  // (chain, rationale) pairs drawn from the train split
  RemoteConfig remote;

  EngineConfig();
  GraphConfig graph() const;
  EventConfig events() const;
};

void validate(const EngineConfig& cfg);

// INI text with [section] headers and key = value lines; unknown sections or keys are errors.
EngineConfig parse_engine_config(std::istream& in);
EngineConfig load_engine_config(const std::filesystem::path& path);

// "section.key=value"
void apply_override(EngineConfig& cfg, std::string_view assignment);

// Every key in a fixed order with round-trip value formatting; parses back to the same config.
std::string canonical_ini(const EngineConfig& cfg);
std::string config_hash(const EngineConfig& cfg);

std::vector<std::string> config_keys();

}  // namespace convgot
