#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "convgot/speech_act.hpp"
#include "convgot/stream.hpp"

namespace convgot {

struct ScenarioConfig {
  std::uint64_t seed = 42;
  std::size_t dialogues = 200;
  std::int64_t duration = 60;  // seconds per dialogue
  std::size_t dim = 16;        // both embeddings; axes 0..3 carry the low class, 4..7 the high class
  double margin = 2.0;         // centroid offset along the class axis
  double noise = 0.5;          // per-coordinate gaussian std
  ActDistribution prior_high{0.5418, 0.1893, 0.1237, 0.1443};
  ActDistribution prior_low{0.6477, 0.1903, 0.0907, 0.0713};
  double high_stickiness = 0.5;  // chance a sentence keeps the previous sentence's high label
  double anchors_mean = 3.92;
  double anchor_spacing = 60.55;  // anchors end at most 2 * spacing seconds back (and inside the window)
  std::int64_t window = 90;
  std::int64_t sentence_min = 2;
  std::int64_t sentence_max = 5;
  double pause_prob = 0.05;  // silent tick inside a sentence
  double gap_prob = 0.3;     // silent last tick before a turn change
  std::size_t filler_words = 2;  // per voiced second, after the topic word
};

void validate(const ScenarioConfig& cfg);
nlohmann::json to_json(const ScenarioConfig& cfg);
ScenarioConfig scenario_config_from_json(const nlohmann::json& j);

// Expected ticks per sentence under the episode process and sentence chopping.
double mean_sentence_length(const ScenarioConfig& cfg);

// Topic pool size chosen so that a tick sees about anchors_mean same-topic candidates.
std::size_t topic_pool_size(const ScenarioConfig& cfg);

// Episode probabilities (TurnTaking, Backchannel, Interruption) and mean continuation run length
// that reproduce prior_low in expectation. Throws ConfigError when the prior cannot be realized.
struct EpisodeMix {
  double p_turn = 0.0;
  double p_backchannel = 0.0;
  double p_interruption = 0.0;
  double mean_run = 0.0;
};
EpisodeMix episode_mix(const ActDistribution& prior_low);

struct SynthDialogue {
  std::string audio_id;
  std::vector<SecondRecord> records;  // gold attached
  std::vector<int> owners;            // turn owner per tick
  std::vector<std::string> topics;    // per tick; empty on silent ticks
};

struct SynthCorpus {
  ScenarioConfig config;
  std::vector<SynthDialogue> dialogues;
};

SynthDialogue synth_dialogue(const ScenarioConfig& cfg, std::size_t index);
SynthCorpus synth_stream(const ScenarioConfig& cfg);

// Low labels from speaker and ownership traces: Continuation when the speaker stays; Backchannel when
// the speaker changes but the owner does not; Interruption when the owner flipped at least twice in
// the last 3 ticks; TurnTaking otherwise. Tick 0 is Continuation.
std::vector<LowAct> derive_low_labels(std::span<const int> speakers, std::span<const int> owners);

std::vector<double> low_centroid(LowAct act, const ScenarioConfig& cfg);
std::vector<double> high_centroid(HighAct act, const ScenarioConfig& cfg);

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};
// Dialogue-level shuffle then cut; ratios must be nonnegative and sum to 1.
SplitIndices split(std::size_t n, const std::array<double, 3>& ratios, std::uint64_t seed);

}  // namespace convgot
