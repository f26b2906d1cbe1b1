#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "convgot/speech_act.hpp"

namespace convgot {

inline constexpr int kCanonicalSampleRate = 16000;

struct AudioSignal {
  std::vector<std::vector<double>> channels;  // 1 or 2 channels of samples in [-1, 1]
  int sample_rate_hz = kCanonicalSampleRate;

  std::size_t channel_count() const { return channels.size(); }
  std::size_t length() const { return channels.empty() ? 0 : channels.front().size(); }
};

// Throws ShapeError / ConfigError when the signal violates its invariants.
void validate(const AudioSignal& signal);

// mono[i] = w0 * ch0[i] + w1 * ch1[i]
AudioSignal downmix_to_mono(const AudioSignal& signal, std::pair<double, double> weights = {0.5, 0.5});

struct BlockPartition {
  std::vector<std::vector<double>> blocks;  // each exactly block_size samples
  std::size_t block_size = 0;
  std::size_t pad_len = 0;  // zero samples appended to the final block

  std::size_t count() const { return blocks.size(); }
};

// Splits a 16 kHz mono signal into N = ceil(T / f_s) one-second blocks; the final block is zero-padded.
BlockPartition partition_blocks(const AudioSignal& mono);

// Concatenates the blocks and trims the padding.
std::vector<double> reassemble(const BlockPartition& partition);

struct GoldAnnotation {
  HighAct high = HighAct::Constatives;
  LowAct low = LowAct::Continuation;
  std::vector<std::int64_t> anchors;  // sentence ids
  std::string rationale;
};

// One tick of observable input for one dialogue.
struct SecondRecord {
  std::string audio_id;
  std::int64_t t = 0;
  int speaker = 0;
  std::optional<int> channel;  // sentence buffer key; defaults to speaker
  std::string text;
  std::vector<double> emb_acoustic;
  std::vector<double> emb_semantic;
  std::array<bool, 2> vad{false, false};
  bool sentence_end = false;
  bool padded = false;
  std::optional<GoldAnnotation> gold;

  int buffer_channel() const { return channel.value_or(speaker); }
  bool voiced() const { return vad[0] || vad[1]; }
};

// Records with tick in [t - W, t). Input must be sorted by tick.
std::vector<SecondRecord> causal_window(std::span<const SecondRecord> records, std::int64_t t, std::int64_t window);

}  // namespace convgot
