#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "convgot/speech_act.hpp"
#include "convgot/stream.hpp"

namespace convgot {

struct SecondNode {
  std::int64_t t = 0;
  int speaker = 0;
  int channel = 0;
  std::string text;
  std::int64_t audio_ref = 0;  // block index; audio itself is not copied
  SpeechActPair labels;
  std::int64_t sentence_id = 0;  // the pending sentence this second belongs to
  std::vector<double> emb_semantic;
  std::array<bool, 2> vad{false, false};
};

struct SentenceNode {
  std::int64_t id = 0;
  std::int64_t start = 0;  // tau_s, inclusive
  std::int64_t end = 0;    // tau_e, exclusive
  int speaker = 0;
  int channel = 0;
  std::string text;
  HighAct high = HighAct::Constatives;  // majority of folded per-second labels
  LowAct low = LowAct::Continuation;    // label of the first folded second
  std::vector<double> mean_semantic;
  std::size_t folded = 0;
};

struct GraphConfig {
  std::int64_t window = 90;        // W, seconds
  bool silence_fallback = false;   // commit a buffer after `silence_ticks` unvoiced ticks on its channel
  std::int64_t silence_ticks = 2;
};

enum class CommitStatus { Committed, NoPending };

struct CommitResult {
  CommitStatus status = CommitStatus::NoPending;
  std::optional<SentenceNode> sentence;
};

struct CandidateView {
  const SecondNode* query = nullptr;
  std::vector<const SentenceNode*> candidates;  // ordered by start tick, then id
};

class GotGraph {
 public:
  explicit GotGraph(GraphConfig cfg = {});

  // Appends the node for record.t, which must be exactly one past the current tick (0 on a fresh graph).
  std::size_t append_second(const SecondRecord& record, const SpeechActPair& labels);

  // Folds the channel's pending seconds with tick < end_tick into one sentence node.
  CommitResult commit_sentence(int channel, std::int64_t end_tick);

  // Removes nodes whose whole time range lies before current_tick - W.
  std::size_t evict_expired();

  // Query node at t and committed sentences with end <= t and end > t - W.
  CandidateView candidate_view(std::int64_t t) const;

  // Streaming driver for one tick: commits buffers closed at the previous tick (sentence_end
  // flag or silence fallback) with end_tick = record.t, then appends and evicts.
  std::vector<SentenceNode> observe(const SecondRecord& record, const SpeechActPair& labels);

  std::optional<std::int64_t> current_tick() const { return current_; }
  const std::vector<SecondNode>& seconds() const { return seconds_; }
  const std::vector<SentenceNode>& sentences() const { return sentences_; }
  const GraphConfig& config() const { return cfg_; }
  // Channels whose pending seconds hold at least one node.
  std::set<int> pending_channels() const;
  const SecondNode* second_at(std::int64_t t) const;
  const SentenceNode* sentence(std::int64_t id) const;

  nlohmann::json snapshot() const;

 private:
  GraphConfig cfg_;
  std::optional<std::int64_t> current_;
  std::vector<SecondNode> seconds_;      // unfolded, ordered by tick
  std::vector<SentenceNode> sentences_;  // ordered by commit
  std::map<int, std::int64_t> open_ids_;  // channel -> id of the open sentence
  std::int64_t next_id_ = 0;
  std::set<int> flagged_;                 // channels whose sentence ended at the last tick
  std::map<int, std::int64_t> silent_run_;  // channel -> consecutive unvoiced ticks
};

}  // namespace convgot
