#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "convgot/speech_act.hpp"

namespace convgot {

struct ClassCounts {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

// Per-class one-vs-rest counts over kNumActs classes. Mergeable by addition.
struct ConfusionCounts {
  std::array<ClassCounts, kNumActs> classes{};
  std::int64_t total = 0;

  void add(std::size_t pred, std::size_t gold);
  ConfusionCounts& operator+=(const ConfusionCounts& other);
};

ConfusionCounts confusion(std::span<const std::size_t> preds, std::span<const std::size_t> golds);

struct ClassScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::int64_t support = 0;  // gold count
};

// 2PR/(P+R), 0 when P+R = 0 (and P or R is 0 when its denominator is 0).
ClassScore score_class(const ClassCounts& c);
std::array<ClassScore, kNumActs> f1_per_class(const ConfusionCounts& counts);
// Throws DataError on empty or mismatched input.
std::array<ClassScore, kNumActs> f1_per_class(std::span<const std::size_t> preds, std::span<const std::size_t> golds);

// Mean F1 over classes that occur in gold or predictions.
double macro_f1(const ConfusionCounts& counts);

// Mann-Whitney AUC with half credit for ties; nullopt without both a positive and a negative.
std::optional<double> auc_binary(std::span<const double> scores, std::span<const bool> positive);

// One-vs-rest AUC per class from per-instance class probabilities.
std::array<std::optional<double>, kNumActs> auc_ovr(std::span<const ActDistribution> scores,
                                                     std::span<const std::size_t> golds);

struct ConditionalMatrix {
  std::array<ActDistribution, kNumActs> p{};      // p[h][y] = p(y | h)
  std::array<std::int64_t, kNumActs> count{};     // N_h
  bool empty_row(std::size_t h) const { return count[h] == 0; }
};

ConditionalMatrix conditional_low_given_high(std::span<const std::pair<HighAct, LowAct>> gold);

// Mean of a T x R binary agreement matrix; throws DataError when empty, ragged or non-binary.
double hma(const std::vector<std::vector<int>>& agreements);

// ---- turn-taking events

enum class EventType { IPU, Pause, Gap, Overlap };
inline constexpr std::size_t kNumEventTypes = 4;
std::string_view to_string(EventType e);

struct EventConfig {
  double tick_seconds = 1.0;
  // Silent runs shorter than this neither split IPUs nor count as pause/gap.
  std::int64_t min_silence_ticks = 1;
};

struct EventRow {
  EventType type = EventType::IPU;
  std::int64_t count = 0;
  std::int64_t ticks = 0;  // IPU ticks exclude overlap ticks
  double per_minute = 0.0;
  double cumulative_pct = 0.0;
};

struct EventTable {
  std::int64_t total_ticks = 0;
  double minutes = 0.0;
  std::array<EventRow, kNumEventTypes> rows{};
  std::int64_t edge_silence_ticks = 0;  // leading and trailing
  std::int64_t short_silence_ticks = 0;

  const EventRow& row(EventType e) const { return rows[static_cast<std::size_t>(e)]; }
};

// Counts and durations per event type from two per-tick VAD channels.
// Pause: the channels voiced right before and right after the silence intersect; gap otherwise.
EventTable event_statistics(std::span<const bool> ch0, std::span<const bool> ch1, const EventConfig& cfg = {});
EventTable event_statistics(std::span<const std::array<bool, 2>> vad, const EventConfig& cfg = {});

// Sums counts and ticks across dialogues and recomputes the rates.
EventTable merge_events(std::span<const EventTable> tables, const EventConfig& cfg = {});

// "event,count_per_min,cumulative_pct" header, one row per type.
std::string events_csv(const EventTable& table);

// ---- latency

struct LatencyStats {
  std::size_t n = 0;
  double mean = 0.0;
  double std = 0.0;  // population (divides by n)
  double p50 = 0.0;
  double p95 = 0.0;  // nearest rank
  double max = 0.0;
  std::vector<std::int64_t> histogram;  // counts per bucket of latency_bucket_edges_ms()
};

const std::vector<double>& latency_bucket_edges_ms();
// All zeros for an empty sample.
LatencyStats latency_profile(std::span<const double> samples_ms);

// ---- report

struct MetricReport {
  std::array<ClassScore, kNumActs> high{};
  std::array<ClassScore, kNumActs> low{};
  double macro_f1_high = 0.0;
  double macro_f1_low = 0.0;
  std::array<std::optional<double>, kNumActs> auc_high{};
  std::array<std::optional<double>, kNumActs> auc_low{};
  ConditionalMatrix conditional;
  std::optional<double> hma_high;
  std::optional<double> hma_low;
  std::optional<EventTable> events;
  std::map<std::string, LatencyStats> latency;
  std::int64_t ticks = 0;
};

// Partial evaluation state; merge() concatenates, so dialogues can be folded independently.
class EvalAccumulator {
 public:
  void add(const SpeechActPair& pred, HighAct gold_high, LowAct gold_low);
  void merge(const EvalAccumulator& other);
  std::int64_t ticks() const { return confusion_high_.total; }
  MetricReport report() const;

 private:
  ConfusionCounts confusion_high_, confusion_low_;
  std::vector<ActDistribution> p_high_, p_low_;
  std::vector<std::size_t> gold_high_, gold_low_;
  std::vector<std::pair<HighAct, LowAct>> gold_pairs_;
};

nlohmann::json to_json(const EventTable& table);
nlohmann::json to_json(const LatencyStats& stats);
nlohmann::json to_json(const MetricReport& report);

}  // namespace convgot
