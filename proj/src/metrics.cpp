#include "convgot/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <sstream>

#include "convgot/errors.hpp"

namespace convgot {

void ConfusionCounts::add(std::size_t pred, std::size_t gold) {
  if (pred >= kNumActs || gold >= kNumActs) throw DataError("class index out of range");
  for (std::size_t c = 0; c < kNumActs; ++c) {
    auto& k = classes[c];
    const bool p = pred == c, g = gold == c;
    if (p && g) ++k.tp;
    else if (p) ++k.fp;
    else if (g) ++k.fn;
    else ++k.tn;
  }
  ++total;
}

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& other) {
  for (std::size_t c = 0; c < kNumActs; ++c) {
    classes[c].tp += other.classes[c].tp;
    classes[c].fp += other.classes[c].fp;
    classes[c].fn += other.classes[c].fn;
    classes[c].tn += other.classes[c].tn;
  }
  total += other.total;
  return *this;
}

ConfusionCounts confusion(std::span<const std::size_t> preds, std::span<const std::size_t> golds) {
  if (preds.size() != golds.size()) throw DataError("prediction and gold lengths differ");
  if (preds.empty()) throw DataError("no instances to score");
  ConfusionCounts out;
  for (std::size_t i = 0; i < preds.size(); ++i) out.add(preds[i], golds[i]);
  return out;
}

ClassScore score_class(const ClassCounts& c) {
  ClassScore s;
  s.support = c.tp + c.fn;
  if (c.tp + c.fp > 0) s.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  if (c.tp + c.fn > 0) s.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  if (s.precision + s.recall > 0.0) s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

std::array<ClassScore, kNumActs> f1_per_class(const ConfusionCounts& counts) {
  std::array<ClassScore, kNumActs> out;
  for (std::size_t c = 0; c < kNumActs; ++c) out[c] = score_class(counts.classes[c]);
  return out;
}

std::array<ClassScore, kNumActs> f1_per_class(std::span<const std::size_t> preds, std::span<const std::size_t> golds) {
  return f1_per_class(confusion(preds, golds));
}

double macro_f1(const ConfusionCounts& counts) {
  double sum = 0.0;
  int n = 0;
  for (const auto& c : counts.classes) {
    if (c.tp + c.fn + c.fp == 0) continue;
    sum += score_class(c).f1;
    ++n;
  }
  return n ? sum / n : 0.0;
}

std::optional<double> auc_binary(std::span<const double> scores, std::span<const bool> positive) {
  if (scores.size() != positive.size()) throw DataError("score and label lengths differ");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Sum of midranks of the positives.
  double rank_sum = 0.0;
  std::int64_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (positive[order[k]]) {
        rank_sum += midrank;
        ++n_pos;
      }
    i = j;
  }
  const std::int64_t n_neg = static_cast<std::int64_t>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

std::array<std::optional<double>, kNumActs> auc_ovr(std::span<const ActDistribution> scores,
                                                     std::span<const std::size_t> golds) {
  if (scores.size() != golds.size()) throw DataError("score and gold lengths differ");
  std::array<std::optional<double>, kNumActs> out;
  std::vector<double> s(scores.size());
  // std::vector<bool> is not contiguous, so no span over it.
  std::unique_ptr<bool[]> pos(new bool[scores.size()]);
  for (std::size_t c = 0; c < kNumActs; ++c) {
    for (std::size_t i = 0; i < scores.size(); ++i) {
      s[i] = scores[i][c];
      pos[i] = golds[i] == c;
    }
    out[c] = auc_binary(s, std::span<const bool>(pos.get(), scores.size()));
  }
  return out;
}

ConditionalMatrix conditional_low_given_high(std::span<const std::pair<HighAct, LowAct>> gold) {
  ConditionalMatrix m;
  std::array<std::array<std::int64_t, kNumActs>, kNumActs> n{};
  for (const auto& [h, l] : gold) {
    ++n[index_of(h)][index_of(l)];
    ++m.count[index_of(h)];
  }
  for (std::size_t h = 0; h < kNumActs; ++h) {
    if (m.count[h] == 0) continue;
    for (std::size_t y = 0; y < kNumActs; ++y)
      m.p[h][y] = static_cast<double>(n[h][y]) / static_cast<double>(m.count[h]);
  }
  return m;
}

double hma(const std::vector<std::vector<int>>& agreements) {
  if (agreements.empty() || agreements.front().empty()) throw DataError("empty agreement matrix");
  const std::size_t r = agreements.front().size();
  std::int64_t ones = 0;
  for (const auto& row : agreements) {
    if (row.size() != r) throw DataError("ragged agreement matrix");
    for (int a : row) {
      if (a != 0 && a != 1) throw DataError("agreement entries must be 0 or 1");
      ones += a;
    }
  }
  return static_cast<double>(ones) / static_cast<double>(agreements.size() * r);
}

// ---- events

std::string_view to_string(EventType e) {
  switch (e) {
    case EventType::IPU: return "IPU";
    case EventType::Pause: return "Pause";
    case EventType::Gap: return "Gap";
    case EventType::Overlap: return "Overlap";
  }
  return "?";
}

namespace {

void finish_rates(EventTable& table, const EventConfig& cfg) {
  table.minutes = static_cast<double>(table.total_ticks) * cfg.tick_seconds / 60.0;
  for (std::size_t e = 0; e < kNumEventTypes; ++e) {
    auto& row = table.rows[e];
    row.type = static_cast<EventType>(e);
    row.per_minute = table.minutes > 0.0 ? static_cast<double>(row.count) / table.minutes : 0.0;
    row.cumulative_pct =
        table.total_ticks > 0 ? 100.0 * static_cast<double>(row.ticks) / static_cast<double>(table.total_ticks) : 0.0;
  }
}

// Voiced runs on one channel; interior silences shorter than min_silence are bridged.
std::int64_t count_ipus(std::span<const bool> ch, std::int64_t min_silence) {
  std::int64_t runs = 0;
  std::int64_t silence = 0;
  bool seen = false;
  for (bool v : ch) {
    if (!v) {
      ++silence;
      continue;
    }
    if (!seen || silence >= min_silence) ++runs;
    seen = true;
    silence = 0;
  }
  return runs;
}

}  // namespace

EventTable event_statistics(std::span<const bool> ch0, std::span<const bool> ch1, const EventConfig& cfg) {
  if (ch0.size() != ch1.size()) throw DataError("VAD traces differ in length");
  if (ch0.empty()) throw DataError("empty VAD trace");
  if (!(cfg.tick_seconds > 0.0) || cfg.min_silence_ticks < 1) throw ConfigError("bad event config");

  const auto n = static_cast<std::int64_t>(ch0.size());
  EventTable table;
  table.total_ticks = n;
  auto& ipu = table.rows[static_cast<std::size_t>(EventType::IPU)];
  auto& pause = table.rows[static_cast<std::size_t>(EventType::Pause)];
  auto& gap = table.rows[static_cast<std::size_t>(EventType::Gap)];
  auto& overlap = table.rows[static_cast<std::size_t>(EventType::Overlap)];

  auto any = [&](std::int64_t t) { return ch0[t] || ch1[t]; };
  std::int64_t first = -1, last = -1;
  for (std::int64_t t = 0; t < n; ++t)
    if (any(t)) {
      if (first < 0) first = t;
      last = t;
    }
  if (first < 0) {
    table.edge_silence_ticks = n;
    finish_rates(table, cfg);
    return table;
  }
  table.edge_silence_ticks = first + (n - 1 - last);

  ipu.count = count_ipus(ch0, cfg.min_silence_ticks) + count_ipus(ch1, cfg.min_silence_ticks);
  bool in_overlap = false;
  for (std::int64_t t = first; t <= last;) {
    if (ch0[t] && ch1[t]) {
      ++overlap.ticks;
      if (!in_overlap) ++overlap.count;
      in_overlap = true;
      ++t;
      continue;
    }
    in_overlap = false;
    if (any(t)) {
      ++ipu.ticks;
      ++t;
      continue;
    }
    std::int64_t end = t;
    while (!any(end)) ++end;  // last is voiced, so this stops
    const std::int64_t len = end - t;
    if (len < cfg.min_silence_ticks) {
      table.short_silence_ticks += len;
    } else {
      const bool same = (ch0[t - 1] && ch0[end]) || (ch1[t - 1] && ch1[end]);
      auto& row = same ? pause : gap;
      ++row.count;
      row.ticks += len;
    }
    t = end;
  }
  finish_rates(table, cfg);
  return table;
}

EventTable event_statistics(std::span<const std::array<bool, 2>> vad, const EventConfig& cfg) {
  std::unique_ptr<bool[]> a(new bool[vad.size()]), b(new bool[vad.size()]);
  for (std::size_t i = 0; i < vad.size(); ++i) {
    a[i] = vad[i][0];
    b[i] = vad[i][1];
  }
  return event_statistics(std::span<const bool>(a.get(), vad.size()), std::span<const bool>(b.get(), vad.size()),
                          cfg);
}

EventTable merge_events(std::span<const EventTable> tables, const EventConfig& cfg) {
  EventTable out;
  for (const auto& t : tables) {
    out.total_ticks += t.total_ticks;
    out.edge_silence_ticks += t.edge_silence_ticks;
    out.short_silence_ticks += t.short_silence_ticks;
    for (std::size_t e = 0; e < kNumEventTypes; ++e) {
      out.rows[e].count += t.rows[e].count;
      out.rows[e].ticks += t.rows[e].ticks;
    }
  }
  finish_rates(out, cfg);
  return out;
}

std::string events_csv(const EventTable& table) {
  std::ostringstream os;
  os.precision(6);
  os << "event,count_per_min,cumulative_pct\n";
  for (const auto& row : table.rows) os << to_string(row.type) << ',' << row.per_minute << ',' << row.cumulative_pct << '\n';
  return os.str();
}

// ---- latency

const std::vector<double>& latency_bucket_edges_ms() {
  static const std::vector<double> edges{0.1, 0.5, 1, 2, 5, 10, 20, 50, 100, 200, 500, 1000};
  return edges;
}

LatencyStats latency_profile(std::span<const double> samples_ms) {
  LatencyStats s;
  const auto& edges = latency_bucket_edges_ms();
  s.histogram.assign(edges.size() + 1, 0);
  s.n = samples_ms.size();
  if (s.n == 0) return s;
  std::vector<double> sorted(samples_ms.begin(), samples_ms.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(s.n);
  s.mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / n;
  double var = 0.0;
  for (double x : sorted) var += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(var / n);
  auto rank = [&](double p) {
    const auto k = static_cast<std::size_t>(std::ceil(p * n));
    return sorted[std::clamp<std::size_t>(k, 1, s.n) - 1];
  };
  s.p50 = rank(0.5);
  s.p95 = rank(0.95);
  s.max = sorted.back();
  for (double x : sorted) {
    const auto it = std::upper_bound(edges.begin(), edges.end(), x);
    ++s.histogram[static_cast<std::size_t>(it - edges.begin())];
  }
  return s;
}

// ---- accumulator

void EvalAccumulator::add(const SpeechActPair& pred, HighAct gold_high, LowAct gold_low) {
  confusion_high_.add(index_of(pred.high), index_of(gold_high));
  confusion_low_.add(index_of(pred.low), index_of(gold_low));
  p_high_.push_back(pred.p_high);
  p_low_.push_back(pred.p_low);
  gold_high_.push_back(index_of(gold_high));
  gold_low_.push_back(index_of(gold_low));
  gold_pairs_.emplace_back(gold_high, gold_low);
}

void EvalAccumulator::merge(const EvalAccumulator& other) {
  confusion_high_ += other.confusion_high_;
  confusion_low_ += other.confusion_low_;
  p_high_.insert(p_high_.end(), other.p_high_.begin(), other.p_high_.end());
  p_low_.insert(p_low_.end(), other.p_low_.begin(), other.p_low_.end());
  gold_high_.insert(gold_high_.end(), other.gold_high_.begin(), other.gold_high_.end());
  gold_low_.insert(gold_low_.end(), other.gold_low_.begin(), other.gold_low_.end());
  gold_pairs_.insert(gold_pairs_.end(), other.gold_pairs_.begin(), other.gold_pairs_.end());
}

MetricReport EvalAccumulator::report() const {
  if (ticks() == 0) throw DataError("no instances to score");
  MetricReport r;
  r.ticks = ticks();
  r.high = f1_per_class(confusion_high_);
  r.low = f1_per_class(confusion_low_);
  r.macro_f1_high = macro_f1(confusion_high_);
  r.macro_f1_low = macro_f1(confusion_low_);
  r.auc_high = auc_ovr(p_high_, gold_high_);
  r.auc_low = auc_ovr(p_low_, gold_low_);
  r.conditional = conditional_low_given_high(gold_pairs_);
  return r;
}

// ---- json

nlohmann::json to_json(const EventTable& table) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : table.rows)
    rows.push_back({{"event", to_string(row.type)},
                    {"count", row.count},
                    {"ticks", row.ticks},
                    {"count_per_min", row.per_minute},
                    {"cumulative_pct", row.cumulative_pct}});
  return {{"total_ticks", table.total_ticks},
          {"minutes", table.minutes},
          {"edge_silence_ticks", table.edge_silence_ticks},
          {"short_silence_ticks", table.short_silence_ticks},
          {"events", rows}};
}

nlohmann::json to_json(const LatencyStats& s) {
  return {{"n", s.n},         {"mean_ms", s.mean}, {"std_ms", s.std},
          {"std_kind", "population"}, {"p50_ms", s.p50}, {"p95_ms", s.p95},
          {"max_ms", s.max},  {"bucket_edges_ms", latency_bucket_edges_ms()}, {"histogram", s.histogram}};
}

namespace {

template <typename Act>
nlohmann::json class_block(const std::array<ClassScore, kNumActs>& f1, const std::array<std::optional<double>, kNumActs>& auc) {
  nlohmann::json out = nlohmann::json::object();
  for (std::size_t c = 0; c < kNumActs; ++c) {
    const auto name = std::string(to_string(static_cast<Act>(c)));
    out[name] = {{"precision", f1[c].precision},
                 {"recall", f1[c].recall},
                 {"f1", f1[c].f1},
                 {"support", f1[c].support},
                 {"auc", auc[c] ? nlohmann::json(*auc[c]) : nlohmann::json(nullptr)}};
  }
  return out;
}

}  // namespace

nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json cond = nlohmann::json::object();
  for (std::size_t h = 0; h < kNumActs; ++h) {
    nlohmann::json row = nlohmann::json::object();
    for (std::size_t y = 0; y < kNumActs; ++y) row[std::string(to_string(static_cast<LowAct>(y)))] = r.conditional.p[h][y];
    cond[std::string(to_string(static_cast<HighAct>(h)))] = {
        {"n", r.conditional.count[h]}, {"empty", r.conditional.empty_row(h)}, {"p", row}};
  }
  nlohmann::json j{{"ticks", r.ticks},
                   {"f1_unit", "tick"},
                   {"high", class_block<HighAct>(r.high, r.auc_high)},
                   {"low", class_block<LowAct>(r.low, r.auc_low)},
                   {"macro_f1_high", r.macro_f1_high},
                   {"macro_f1_low", r.macro_f1_low},
                   {"conditional_low_given_high", cond}};
  if (r.hma_high) j["hma_high"] = *r.hma_high;
  if (r.hma_low) j["hma_low"] = *r.hma_low;
  if (r.events) j["events"] = to_json(*r.events);
  if (!r.latency.empty()) {
    nlohmann::json lat = nlohmann::json::object();
    for (const auto& [stage, stats] : r.latency) lat[stage] = to_json(stats);
    j["latency"] = lat;
  }
  return j;
}

}  // namespace convgot
