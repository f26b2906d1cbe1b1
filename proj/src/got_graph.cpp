#include "convgot/got_graph.hpp"

#include <algorithm>
#include <map>

#include "convgot/errors.hpp"

namespace convgot {
namespace {

// Most frequent value; ties go to the value seen first.
template <typename T, typename Key>
T majority(const std::vector<const SecondNode*>& nodes, Key key) {
  std::map<T, std::size_t> counts;
  for (const auto* n : nodes) ++counts[key(*n)];
  T best = key(*nodes.front());
  std::size_t best_count = 0;
  for (const auto* n : nodes) {
    const T v = key(*n);
    if (counts[v] > best_count) {
      best = v;
      best_count = counts[v];
    }
  }
  return best;
}

}  // namespace

GotGraph::GotGraph(GraphConfig cfg) : cfg_(cfg) {
  if (cfg_.window < 1) throw ConfigError("graph window must be at least one second");
  if (cfg_.silence_ticks < 1) throw ConfigError("silence fallback needs at least one tick");
}

std::size_t GotGraph::append_second(const SecondRecord& record, const SpeechActPair& labels) {
  const std::int64_t expected = current_ ? *current_ + 1 : 0;
  if (record.t != expected) {
    throw DataError("out-of-order tick " + std::to_string(record.t) + " (expected " + std::to_string(expected) + ")");
  }
  const int channel = record.buffer_channel();
  auto [it, opened] = open_ids_.try_emplace(channel, next_id_);
  if (opened) ++next_id_;

  SecondNode node;
  node.t = record.t;
  node.speaker = record.speaker;
  node.channel = channel;
  node.text = record.text;
  node.audio_ref = record.t;
  node.labels = labels;
  node.sentence_id = it->second;
  node.emb_semantic = record.emb_semantic;
  node.vad = record.vad;
  seconds_.push_back(std::move(node));
  current_ = record.t;
  return seconds_.size() - 1;
}

CommitResult GotGraph::commit_sentence(int channel, std::int64_t end_tick) {
  std::vector<const SecondNode*> pending;
  for (const auto& s : seconds_) {
    if (s.channel == channel && s.t < end_tick) pending.push_back(&s);
  }
  if (pending.empty()) return {};

  SentenceNode sent;
  sent.id = pending.front()->sentence_id;
  sent.start = pending.front()->t;
  sent.end = end_tick;
  sent.channel = channel;
  sent.speaker = majority<int>(pending, [](const SecondNode& n) { return n.speaker; });
  sent.high = majority<HighAct>(pending, [](const SecondNode& n) { return n.labels.high; });
  sent.low = pending.front()->labels.low;
  sent.folded = pending.size();
  for (const auto* s : pending) {
    if (s->text.empty()) continue;
    if (!sent.text.empty()) sent.text += ' ';
    sent.text += s->text;
  }
  const std::size_t dim = pending.front()->emb_semantic.size();
  sent.mean_semantic.assign(dim, 0.0);
  for (const auto* s : pending) {
    if (s->emb_semantic.size() != dim) throw ShapeError("semantic embedding width changed inside a sentence");
    for (std::size_t i = 0; i < dim; ++i) sent.mean_semantic[i] += s->emb_semantic[i];
  }
  for (auto& v : sent.mean_semantic) v /= static_cast<double>(pending.size());

  std::erase_if(seconds_, [&](const SecondNode& s) { return s.channel == channel && s.t < end_tick; });
  // seconds at or after end_tick on this channel start a fresh sentence
  open_ids_.erase(channel);
  bool reopened = false;
  for (auto& s : seconds_) {
    if (s.channel != channel) continue;
    if (!reopened) {
      open_ids_[channel] = next_id_++;
      reopened = true;
    }
    s.sentence_id = open_ids_[channel];
  }
  sentences_.push_back(sent);
  return {CommitStatus::Committed, std::move(sent)};
}

std::size_t GotGraph::evict_expired() {
  if (!current_) return 0;
  const std::int64_t horizon = *current_ - cfg_.window;
  const std::size_t before = seconds_.size() + sentences_.size();
  std::erase_if(seconds_, [&](const SecondNode& s) { return s.t + 1 <= horizon; });
  std::erase_if(sentences_, [&](const SentenceNode& s) { return s.end <= horizon; });
  // an open sentence whose seconds all expired is closed without a node
  for (auto it = open_ids_.begin(); it != open_ids_.end();) {
    const bool live = std::any_of(seconds_.begin(), seconds_.end(), [&](const SecondNode& s) { return s.channel == it->first; });
    it = live ? std::next(it) : open_ids_.erase(it);
  }
  return before - seconds_.size() - sentences_.size();
}

CandidateView GotGraph::candidate_view(std::int64_t t) const {
  CandidateView view;
  view.query = second_at(t);
  if (!view.query) throw DataError("no second node at tick " + std::to_string(t));
  for (const auto& s : sentences_) {
    if (s.end <= t && s.end > t - cfg_.window) view.candidates.push_back(&s);
  }
  std::sort(view.candidates.begin(), view.candidates.end(), [](const SentenceNode* a, const SentenceNode* b) {
    return a->start != b->start ? a->start < b->start : a->id < b->id;
  });
  return view;
}

std::vector<SentenceNode> GotGraph::observe(const SecondRecord& record, const SpeechActPair& labels) {
  const std::int64_t expected = current_ ? *current_ + 1 : 0;
  if (record.t != expected) {
    throw DataError("out-of-order tick " + std::to_string(record.t) + " (expected " + std::to_string(expected) + ")");
  }
  std::vector<SentenceNode> committed;
  for (int channel : flagged_) {
    auto r = commit_sentence(channel, record.t);
    if (r.sentence) committed.push_back(std::move(*r.sentence));
  }
  flagged_.clear();

  append_second(record, labels);
  if (record.sentence_end) flagged_.insert(record.buffer_channel());

  if (cfg_.silence_fallback) {
    for (int channel : pending_channels()) {
      const bool voiced = channel >= 0 && channel < 2 && record.vad[static_cast<std::size_t>(channel)];
      auto& run = silent_run_[channel];
      run = voiced ? 0 : run + 1;
      if (run >= cfg_.silence_ticks) {
        flagged_.insert(channel);
        run = 0;
      }
    }
  }
  evict_expired();
  return committed;
}

std::set<int> GotGraph::pending_channels() const {
  std::set<int> out;
  for (const auto& s : seconds_) out.insert(s.channel);
  return out;
}

const SecondNode* GotGraph::second_at(std::int64_t t) const {
  auto it = std::lower_bound(seconds_.begin(), seconds_.end(), t, [](const SecondNode& s, std::int64_t v) { return s.t < v; });
  return it != seconds_.end() && it->t == t ? &*it : nullptr;
}

const SentenceNode* GotGraph::sentence(std::int64_t id) const {
  for (const auto& s : sentences_) {
    if (s.id == id) return &s;
  }
  return nullptr;
}

nlohmann::json GotGraph::snapshot() const {
  nlohmann::json secs = nlohmann::json::array();
  for (const auto& s : seconds_) {
    secs.push_back({{"t", s.t},
                    {"speaker", s.speaker},
                    {"channel", s.channel},
                    {"text", s.text},
                    {"high", to_string(s.labels.high)},
                    {"low", to_string(s.labels.low)},
                    {"sentence_id", s.sentence_id}});
  }
  nlohmann::json sents = nlohmann::json::array();
  for (const auto& s : sentences_) {
    sents.push_back({{"id", s.id},
                     {"start", s.start},
                     {"end", s.end},
                     {"speaker", s.speaker},
                     {"channel", s.channel},
                     {"text", s.text},
                     {"high", to_string(s.high)},
                     {"low", to_string(s.low)}});
  }
  return {{"t", current_ ? nlohmann::json(*current_) : nlohmann::json(nullptr)}, {"seconds", secs}, {"sentences", sents}};
}

}  // namespace convgot
