#include <algorithm>
#include <random>
#include <set>

#include "doctest.h"

#include "convgot/errors.hpp"
#include "convgot/got_graph.hpp"

using namespace convgot;

namespace {

SecondRecord rec(std::int64_t t, int speaker, std::string text = "", bool end = false) {
  SecondRecord r;
  r.audio_id = "g";
  r.t = t;
  r.speaker = speaker;
  r.text = std::move(text);
  r.emb_semantic = {static_cast<double>(t), 1.0};
  r.sentence_end = end;
  r.vad[static_cast<std::size_t>(speaker % 2)] = true;
  return r;
}

SpeechActPair labels(HighAct h = HighAct::Constatives) { return SpeechActPair::from_labels(h, LowAct::Continuation); }

}  // namespace

TEST_CASE("fresh graph and monotone ticks") {
  GotGraph g;
  g.append_second(rec(0, 0), labels());
  CHECK(g.seconds().size() == 1);
  CHECK(g.sentences().empty());
  CHECK_THROWS_AS(g.append_second(rec(0, 0), labels()), DataError);
  CHECK_THROWS_AS(g.append_second(rec(2, 0), labels()), DataError);
}

TEST_CASE("commit folds seconds into an interval") {
  GotGraph g;
  for (int t = 0; t < 3; ++t) g.append_second(rec(t, 1), labels());
  for (int t = 3; t < 8; ++t) g.append_second(rec(t, 0, "w" + std::to_string(t)), labels());
  const auto r = g.commit_sentence(0, 8);
  REQUIRE(r.status == CommitStatus::Committed);
  CHECK(r.sentence->start == 3);
  CHECK(r.sentence->end == 8);
  CHECK(r.sentence->folded == 5);
  CHECK(r.sentence->text == "w3 w4 w5 w6 w7");
  CHECK(r.sentence->mean_semantic[0] == doctest::Approx(5.0));
  CHECK(g.seconds().size() == 3);
  CHECK(g.commit_sentence(0, 8).status == CommitStatus::NoPending);
}

TEST_CASE("sentence speaker by majority with earliest-tick tie break") {
  GotGraph g;
  SecondRecord a = rec(0, 0), b = rec(1, 0), c = rec(2, 1);
  for (auto* r : {&a, &b, &c}) r->channel = 5;
  g.append_second(a, labels(HighAct::Directives));
  g.append_second(b, labels(HighAct::Commissives));
  g.append_second(c, labels(HighAct::Commissives));
  auto s = g.commit_sentence(5, 3).sentence;
  CHECK(s->speaker == 0);
  CHECK(s->high == HighAct::Commissives);

  GotGraph tie;
  SecondRecord x = rec(0, 1), y = rec(1, 0);
  x.channel = y.channel = 9;
  tie.append_second(x, labels(HighAct::Acknowledgments));
  tie.append_second(y, labels(HighAct::Directives));
  s = tie.commit_sentence(9, 2).sentence;
  CHECK(s->speaker == 1);
  CHECK(s->high == HighAct::Acknowledgments);
}

TEST_CASE("eviction boundary") {
  GraphConfig cfg;
  cfg.window = 90;
  GotGraph g(cfg);
  for (int t = 0; t < 5; ++t) g.append_second(rec(t, 0), labels());
  g.commit_sentence(0, 5);
  for (int t = 5; t < 10; ++t) g.append_second(rec(t, 1), labels());
  for (int t = 10; t < 95; ++t) g.append_second(rec(t, 0), labels());
  g.commit_sentence(0, 95);
  g.append_second(rec(95, 1), labels());
  g.append_second(rec(96, 1), labels());
  g.evict_expired();
  // [0,5) ends at 5 <= 96 - 90, [10,95) still intersects the window
  CHECK(g.sentence(0) == nullptr);
  REQUIRE(g.sentences().size() == 1);
  CHECK(g.sentences()[0].start == 10);
  // seconds 5 (end 6 <= 6) is gone, 6..9 remain
  CHECK(g.second_at(5) == nullptr);
  CHECK(g.second_at(6) != nullptr);
}

TEST_CASE("candidate view ordering and strictness") {
  GotGraph g;
  g.append_second(rec(0, 0), labels());
  CHECK(g.candidate_view(0).candidates.empty());
  CHECK_THROWS_AS(g.candidate_view(3), DataError);

  GotGraph h;
  std::int64_t t = 0;
  for (int sent = 0; sent < 3; ++sent) {
    for (int k = 0; k < 2; ++k, ++t) h.observe(rec(t, sent % 2, "", k == 1), labels());
  }
  h.observe(rec(t, 0), labels());
  const auto view = h.candidate_view(t);
  REQUIRE(view.candidates.size() == 3);
  CHECK(view.candidates[0]->start == 0);
  CHECK(view.candidates[1]->start == 2);
  CHECK(view.candidates[2]->start == 4);
  CHECK(view.query->t == t);
}

TEST_CASE("observe commits the flagged sentence on the next tick") {
  GotGraph g;
  g.observe(rec(0, 0, "a"), labels());
  g.observe(rec(1, 0, "b", true), labels());
  // the flagged second is still the query at its own tick
  CHECK(g.candidate_view(1).query != nullptr);
  CHECK(g.sentences().empty());
  const auto committed = g.observe(rec(2, 1, "c"), labels());
  REQUIRE(committed.size() == 1);
  CHECK(committed[0].start == 0);
  CHECK(committed[0].end == 2);
  CHECK(g.candidate_view(2).candidates.size() == 1);
}

TEST_CASE("silence fallback commits after unvoiced ticks") {
  GraphConfig cfg;
  cfg.silence_fallback = true;
  GotGraph g(cfg);
  g.observe(rec(0, 0, "a"), labels());
  SecondRecord s1 = rec(1, 0), s2 = rec(2, 0);
  s1.vad = {false, false};
  s2.vad = {false, false};
  g.observe(s1, labels());
  g.observe(s2, labels());
  const auto committed = g.observe(rec(3, 1), labels());
  REQUIRE(committed.size() == 1);
  CHECK(committed[0].end == 3);

  GotGraph off;
  off.observe(rec(0, 0), labels());
  off.observe(s1, labels());
  off.observe(s2, labels());
  CHECK(off.observe(rec(3, 1), labels()).empty());
}

TEST_CASE("fuzzed schedules agree with interval oracles") {
  std::mt19937_64 rng(123);
  for (int trial = 0; trial < 60; ++trial) {
    GraphConfig cfg;
    cfg.window = 5 + static_cast<std::int64_t>(rng() % 20);
    GotGraph g(cfg);
    // oracle state: every sentence ever committed and the channel of each tick
    std::vector<SentenceNode> all_sentences;
    std::vector<int> channel_of;
    std::set<std::int64_t> folded;
    const int n = 40 + static_cast<int>(rng() % 60);
    for (int t = 0; t < n; ++t) {
      const int speaker = static_cast<int>(rng() % 2);
      const bool end = rng() % 4 == 0;
      for (auto& s : g.observe(rec(t, speaker, "", end), labels())) {
        for (std::int64_t k = s.start; k < s.end; ++k) {
          if (channel_of[static_cast<std::size_t>(k)] == s.channel) {
            CHECK(folded.insert(k).second);  // never folded twice
          }
        }
        all_sentences.push_back(s);
      }
      channel_of.push_back(speaker);
      const std::int64_t horizon = t - cfg.window;

      // survivors == interval filter over everything ever created
      std::set<std::int64_t> want_sent, got_sent;
      for (const auto& s : all_sentences)
        if (s.end > horizon) want_sent.insert(s.id);
      for (const auto& s : g.sentences()) got_sent.insert(s.id);
      CHECK(want_sent == got_sent);

      // live seconds are exactly the unfolded ticks still inside the window
      std::set<std::int64_t> want_sec, got_sec;
      for (std::int64_t k = 0; k <= t; ++k)
        if (!folded.contains(k) && k + 1 > horizon) want_sec.insert(k);
      for (const auto& s : g.seconds()) got_sec.insert(s.t);
      CHECK(want_sec == got_sec);
      CHECK(static_cast<std::int64_t>(got_sec.size()) <= cfg.window + 1);

      // candidates == set comprehension, ordered by start
      const auto view = g.candidate_view(t);
      std::vector<std::int64_t> want_c, got_c;
      std::vector<const SentenceNode*> sorted;
      for (const auto& s : all_sentences)
        if (s.end <= t && s.end > horizon) sorted.push_back(&s);
      std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->start != b->start ? a->start < b->start : a->id < b->id; });
      for (auto* s : sorted) want_c.push_back(s->id);
      for (auto* s : view.candidates) got_c.push_back(s->id);
      CHECK(want_c == got_c);
      for (auto* s : view.candidates) CHECK(s->end <= t);
    }
  }
}

TEST_CASE("deterministic replay gives identical snapshots") {
  auto run = [] {
    GotGraph g;
    for (int t = 0; t < 30; ++t) g.observe(rec(t, (t / 4) % 2, "x" + std::to_string(t), t % 4 == 3), labels());
    return g.snapshot().dump();
  };
  CHECK(run() == run());
}

TEST_CASE("sentence ids follow sentence start order") {
  GotGraph g;
  // channel 0 opens at 0, channel 1 opens at 1 and closes first
  g.observe(rec(0, 0), labels());
  g.observe(rec(1, 1, "", true), labels());
  g.observe(rec(2, 0, "", true), labels());
  g.observe(rec(3, 1), labels());
  REQUIRE(g.sentences().size() == 2);
  CHECK(g.sentences()[0].id == 1);
  CHECK(g.sentences()[0].start == 1);
  CHECK(g.sentences()[1].id == 0);
  CHECK(g.sentences()[1].start == 0);
}
