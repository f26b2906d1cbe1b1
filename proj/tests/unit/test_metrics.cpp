#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"

#include "convgot/errors.hpp"
#include "convgot/metrics.hpp"

using namespace convgot;

namespace {

// Brute force over all positive/negative pairs.
double auc_pairs(const std::vector<double>& s, const std::vector<bool>& pos) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!pos[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (pos[j]) continue;
      den += 1.0;
      if (s[i] > s[j]) num += 1.0;
      else if (s[i] == s[j]) num += 0.5;
    }
  }
  return num / den;
}

std::optional<double> auc_of(const std::vector<double>& s, const std::vector<bool>& pos) {
  std::unique_ptr<bool[]> flags(new bool[pos.size()]);
  for (std::size_t i = 0; i < pos.size(); ++i) flags[i] = pos[i];
  return auc_binary(s, std::span<const bool>(flags.get(), pos.size()));
}

std::vector<bool> bits(const char* s) {
  std::vector<bool> out;
  for (; *s; ++s) out.push_back(*s == '1');
  return out;
}

EventTable events_of(const std::vector<bool>& a, const std::vector<bool>& b) {
  std::vector<std::array<bool, 2>> vad(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) vad[i] = {a[i], b[i]};
  return event_statistics(vad);
}

}  // namespace

TEST_CASE("f1 closed form") {
  ClassCounts c{2, 1, 1, 0};
  const auto s = score_class(c);
  CHECK(s.precision == doctest::Approx(2.0 / 3.0));
  CHECK(s.recall == doctest::Approx(2.0 / 3.0));
  CHECK(s.f1 == doctest::Approx(2.0 / 3.0));
  CHECK(score_class(ClassCounts{0, 0, 0, 5}).f1 == 0.0);
  CHECK(score_class(ClassCounts{0, 3, 2, 5}).f1 == 0.0);
}

TEST_CASE("f1 with all predictions correct") {
  const std::vector<std::size_t> y{0, 1, 1, 3, 0};
  const auto counts = confusion(y, y);
  const auto f1 = f1_per_class(counts);
  CHECK(f1[0].f1 == 1.0);
  CHECK(f1[1].f1 == 1.0);
  CHECK(f1[3].f1 == 1.0);
  CHECK(f1[2].f1 == 0.0);  // absent
  CHECK(macro_f1(counts) == 1.0);
  CHECK_THROWS_AS(confusion(std::vector<std::size_t>{}, std::vector<std::size_t>{}), DataError);
  CHECK_THROWS_AS(confusion(std::vector<std::size_t>{0}, std::vector<std::size_t>{0, 1}), DataError);
}

TEST_CASE("f1 matches a counting oracle") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng() % 60;
    std::vector<std::size_t> p(n), g(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = rng() % kNumActs;
      g[i] = rng() % kNumActs;
    }
    const auto counts = confusion(p, g);
    const auto f1 = f1_per_class(counts);
    double macro = 0.0;
    int present = 0;
    for (std::size_t c = 0; c < kNumActs; ++c) {
      int tp = 0, np = 0, ng = 0;
      for (std::size_t i = 0; i < n; ++i) {
        tp += p[i] == c && g[i] == c;
        np += p[i] == c;
        ng += g[i] == c;
      }
      const double f = (np + ng) ? 2.0 * tp / (np + ng) : 0.0;  // 2TP/(2TP+FP+FN)
      CHECK(f1[c].f1 == doctest::Approx(f).epsilon(1e-12));
      CHECK(f1[c].precision >= 0.0);
      CHECK(f1[c].precision <= 1.0);
      CHECK(f1[c].recall <= 1.0);
      CHECK(counts.classes[c].tp + counts.classes[c].fp + counts.classes[c].fn + counts.classes[c].tn ==
            static_cast<std::int64_t>(n));
      if (np + ng) {
        macro += f;
        ++present;
      }
    }
    CHECK(macro_f1(counts) == doctest::Approx(macro / present).epsilon(1e-12));
  }
}

TEST_CASE("auc edge cases") {
  CHECK(*auc_of({0.1, 0.2, 0.8, 0.9}, {false, false, true, true}) == 1.0);
  CHECK(*auc_of({0.1, 0.2, 0.8, 0.9}, {true, true, false, false}) == 0.0);
  CHECK(*auc_of({0.5, 0.5, 0.5, 0.5, 0.5}, {true, false, true, false, false}) == 0.5);
  CHECK_FALSE(auc_of({0.1, 0.2}, {true, true}).has_value());
  CHECK_FALSE(auc_of({}, {}).has_value());
}

TEST_CASE("sort-based auc equals the pair oracle") {
  std::mt19937_64 rng(5);
  int checked = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng() % 199;
    std::vector<double> s(n);
    std::vector<bool> pos(n);
    const bool coarse = trial % 2 == 0;  // coarse scores force many ties
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = coarse ? static_cast<double>(rng() % 5) / 4.0 : std::uniform_real_distribution<double>(0, 1)(rng);
      pos[i] = rng() % 3 == 0;
    }
    const auto got = auc_of(s, pos);
    bool has_pos = false, has_neg = false;
    for (bool p : pos) (p ? has_pos : has_neg) = true;
    REQUIRE(got.has_value() == (has_pos && has_neg));
    if (!got) continue;
    CHECK(std::abs(*got - auc_pairs(s, pos)) <= 1e-12);
    ++checked;
  }
  CHECK(checked > 900);
}

TEST_CASE("auc one-vs-rest reads the class column") {
  std::vector<ActDistribution> p{{0.9, 0.1, 0, 0}, {0.2, 0.8, 0, 0}, {0.6, 0.4, 0, 0}};
  std::vector<std::size_t> g{0, 1, 0};
  const auto auc = auc_ovr(p, g);
  CHECK(*auc[0] == 1.0);
  CHECK(*auc[1] == 1.0);
  CHECK_FALSE(auc[2].has_value());
  CHECK_FALSE(auc[3].has_value());
}

TEST_CASE("conditional matrix small count") {
  using enum LowAct;
  std::vector<std::pair<HighAct, LowAct>> g{{HighAct::Acknowledgments, Backchannel},
                                            {HighAct::Acknowledgments, Backchannel},
                                            {HighAct::Acknowledgments, TurnTaking},
                                            {HighAct::Acknowledgments, Continuation}};
  const auto m = conditional_low_given_high(g);
  const auto& row = m.p[index_of(HighAct::Acknowledgments)];
  CHECK(row[index_of(Continuation)] == 0.25);
  CHECK(row[index_of(TurnTaking)] == 0.25);
  CHECK(row[index_of(Interruption)] == 0.0);
  CHECK(row[index_of(Backchannel)] == 0.5);
  CHECK(m.empty_row(index_of(HighAct::Constatives)));
}

TEST_CASE("conditional matrix at fixed Constatives frequencies") {
  std::vector<std::pair<HighAct, LowAct>> g;
  const int counts[] = {5375, 2280, 1320, 1025};
  for (std::size_t y = 0; y < kNumActs; ++y)
    for (int k = 0; k < counts[y]; ++k) g.emplace_back(HighAct::Constatives, static_cast<LowAct>(y));
  REQUIRE(g.size() == 10000);
  std::shuffle(g.begin(), g.end(), std::mt19937_64(1));
  const auto m = conditional_low_given_high(g);
  const auto& row = m.p[index_of(HighAct::Constatives)];
  CHECK(std::abs(row[0] - 0.5375) <= 5e-4);
  CHECK(std::abs(row[1] - 0.2280) <= 5e-4);
  CHECK(std::abs(row[2] - 0.1320) <= 5e-4);
  CHECK(std::abs(row[3] - 0.1025) <= 5e-4);
}

TEST_CASE("conditional matrix matches a counting oracle and rows sit on the simplex") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::pair<HighAct, LowAct>> g(rng() % 300);
    for (auto& p : g) p = {static_cast<HighAct>(rng() % 3), static_cast<LowAct>(rng() % 4)};
    const auto m = conditional_low_given_high(g);
    for (std::size_t h = 0; h < kNumActs; ++h) {
      std::int64_t nh = 0;
      for (const auto& p : g) nh += index_of(p.first) == h;
      CHECK(m.count[h] == nh);
      if (nh == 0) continue;
      double sum = 0.0;
      for (std::size_t y = 0; y < kNumActs; ++y) {
        std::int64_t k = 0;
        for (const auto& p : g) k += index_of(p.first) == h && index_of(p.second) == y;
        CHECK(m.p[h][y] == static_cast<double>(k) / static_cast<double>(nh));
        sum += m.p[h][y];
      }
      CHECK(std::abs(sum - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("hma") {
  CHECK(hma({{1, 1}, {1, 1}}) == 1.0);
  CHECK(std::abs(hma({{1, 1, 0}, {1, 0, 1}}) - 4.0 / 6.0) <= 1e-12);
  CHECK_THROWS_AS(hma({}), DataError);
  CHECK_THROWS_AS(hma({{1, 0}, {1}}), DataError);
  CHECK_THROWS_AS(hma({{2}}), DataError);
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::vector<int>> a(1 + rng() % 20, std::vector<int>(1 + rng() % 6));
    double sum = 0.0;
    for (auto& row : a)
      for (auto& v : row) sum += v = static_cast<int>(rng() % 2);
    const double h = hma(a);
    CHECK(h == sum / static_cast<double>(a.size() * a[0].size()));
    CHECK(h >= 0.0);
    CHECK(h <= 1.0);
  }
}

TEST_CASE("events on a hand-built trace") {
  // tick:          0         1         2
  //                012345678901234567890123456789
  const auto a = bits("000111110011100111100000000000");
  const auto b = bits("011100000000000000000011110000");
  // B[1,4) overlaps A[3,8) at tick 3; pauses [8,10) and [13,15); gap [19,22) from A to B.
  const auto t = events_of(a, b);
  CHECK(t.row(EventType::IPU).count == 5);
  CHECK(t.row(EventType::Pause).count == 2);
  CHECK(t.row(EventType::Gap).count == 1);
  CHECK(t.row(EventType::Overlap).count == 1);
  CHECK(t.row(EventType::IPU).ticks == 17);
  CHECK(t.row(EventType::Pause).ticks == 4);
  CHECK(t.row(EventType::Gap).ticks == 3);
  CHECK(t.row(EventType::Overlap).ticks == 1);
  CHECK(t.edge_silence_ticks == 5);
  CHECK(t.row(EventType::IPU).per_minute == doctest::Approx(10.0));
  CHECK(t.row(EventType::Pause).per_minute == doctest::Approx(4.0));
  CHECK(t.row(EventType::Gap).cumulative_pct == doctest::Approx(10.0));

  // Same events stretched over two minutes.
  auto a2 = a, b2 = b;
  a2.resize(120, false);
  b2.resize(120, false);
  const auto t2 = events_of(a2, b2);
  CHECK(t2.minutes == doctest::Approx(2.0));
  CHECK(t2.row(EventType::IPU).per_minute == doctest::Approx(2.5));
  CHECK(t2.row(EventType::Pause).per_minute == doctest::Approx(1.0));
  CHECK(t2.row(EventType::Gap).per_minute == doctest::Approx(0.5));
  CHECK(t2.row(EventType::Overlap).per_minute == doctest::Approx(0.5));
  CHECK(t2.row(EventType::Overlap).count == t.row(EventType::Overlap).count);

  const auto csv = events_csv(t);
  CHECK(csv.rfind("event,count_per_min,cumulative_pct\nIPU,10,", 0) == 0);
}

TEST_CASE("events on silence and bad input") {
  const std::vector<bool> z(60, false);
  const auto t = events_of(z, z);
  for (const auto& row : t.rows) {
    CHECK(row.count == 0);
    CHECK(row.cumulative_pct == 0.0);
  }
  CHECK(t.edge_silence_ticks == 60);
  CHECK_THROWS_AS(events_of({}, {}), DataError);
}

TEST_CASE("event classification partitions the trace") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng() % 80;
    std::vector<bool> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = rng() % 3 == 0;
      b[i] = rng() % 4 == 0;
    }
    EventConfig cfg;
    cfg.min_silence_ticks = 1 + static_cast<std::int64_t>(rng() % 3);
    std::vector<std::array<bool, 2>> vad(n);
    for (std::size_t i = 0; i < n; ++i) vad[i] = {a[i], b[i]};
    const auto t = event_statistics(vad, cfg);
    std::int64_t sum = t.edge_silence_ticks + t.short_silence_ticks;
    double pct = 0.0;
    for (const auto& row : t.rows) {
      sum += row.ticks;
      pct += row.cumulative_pct;
      CHECK(row.cumulative_pct >= 0.0);
    }
    CHECK(sum == static_cast<std::int64_t>(n));
    CHECK(pct <= 100.0 + 1e-9);

    std::int64_t overlap_ticks = 0, single = 0;
    for (std::size_t i = 0; i < n; ++i) {
      overlap_ticks += a[i] && b[i];
      single += a[i] != b[i];
    }
    CHECK(t.row(EventType::Overlap).ticks == overlap_ticks);
    CHECK(t.row(EventType::IPU).ticks == single);
    if (cfg.min_silence_ticks == 1) {
      CHECK(t.short_silence_ticks == 0);
      // Every maximal per-channel voiced run is one IPU.
      std::int64_t runs = 0;
      for (std::size_t i = 0; i < n; ++i) runs += (a[i] && (i == 0 || !a[i - 1])) + (b[i] && (i == 0 || !b[i - 1]));
      CHECK(t.row(EventType::IPU).count == runs);
    }
  }
}

TEST_CASE("merged event tables add counts") {
  const auto a = bits("0110011");
  const auto b = bits("0000000");
  const auto t = events_of(a, b);
  const std::vector<EventTable> parts{t, t};
  const auto m = merge_events(parts);
  CHECK(m.total_ticks == 14);
  CHECK(m.row(EventType::IPU).count == 4);
  CHECK(m.row(EventType::Pause).count == 2);
  CHECK(m.row(EventType::IPU).per_minute == doctest::Approx(t.row(EventType::IPU).per_minute));
}

TEST_CASE("latency profile") {
  const std::vector<double> c(20, 10.0);
  const auto s = latency_profile(c);
  CHECK(s.mean == 10.0);
  CHECK(s.std == 0.0);
  CHECK(s.p95 == 10.0);
  const std::vector<double> x{3.0, 1.0, 2.0};
  const auto t = latency_profile(x);
  CHECK(t.mean == 2.0);
  CHECK(t.std == doctest::Approx(std::sqrt(2.0 / 3.0)).epsilon(1e-12));
  CHECK(t.std == doctest::Approx(0.8165).epsilon(1e-4));
  CHECK(t.p50 == 2.0);
  CHECK(t.max == 3.0);
  std::int64_t total = 0;
  for (auto h : t.histogram) total += h;
  CHECK(total == 3);
  CHECK(latency_profile(std::vector<double>{}).n == 0);
}

TEST_CASE("accumulator merge equals one pass") {
  std::mt19937_64 rng(13);
  EvalAccumulator whole, left, right;
  for (int i = 0; i < 200; ++i) {
    ActDistribution ph{}, pl{};
    for (auto& v : ph) v = std::uniform_real_distribution<double>(0, 1)(rng);
    for (auto& v : pl) v = std::uniform_real_distribution<double>(0, 1)(rng);
    double sh = 0, sl = 0;
    for (auto v : ph) sh += v;
    for (auto v : pl) sl += v;
    for (auto& v : ph) v /= sh;
    for (auto& v : pl) v /= sl;
    const auto pred = SpeechActPair::from_distributions(ph, pl);
    const auto gh = static_cast<HighAct>(rng() % 4);
    const auto gl = static_cast<LowAct>(rng() % 4);
    whole.add(pred, gh, gl);
    (i < 77 ? left : right).add(pred, gh, gl);
  }
  left.merge(right);
  CHECK(to_json(left.report()).dump() == to_json(whole.report()).dump());
  CHECK_THROWS_AS(EvalAccumulator{}.report(), DataError);
}
