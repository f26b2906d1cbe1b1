#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"

#include "convgot/errors.hpp"
#include "convgot/grad_check.hpp"
#include "convgot/selector.hpp"
#include "convgot/text.hpp"

using namespace convgot;

namespace {

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Scalar restatement of the loss, kept independent of the tape.
SelectorLoss oracle_loss(const std::vector<double>& l, const std::vector<double>& y, const std::vector<double>& m,
                         double alpha, double lc, double lr) {
  double wsum = 0, msum = 0, soft = 0, ysum = 0;
  for (std::size_t j = 0; j < l.size(); ++j) {
    if (m[j] == 0) continue;
    wsum += alpha * y[j] * softplus(-l[j]) + (1 - y[j]) * softplus(l[j]);
    msum += 1;
    soft += sig(l[j]);
    ysum += y[j];
  }
  double mx = -1e300;
  for (std::size_t j = 0; j < l.size(); ++j)
    if (m[j] != 0) mx = std::max(mx, l[j]);
  double z = 0;
  for (std::size_t j = 0; j < l.size(); ++j)
    if (m[j] != 0) z += std::exp(l[j] - mx);
  double rank = 0, npos = 0;
  for (std::size_t j = 0; j < l.size(); ++j) {
    if (m[j] != 0 && y[j] > 0.5) {
      rank += -(l[j] - mx - std::log(z));
      npos += 1;
    }
  }
  rank = npos > 0 ? rank / npos : 0.0;
  SelectorLoss out{0, wsum / msum, (soft - ysum) * (soft - ysum), rank};
  out.total = out.wbce + lc * out.count + lr * out.rank;
  return out;
}

SelectorConfig small_config() {
  SelectorConfig cfg;
  cfg.semantic_dim = 3;
  cfg.hidden = 6;
  cfg.ffn_hidden = 5;
  cfg.hash_buckets = 64;
  return cfg;
}

struct Fixture {
  SecondNode query;
  std::vector<SentenceNode> sentences;
  CandidateView view() const {
    CandidateView v{&query, {}};
    for (const auto& s : sentences) v.candidates.push_back(&s);
    return v;
  }
};

Fixture random_fixture(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> g;
  Fixture f;
  f.query.t = 50;
  f.query.speaker = 0;
  f.query.text = "alpha beta";
  f.query.emb_semantic = {g(rng), g(rng), g(rng)};
  f.query.labels = SpeechActPair::from_labels(HighAct::Directives, LowAct::TurnTaking);
  const char* words[] = {"alpha", "gamma", "delta", "beta"};
  for (std::size_t j = 0; j < n; ++j) {
    SentenceNode s;
    s.id = static_cast<std::int64_t>(j);
    s.start = static_cast<std::int64_t>(rng() % 40);
    s.end = s.start + 1 + static_cast<std::int64_t>(rng() % 9);
    s.speaker = static_cast<int>(rng() % 2);
    s.text = std::string(words[rng() % 4]) + " " + words[rng() % 4];
    s.high = static_cast<HighAct>(rng() % 4);
    s.low = static_cast<LowAct>(rng() % 4);
    s.mean_semantic = {g(rng), g(rng), g(rng)};
    f.sentences.push_back(s);
  }
  return f;
}

void randomize(ParamSet& params, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> d(0.0, scale);
  for (auto& [name, p] : params)
    for (auto& v : p.value.data()) v = d(rng);
}

}  // namespace

TEST_CASE("threshold alignment") {
  const std::vector<double> s{0.5};
  CHECK(threshold_align(s, 0.5)[0] == 0.0);
  CHECK(sig(threshold_align(s, 0.5)[0]) == 0.5);
  CHECK_THROWS_AS(threshold_align(s, 0.5, 0.0), ConfigError);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> sc{u(rng), u(rng), u(rng)};
    const double tau = u(rng), temp = 0.1 + std::abs(u(rng));
    const auto l = threshold_align(sc, tau, temp);
    for (std::size_t j = 0; j < 3; ++j) CHECK(l[j] == (sc[j] - tau) / temp);
  }
}

TEST_CASE("selector loss matches the scalar oracle") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-4, 4);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 8;
    std::vector<double> l(n), y(n), m(n);
    for (std::size_t j = 0; j < n; ++j) {
      l[j] = u(rng);
      y[j] = rng() % 3 == 0 ? 1.0 : 0.0;
      m[j] = rng() % 5 == 0 ? 0.0 : 1.0;
    }
    m[rng() % n] = 1.0;
    const double alpha = 0.5 + std::abs(u(rng));
    const auto got = selector_loss(l, y, m, alpha, 0.01, 0.1);
    const auto want = oracle_loss(l, y, m, alpha, 0.01, 0.1);
    CHECK(relative_error(got.wbce, want.wbce, 1e-12) <= 1e-12);
    CHECK(relative_error(got.count, want.count, 1e-12) <= 1e-12);
    CHECK(relative_error(got.rank, want.rank, 1e-12) <= 1e-12);
    CHECK(relative_error(got.total, want.total, 1e-12) <= 1e-12);
  }
}

TEST_CASE("selector loss edge cases") {
  const std::vector<double> y{1, 0, 0, 1}, m{1, 1, 1, 1};
  const std::vector<double> perfect{40, -40, -40, 40};
  const auto p = selector_loss(perfect, y, m, 2.0);
  CHECK(p.wbce < 1e-15);
  CHECK(p.count < 1e-30);

  const std::vector<double> zeros(5, 0.0), one_pos{0, 0, 1, 0, 0}, all(5, 1.0);
  CHECK(selector_loss(zeros, one_pos, all, 1.0).rank == doctest::Approx(std::log(5.0)).epsilon(1e-14));

  const std::vector<double> none(4, 0.0), mixed{1.5, -0.3, 0.2, 2.0};
  CHECK(selector_loss(mixed, none, m, 1.0).rank == 0.0);
  CHECK_THROWS_AS(selector_loss(mixed, y, none, 1.0), DataError);
  CHECK_THROWS_AS(selector_loss(mixed, y, m, 0.0), ConfigError);

  const auto degenerate = selector_loss(mixed, y, m, 1.7, 0.0, 0.0);
  CHECK(degenerate.total == degenerate.wbce);
}

TEST_CASE("count term vanishes exactly at the label count") {
  // sigmoid(0) = 0.5 on two candidates, one positive
  const std::vector<double> l{0.0, 0.0}, y{1, 0}, m{1, 1};
  CHECK(selector_loss(l, y, m, 1.0).count == 0.0);
  const std::vector<double> l2{0.3, 0.0};
  CHECK(selector_loss(l2, y, m, 1.0).count > 0.0);
}

TEST_CASE("select anchors thresholds then sorts by start") {
  const std::vector<double> s{0.9, 0.2, 0.7};
  const std::vector<std::int64_t> starts{1, 2, 3};
  CHECK(select_anchors(s, 0.5, starts) == std::vector<std::size_t>{0, 2});
  CHECK(select_anchors(s, 0.95, starts).empty());

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = rng() % 10;
    std::vector<double> sc(n);
    std::vector<std::int64_t> st(n);
    for (std::size_t j = 0; j < n; ++j) {
      sc[j] = u(rng);
      st[j] = static_cast<std::int64_t>(rng() % 20);
    }
    const double tau = u(rng);
    std::vector<std::pair<std::int64_t, std::size_t>> want;
    for (std::size_t j = 0; j < n; ++j)
      if (sc[j] > tau) want.emplace_back(st[j], j);
    std::sort(want.begin(), want.end());
    std::vector<std::size_t> want_idx;
    for (auto& [a, j] : want) want_idx.push_back(j);
    CHECK(select_anchors(sc, tau, st) == want_idx);
    // thresholding commutes with alignment
    const auto l = threshold_align(sc, tau, 0.3);
    CHECK(select_anchors(l, 0.0, st) == want_idx);
  }
}

TEST_CASE("empty candidate set still yields a threshold") {
  std::mt19937_64 rng(4);
  const auto f = random_fixture(rng, 0);
  const SelectorModel m = init_selector(small_config(), 1);
  const auto r = select(f.view(), m);
  CHECK(r.scores.empty());
  CHECK(r.anchors.empty());
  CHECK(std::isfinite(r.tau));
}

TEST_CASE("scores are permutation equivariant and identical candidates tie") {
  std::mt19937_64 rng(5);
  SelectorModel m = init_selector(small_config(), 2);
  randomize(m.params, rng, 0.5);
  for (int trial = 0; trial < 30; ++trial) {
    Fixture f = random_fixture(rng, 2 + rng() % 6);
    const auto base = score_candidates(featurize(f.view(), m.config), m);
    std::vector<std::size_t> perm(f.sentences.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    Fixture g = f;
    for (std::size_t j = 0; j < perm.size(); ++j) g.sentences[j] = f.sentences[perm[j]];
    const auto permuted = score_candidates(featurize(g.view(), m.config), m);
    CHECK(permuted.tau == doctest::Approx(base.tau).epsilon(1e-12));
    for (std::size_t j = 0; j < perm.size(); ++j) {
      CHECK(permuted.scores[j] == doctest::Approx(base.scores[perm[j]]).epsilon(1e-12));
    }
  }
  Fixture f = random_fixture(rng, 3);
  f.sentences[2] = f.sentences[0];
  f.sentences[2].id = 99;
  const auto r = score_candidates(featurize(f.view(), m.config), m);
  CHECK(r.scores[0] == r.scores[2]);
}

TEST_CASE("relational bias touches only the query row") {
  std::mt19937_64 rng(6);
  SelectorModel m = init_selector(small_config(), 3);
  randomize(m.params, rng, 0.5);
  Fixture f = random_fixture(rng, 4);
  NodeFeatures feats = featurize(f.view(), m.config);
  for (std::size_t c = 0; c < kRelationalFeatures; ++c) CHECK(feats.rel(0, c) == 0.0);
  // with Wo = 0 the attention output is discarded, so candidate rows cannot see the bias
  m.params.at("attn.Wo").value.fill(0.0);
  const auto a = score_candidates(feats, m);
  m.params.at("rel.w").value.fill(3.0);
  const auto b = score_candidates(feats, m);
  CHECK(a.scores == b.scores);
}

TEST_CASE("feature dimension mismatch is a shape error") {
  std::mt19937_64 rng(7);
  Fixture f = random_fixture(rng, 2);
  SelectorConfig cfg = small_config();
  cfg.semantic_dim = 4;
  CHECK_THROWS_AS(featurize(f.view(), cfg), ShapeError);
}

TEST_CASE("selector loss gradients match finite differences") {
  std::mt19937_64 rng(8);
  SelectorModel m = init_selector(small_config(), 4);
  randomize(m.params, rng, 0.4);
  Fixture f = random_fixture(rng, 5);
  SelectorSample s{featurize(f.view(), m.config), {1, 0, 0, 1, 0}};
  const auto report = grad_check(m.params, [&](ParamBinder& b) { return selector_sample_loss(b, m.config, s, 1.5); });
  CHECK(report.max_rel_error <= 1e-3);
}

TEST_CASE("positive weight is negatives over positives") {
  std::vector<SelectorSample> samples(2);
  samples[0].targets = {1, 0, 0};
  samples[1].targets = {0, 0, 1, 0, 0};
  CHECK(positive_weight(samples) == doctest::Approx(6.0 / 2.0));
}

TEST_CASE("hashed bag of words cosine") {
  CHECK(cosine(hashed_bow("a b", 128), hashed_bow("a b", 128)) == doctest::Approx(1.0));
  CHECK(cosine(hashed_bow("", 128), hashed_bow("a", 128)) == 0.0);
  CHECK(tokenize_words("Hello, World's end!") == std::vector<std::string>{"hello", "world's", "end"});
}
