#include "convgot/synth.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "convgot/errors.hpp"
#include "convgot/got_graph.hpp"
#include "convgot/random.hpp"
#include "convgot/rationale.hpp"

namespace convgot {

namespace {

double sum_of(const ActDistribution& p) { return std::accumulate(p.begin(), p.end(), 0.0); }

ActDistribution normalized(const ActDistribution& p) {
  ActDistribution out = p;
  const double s = sum_of(p);
  for (auto& v : out) v /= s;
  return out;
}

void check_prior(const ActDistribution& p, const char* name) {
  for (double v : p)
    if (!(v >= 0.0)) throw ConfigError(std::string(name) + " has a negative entry");
  // Default priors are rounded percentages, so allow a little slack before renormalizing.
  if (std::abs(sum_of(p) - 1.0) > 1e-2) throw ConfigError(std::string(name) + " does not sum to 1");
}

const std::vector<std::string>& nouns() {
  static const std::vector<std::string> words{
      "apple",  "river",   "garden", "castle",  "rocket", "violin", "forest",  "harbor",
      "pepper", "candle",  "meadow", "tunnel",  "mirror", "lantern", "saddle", "glacier",
      "orchid", "compass", "marble", "thunder", "pebble", "anchor",  "falcon", "biscuit"};
  return words;
}

std::string topic_name(std::size_t k) {
  const auto& w = nouns();
  return k < w.size() ? w[k] : w[k % w.size()] + std::to_string(k / w.size());
}

// CVCV pseudo-words; none of them collide with the nouns above.
std::string filler_word(std::size_t k) {
  static const std::string c = "bdfgklmnprstvz";
  static const std::string v = "aeiou";
  std::string out;
  out += c[k % c.size()];
  k /= c.size();
  out += v[k % v.size()];
  k /= v.size();
  out += c[k % c.size()];
  k /= c.size();
  out += v[k % v.size()];
  return out;
}
constexpr std::size_t kFillerPool = 14 * 5 * 14 * 5;

std::size_t draw(const ActDistribution& p, Rng& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < kNumActs; ++i) {
    acc += p[i];
    if (u < acc) return i;
  }
  return kNumActs - 1;
}

}  // namespace

void validate(const ScenarioConfig& cfg) {
  if (cfg.dialogues < 1) throw ConfigError("need at least one dialogue");
  if (cfg.duration < 1) throw ConfigError("duration must be positive");
  if (cfg.dim < 8) throw ConfigError("embedding dim must be at least 8");
  if (!(cfg.margin > 0.0)) throw ConfigError("margin must be positive");
  if (!(cfg.noise >= 0.0)) throw ConfigError("noise must be nonnegative");
  check_prior(cfg.prior_high, "prior_high");
  check_prior(cfg.prior_low, "prior_low");
  if (!(cfg.high_stickiness >= 0.0 && cfg.high_stickiness < 1.0)) throw ConfigError("high_stickiness must be in [0,1)");
  if (!(cfg.anchors_mean > 0.0) || !(cfg.anchor_spacing > 0.0)) throw ConfigError("anchor statistics must be positive");
  if (cfg.window < 1) throw ConfigError("window must be positive");
  if (cfg.sentence_min < 1 || cfg.sentence_max < cfg.sentence_min) throw ConfigError("bad sentence length range");
  if (!(cfg.pause_prob >= 0.0 && cfg.pause_prob < 1.0) || !(cfg.gap_prob >= 0.0 && cfg.gap_prob < 1.0))
    throw ConfigError("silence probabilities must be in [0,1)");
  episode_mix(normalized(cfg.prior_low));
}

nlohmann::json to_json(const ScenarioConfig& c) {
  return {{"seed", c.seed},
          {"dialogues", c.dialogues},
          {"duration", c.duration},
          {"dim", c.dim},
          {"margin", c.margin},
          {"noise", c.noise},
          {"prior_high", c.prior_high},
          {"prior_low", c.prior_low},
          {"high_stickiness", c.high_stickiness},
          {"anchors_mean", c.anchors_mean},
          {"anchor_spacing", c.anchor_spacing},
          {"window", c.window},
          {"sentence_min", c.sentence_min},
          {"sentence_max", c.sentence_max},
          {"pause_prob", c.pause_prob},
          {"gap_prob", c.gap_prob},
          {"filler_words", c.filler_words}};
}

ScenarioConfig scenario_config_from_json(const nlohmann::json& j) {
  ScenarioConfig c;
  const nlohmann::json defaults = to_json(c);
  for (const auto& [k, v] : j.items())
    if (!defaults.contains(k)) throw ConfigError("unknown scenario key: " + k);
  try {
    auto get = [&](const char* k, auto& field) {
      if (j.contains(k)) j.at(k).get_to(field);
    };
    get("seed", c.seed);
    get("dialogues", c.dialogues);
    get("duration", c.duration);
    get("dim", c.dim);
    get("margin", c.margin);
    get("noise", c.noise);
    get("prior_high", c.prior_high);
    get("prior_low", c.prior_low);
    get("high_stickiness", c.high_stickiness);
    get("anchors_mean", c.anchors_mean);
    get("anchor_spacing", c.anchor_spacing);
    get("window", c.window);
    get("sentence_min", c.sentence_min);
    get("sentence_max", c.sentence_max);
    get("pause_prob", c.pause_prob);
    get("gap_prob", c.gap_prob);
    get("filler_words", c.filler_words);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad scenario config: ") + e.what());
  }
  validate(c);
  return c;
}

double mean_sentence_length(const ScenarioConfig& cfg) {
  const EpisodeMix m = episode_mix(normalized(cfg.prior_low));
  // Expected pieces when a run of r ticks is chopped into uniform sentence lengths.
  const auto lo = static_cast<std::size_t>(cfg.sentence_min), hi = static_cast<std::size_t>(cfg.sentence_max);
  const std::size_t cap = 400;
  std::vector<double> pieces(cap + 1, 0.0);
  for (std::size_t r = 1; r <= cap; ++r) {
    double acc = 0.0;
    for (std::size_t l = lo; l <= hi; ++l) acc += pieces[r > l ? r - l : 0];
    pieces[r] = 1.0 + acc / static_cast<double>(hi - lo + 1);
  }
  // Each episode has one long run (1 + L ticks, L = 2 + Geom) plus 1-tick runs: one per
  // backchannel, two per interruption.
  const double q = 1.0 / (m.mean_run - 1.0);
  double long_run = 0.0, mass = 0.0;
  for (std::size_t g = 0; 3 + g <= cap; ++g) {
    const double pg = q * std::pow(1.0 - q, static_cast<double>(g));
    long_run += pg * pieces[3 + g];
    mass += pg;
  }
  long_run /= mass;
  const double sentences = long_run + m.p_backchannel + 2.0 * m.p_interruption;
  const double ticks = m.mean_run + m.p_turn + 2.0 * m.p_backchannel + 3.0 * m.p_interruption;
  return ticks / sentences;
}

std::size_t topic_pool_size(const ScenarioConfig& cfg) {
  const double len = mean_sentence_length(cfg);
  const double d = static_cast<double>(cfg.duration);
  const double h = std::min({static_cast<double>(cfg.window), 2.0 * cfg.anchor_spacing, d});
  // Mean over ticks of the sentences that ended inside the horizon.
  const double avg = (h * h / 2.0 + h * (d - h)) / (d * len);
  return std::max<std::size_t>(2, static_cast<std::size_t>(std::llround(avg / cfg.anchors_mean)));
}

EpisodeMix episode_mix(const ActDistribution& prior_low) {
  // Per episode: a run of continuation ticks, then TurnTaking (1 tick), Backchannel (2 ticks),
  // or an interruption (TurnTaking then 2 Interruption ticks).
  const double c = prior_low[index_of(LowAct::Continuation)];
  const double tt = prior_low[index_of(LowAct::TurnTaking)];
  const double in = prior_low[index_of(LowAct::Interruption)];
  const double bc = prior_low[index_of(LowAct::Backchannel)];
  const double k = 1.0 / (tt + bc / 2.0);
  EpisodeMix m;
  m.p_turn = k * (tt - in / 2.0);
  m.p_backchannel = k * bc / 2.0;
  m.p_interruption = k * in / 2.0;
  m.mean_run = k * c;
  if (m.p_turn < 0.0) throw ConfigError("prior_low: Interruption mass exceeds twice the TurnTaking mass");
  // Runs of at least 2 keep successive flips more than 3 ticks apart.
  if (m.mean_run < 2.0) throw ConfigError("prior_low: Continuation mass too small for the episode process");
  return m;
}

std::vector<LowAct> derive_low_labels(std::span<const int> speakers, std::span<const int> owners) {
  if (speakers.size() != owners.size()) throw DataError("speaker and owner traces differ in length");
  std::vector<LowAct> out(speakers.size(), LowAct::Continuation);
  for (std::size_t t = 1; t < speakers.size(); ++t) {
    if (speakers[t] == speakers[t - 1]) continue;
    if (owners[t] == owners[t - 1]) {
      out[t] = LowAct::Backchannel;
      continue;
    }
    int flips = 0;
    for (std::size_t s = t > 2 ? t - 2 : 1; s <= t; ++s) flips += owners[s] != owners[s - 1];
    out[t] = flips >= 2 ? LowAct::Interruption : LowAct::TurnTaking;
  }
  return out;
}

std::vector<double> low_centroid(LowAct act, const ScenarioConfig& cfg) {
  std::vector<double> v(cfg.dim, 0.0);
  v[index_of(act)] = cfg.margin;
  return v;
}

std::vector<double> high_centroid(HighAct act, const ScenarioConfig& cfg) {
  std::vector<double> v(cfg.dim, 0.0);
  v[4 + index_of(act)] = cfg.margin;
  return v;
}

SynthDialogue synth_dialogue(const ScenarioConfig& cfg, std::size_t index) {
  validate(cfg);
  Rng rng(derive_seed(cfg.seed, "synth-dialogue", index));
  const auto n = static_cast<std::size_t>(cfg.duration);
  const EpisodeMix mix = episode_mix(normalized(cfg.prior_low));
  const ActDistribution prior_high = normalized(cfg.prior_high);
  std::geometric_distribution<int> extra(1.0 / (mix.mean_run - 1.0));
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // Speaker, owner and low label per tick.
  std::vector<int> speakers, owners;
  std::vector<LowAct> lows;
  std::vector<bool> overlap;
  auto push = [&](int spk, int own, LowAct low, bool both) {
    speakers.push_back(spk);
    owners.push_back(own);
    lows.push_back(low);
    overlap.push_back(both);
  };
  int owner = static_cast<int>(rng() % 2);
  while (speakers.size() < n) {
    const int run = 2 + extra(rng);
    for (int k = 0; k < run; ++k) push(owner, owner, LowAct::Continuation, false);
    const double u = unit(rng);
    const int other = 1 - owner;
    if (u < mix.p_turn) {
      push(other, other, LowAct::TurnTaking, false);
      owner = other;
    } else if (u < mix.p_turn + mix.p_backchannel) {
      push(other, owner, LowAct::Backchannel, true);
      push(owner, owner, LowAct::Backchannel, false);
    } else {
      push(other, other, LowAct::TurnTaking, true);
      push(owner, owner, LowAct::Interruption, true);
      push(other, other, LowAct::Interruption, true);
      owner = other;
    }
  }
  speakers.resize(n);
  owners.resize(n);
  lows.resize(n);
  overlap.resize(n);
  lows[0] = LowAct::Continuation;

  // Sentences: each speaker run is chopped into pieces of sentence_min..sentence_max ticks.
  std::vector<std::size_t> sentence_of(n), sentence_start;
  std::uniform_int_distribution<std::int64_t> sent_len(cfg.sentence_min, cfg.sentence_max);
  for (std::size_t t = 0; t < n;) {
    std::size_t run_end = t;
    while (run_end < n && speakers[run_end] == speakers[t]) ++run_end;
    while (t < run_end) {
      const std::size_t end = std::min(run_end, t + static_cast<std::size_t>(sent_len(rng)));
      sentence_start.push_back(t);
      for (std::size_t k = t; k < end; ++k) sentence_of[k] = sentence_start.size() - 1;
      t = end;
    }
  }
  const std::size_t n_sent = sentence_start.size();

  std::vector<HighAct> sent_high(n_sent);
  std::vector<std::string> sent_topic(n_sent);
  const std::size_t pool = topic_pool_size(cfg);
  std::map<int, std::string> last_topic;
  for (std::size_t s = 0; s < n_sent; ++s) {
    const bool keep = s > 0 && unit(rng) < cfg.high_stickiness;
    sent_high[s] = keep ? sent_high[s - 1] : static_cast<HighAct>(draw(prior_high, rng));
    const std::size_t t0 = sentence_start[s];
    const int spk = speakers[t0];
    // The owner resuming after a backchannel goes back to its topic.
    const bool resume = lows[t0] == LowAct::Backchannel && owners[t0] == spk && last_topic.contains(spk);
    sent_topic[s] = resume ? last_topic[spk] : topic_name(rng() % pool);
    last_topic[spk] = sent_topic[s];
  }

  SynthDialogue d;
  d.audio_id = "dlg" + std::to_string(100000 + index).substr(1);
  d.owners = owners;
  d.topics.resize(n);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::set<std::size_t> used_fillers;
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t s = sentence_of[t];
    const bool first = sentence_start[s] == t;
    const bool last = t + 1 == n || sentence_of[t + 1] != s;
    if (first) used_fillers.clear();
    const bool turn_change = t + 1 < n && speakers[t + 1] != speakers[t] && owners[t + 1] != owners[t];
    const double p_silent = first ? 0.0 : (last && turn_change ? cfg.gap_prob : cfg.pause_prob);
    const bool silent = unit(rng) < p_silent;

    SecondRecord r;
    r.audio_id = d.audio_id;
    r.t = static_cast<std::int64_t>(t);
    r.speaker = speakers[t];
    r.sentence_end = last;
    if (!silent) {
      r.vad[static_cast<std::size_t>(speakers[t])] = true;
      if (overlap[t]) r.vad = {true, true};
      d.topics[t] = sent_topic[s];
      r.text = sent_topic[s];
      for (std::size_t k = 0; k < cfg.filler_words; ++k) {
        std::size_t w = rng() % kFillerPool;
        while (used_fillers.contains(w)) w = (w + 1) % kFillerPool;
        used_fillers.insert(w);
        r.text += " " + filler_word(w);
      }
    }
    r.emb_acoustic = low_centroid(lows[t], cfg);
    r.emb_semantic = high_centroid(sent_high[s], cfg);
    for (auto& v : r.emb_acoustic) v += cfg.noise * gauss(rng);
    for (auto& v : r.emb_semantic) v += cfg.noise * gauss(rng);
    r.gold = GoldAnnotation{sent_high[s], lows[t], {}, {}};
    d.records.push_back(std::move(r));
  }

  // Replay the graph with gold labels to plant anchors under the graph's own sentence ids,
  // then render the gold rationale from the gold chain.
  std::map<std::int64_t, std::string> topic_by_start;
  for (std::size_t s = 0; s < n_sent; ++s) topic_by_start[static_cast<std::int64_t>(sentence_start[s])] = sent_topic[s];
  const auto horizon = std::min<std::int64_t>(cfg.window, static_cast<std::int64_t>(2.0 * cfg.anchor_spacing));
  GraphConfig gc;
  gc.window = cfg.window;
  GotGraph graph(gc);
  TemplateBackend tpl;
  for (std::size_t t = 0; t < n; ++t) {
    auto& r = d.records[t];
    graph.observe(r, SpeechActPair::from_labels(r.gold->high, r.gold->low));
    const CandidateView view = graph.candidate_view(r.t);
    SelectionResult sel;
    sel.t = r.t;
    if (!d.topics[t].empty()) {
      for (const SentenceNode* c : view.candidates)
        if (c->end > r.t - horizon && topic_by_start.at(c->start) == d.topics[t]) sel.anchors.push_back(c->id);
    }
    r.gold->anchors = sel.anchors;
    r.gold->rationale = tpl.generate(linearize(build_condition(graph, sel)));
  }
  return d;
}

SynthCorpus synth_stream(const ScenarioConfig& cfg) {
  validate(cfg);
  SynthCorpus corpus{cfg, {}};
  corpus.dialogues.reserve(cfg.dialogues);
  for (std::size_t i = 0; i < cfg.dialogues; ++i) corpus.dialogues.push_back(synth_dialogue(cfg, i));
  return corpus;
}

SplitIndices split(std::size_t n, const std::array<double, 3>& ratios, std::uint64_t seed) {
  for (double r : ratios)
    if (!(r >= 0.0)) throw ConfigError("split ratios must be nonnegative");
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, "split"));
  std::shuffle(order.begin(), order.end(), rng);
  const auto cut = [&](double r) { return std::min(n, static_cast<std::size_t>(std::llround(r * static_cast<double>(n)))); };
  const std::size_t n_train = cut(ratios[0]);
  const std::size_t n_val = std::min(n - n_train, cut(ratios[1]));
  SplitIndices out;
  out.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                 order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  out.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
  for (auto* part : {&out.train, &out.val, &out.test}) std::sort(part->begin(), part->end());
  return out;
}

}  // namespace convgot
