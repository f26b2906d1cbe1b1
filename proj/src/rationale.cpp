#include "convgot/rationale.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "httplib.h"

#include "convgot/checkpoint.hpp"
#include "convgot/errors.hpp"
#include "convgot/random.hpp"

namespace convgot {
namespace {

constexpr std::array<std::string_view, 4> kTags{"[ANCHOR]", "[SENT]", "[SEC]", "[QUERY]"};

std::optional<SegmentTag> parse_tag(std::string_view s) {
  for (std::size_t i = 0; i < kTags.size(); ++i) {
    if (kTags[i] == s) return static_cast<SegmentTag>(i);
  }
  return std::nullopt;
}

// Collapses whitespace and defuses tokens that would read as segment tags.
std::string clean_text(std::string_view text) {
  std::string out;
  for (auto tok : tokenize_whitespace(text)) {
    if (parse_tag(tok)) {
      std::transform(tok.begin(), tok.end(), tok.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    }
    if (!out.empty()) out += ' ';
    out += tok;
  }
  return out;
}

ChainSegment from_sentence(const SentenceNode& s, SegmentTag tag) {
  return {tag, s.speaker, s.start, s.end, s.high, s.low, clean_text(s.text)};
}

ChainSegment from_second(const SecondNode& s, SegmentTag tag) {
  return {tag, s.speaker, s.t, s.t + 1, s.labels.high, s.labels.low, clean_text(s.text)};
}

bool starts_with(std::string_view s, std::string_view prefix) { return s.substr(0, prefix.size()) == prefix; }

std::int64_t parse_int(std::string_view s, std::string_view what) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(std::string(s), &used);
    if (used != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw DataError("bad " + std::string(what) + " '" + std::string(s) + "' in chain");
  }
}

std::string_view low_phrase(LowAct a) {
  switch (a) {
    case LowAct::Continuation: return "continues the current turn";
    case LowAct::TurnTaking: return "takes the turn";
    case LowAct::Interruption: return "interrupts the partner";
    case LowAct::Backchannel: return "gives a backchannel";
  }
  return "";
}

std::string_view high_phrase(HighAct a) {
  switch (a) {
    case HighAct::Constatives: return "stating information";
    case HighAct::Directives: return "directing the listener";
    case HighAct::Commissives: return "committing to an action";
    case HighAct::Acknowledgments: return "acknowledging the partner";
  }
  return "";
}

}  // namespace

// ---- condition and chain

DecodingCondition build_condition(const GotGraph& graph, const SelectionResult& selection, std::size_t recent_count) {
  const auto now = graph.current_tick();
  if (!now || *now != selection.t) {
    throw DataError("selection for tick " + std::to_string(selection.t) + " does not match graph tick " +
                    (now ? std::to_string(*now) : std::string("<empty>")));
  }
  const CandidateView view = graph.candidate_view(selection.t);
  DecodingCondition cond;
  cond.t = selection.t;
  cond.query = *view.query;

  std::set<std::int64_t> anchor_ids;
  for (std::int64_t id : selection.anchors) {
    auto it = std::find_if(view.candidates.begin(), view.candidates.end(), [&](const SentenceNode* s) { return s->id == id; });
    if (it == view.candidates.end()) throw DataError("anchor " + std::to_string(id) + " is not a candidate at this tick");
    if (anchor_ids.insert(id).second) cond.anchors.push_back(**it);
  }
  std::sort(cond.anchors.begin(), cond.anchors.end(),
            [](const SentenceNode& a, const SentenceNode& b) { return a.start != b.start ? a.start < b.start : a.id < b.id; });

  std::vector<const SentenceNode*> committed;
  for (const auto& s : graph.sentences()) {
    if (s.end <= cond.t) committed.push_back(&s);
  }
  std::sort(committed.begin(), committed.end(), [](const SentenceNode* a, const SentenceNode* b) {
    return a->end != b->end ? a->end < b->end : (a->start != b->start ? a->start < b->start : a->id < b->id);
  });
  const std::size_t first = committed.size() > recent_count ? committed.size() - recent_count : 0;
  for (std::size_t i = first; i < committed.size(); ++i) {
    if (!anchor_ids.contains(committed[i]->id)) cond.recent.push_back(*committed[i]);
  }

  for (const auto& s : graph.seconds()) {
    if (s.sentence_id == cond.query.sentence_id && s.channel == cond.query.channel && s.t < cond.t) cond.pending.push_back(s);
  }
  return cond;
}

std::string_view to_string(SegmentTag tag) { return kTags[static_cast<std::size_t>(tag)]; }

std::string speaker_tag(int speaker) {
  if (speaker >= 0 && speaker < 26) return std::string(1, static_cast<char>('A' + speaker));
  return "S" + std::to_string(speaker);
}

std::string format_segment(const ChainSegment& seg) {
  std::string out(to_string(seg.tag));
  out += " spk=" + speaker_tag(seg.speaker);
  if (seg.tag == SegmentTag::Anchor || seg.tag == SegmentTag::Sentence) {
    out += " t=" + std::to_string(seg.start) + "-" + std::to_string(seg.end);
  } else {
    out += " t=" + std::to_string(seg.start);
  }
  out += " high=";
  out += to_string(seg.high);
  out += " low=";
  out += to_string(seg.low);
  if (!seg.text.empty()) out += " " + seg.text;
  return out;
}

LinearizedChain linearize(const DecodingCondition& cond) {
  LinearizedChain chain;
  for (const auto& s : cond.anchors) chain.segments.push_back(from_sentence(s, SegmentTag::Anchor));
  for (const auto& s : cond.recent) chain.segments.push_back(from_sentence(s, SegmentTag::Sentence));
  for (const auto& s : cond.pending) chain.segments.push_back(from_second(s, SegmentTag::Second));
  std::stable_sort(chain.segments.begin(), chain.segments.end(), [](const ChainSegment& a, const ChainSegment& b) {
    return a.start != b.start ? a.start < b.start : a.end < b.end;
  });
  chain.segments.push_back(from_second(cond.query, SegmentTag::Query));
  for (const auto& seg : chain.segments) {
    if (!chain.text.empty()) chain.text += ' ';
    chain.text += format_segment(seg);
  }
  return chain;
}

LinearizedChain parse_chain(std::string_view text) {
  LinearizedChain chain;
  chain.text = std::string(text);
  const auto tokens = tokenize_whitespace(text);
  std::size_t i = 0;
  while (i < tokens.size()) {
    const auto tag = parse_tag(tokens[i]);
    if (!tag) throw DataError("expected a segment tag, got '" + tokens[i] + "'");
    if (i + 4 >= tokens.size()) throw DataError("truncated segment header");
    ChainSegment seg;
    seg.tag = *tag;
    const std::string& spk = tokens[i + 1];
    const std::string& t = tokens[i + 2];
    const std::string& high = tokens[i + 3];
    const std::string& low = tokens[i + 4];
    if (!starts_with(spk, "spk=") || !starts_with(t, "t=") || !starts_with(high, "high=") || !starts_with(low, "low=")) {
      throw DataError("malformed segment header near '" + tokens[i] + "'");
    }
    const std::string who = spk.substr(4);
    if (who.size() == 1 && who[0] >= 'A' && who[0] <= 'Z') {
      seg.speaker = who[0] - 'A';
    } else if (who.size() > 1 && who[0] == 'S') {
      seg.speaker = static_cast<int>(parse_int(who.substr(1), "speaker"));
    } else {
      throw DataError("bad speaker '" + who + "' in chain");
    }
    const std::string span = t.substr(2);
    if (const auto dash = span.find('-', 1); dash != std::string::npos) {
      seg.start = parse_int(span.substr(0, dash), "tick");
      seg.end = parse_int(span.substr(dash + 1), "tick");
    } else {
      seg.start = parse_int(span, "tick");
      seg.end = seg.start + 1;
    }
    const auto h = parse_high_act(std::string_view(high).substr(5));
    const auto l = parse_low_act(std::string_view(low).substr(4));
    if (!h || !l) throw DataError("bad act labels in chain");
    seg.high = *h;
    seg.low = *l;
    i += 5;
    while (i < tokens.size() && !parse_tag(tokens[i])) {
      if (!seg.text.empty()) seg.text += ' ';
      seg.text += tokens[i++];
    }
    chain.segments.push_back(std::move(seg));
  }
  return chain;
}

// ---- backends

GenerationResult generate_rationale(const LinearizedChain& chain, RationaleBackend& backend) {
  const auto begin = std::chrono::steady_clock::now();
  std::string text = backend.generate(chain);
  const auto end = std::chrono::steady_clock::now();
  return {std::move(text), std::chrono::duration<double, std::milli>(end - begin).count(), backend.name()};
}

std::string topic_word(std::string_view text) {
  const auto words = tokenize_words(text);
  std::map<std::string, std::size_t> counts;
  for (const auto& w : words) ++counts[w];
  std::string best;
  std::size_t best_count = 0;
  for (const auto& w : words) {
    if (counts[w] > best_count) {
      best = w;
      best_count = counts[w];
    }
  }
  return best;
}

std::string TemplateBackend::generate(const LinearizedChain& chain) {
  if (chain.segments.empty() || chain.segments.back().tag != SegmentTag::Query) {
    throw DataError("chain must end with the query segment");
  }
  const ChainSegment& q = chain.segments.back();
  std::ostringstream out;
  out << "speaker " << speaker_tag(q.speaker) << ' ' << low_phrase(q.low) << " ( " << to_string(q.low) << " ) while "
      << high_phrase(q.high) << " ( " << to_string(q.high) << " )";
  std::vector<const ChainSegment*> anchors;
  for (const auto& s : chain.segments) {
    if (s.tag == SegmentTag::Anchor) anchors.push_back(&s);
  }
  const std::string now = q.text.empty() ? std::string("silence") : topic_word(q.text);
  if (anchors.empty()) {
    out << " ; grounded only in the current second on " << now;
  } else {
    out << " ; current second on " << now << " recalls";
    for (std::size_t i = 0; i < anchors.size(); ++i) {
      const auto* a = anchors[i];
      const std::string topic = a->text.empty() ? std::string("silence") : topic_word(a->text);
      out << (i == 0 ? " " : " and ") << topic << " from speaker " << speaker_tag(a->speaker) << " at " << a->start;
    }
  }
  return out.str();
}

// ---- trainable seq2seq

namespace {

Var attention_block(ParamBinder& bind, const std::string& prefix, Var query_src, Var kv_src, Var bias) {
  Var q = ad::matmul(query_src, bind(prefix + ".Wq"));
  Var k = ad::matmul(kv_src, bind(prefix + ".Wk"));
  Var v = ad::matmul(kv_src, bind(prefix + ".Wv"));
  return ad::add(query_src, ad::matmul(ad::masked_attention(q, k, v, bias), bind(prefix + ".Wo")));
}

Var ffn_block(ParamBinder& bind, const std::string& prefix, Var x) {
  Var h = ad::tanh(ad::affine(x, bind(prefix + ".W1"), bind(prefix + ".b1")));
  return ad::add(x, ad::affine(h, bind(prefix + ".W2"), bind(prefix + ".b2")));
}

void check_ids(const Seq2SeqModel& model, std::span<const std::size_t> ids, const char* what) {
  for (std::size_t id : ids) {
    if (id >= model.vocab.size()) throw DataError(std::string(what) + " token id outside the vocabulary");
  }
}

Var encode(ParamBinder& bind, const Seq2SeqModel& model, std::span<const std::size_t> source) {
  if (source.empty()) throw DataError("empty source sequence");
  if (source.size() > model.config.max_source) throw ShapeError("source longer than max_source");
  check_ids(model, source, "source");
  Tape& tape = bind.tape();
  Var x = ad::add(ad::gather_rows(bind("src_emb"), source), ad::rows(bind("pos_src"), 0, source.size()));
  x = attention_block(bind, "enc.attn", x, x, tape.constant(Matrix(source.size(), source.size(), 0.0)));
  return ffn_block(bind, "enc.ffn", x);
}

Var decode_logits(ParamBinder& bind, const Seq2SeqModel& model, Var memory, std::span<const std::size_t> inputs) {
  if (inputs.size() > model.config.max_target) throw ShapeError("target longer than max_target");
  Tape& tape = bind.tape();
  const std::size_t n = inputs.size();
  Var y = ad::add(ad::gather_rows(bind("tgt_emb"), inputs), ad::rows(bind("pos_tgt"), 0, n));
  y = attention_block(bind, "dec.self", y, y, tape.constant(causal_bias(n, 0.0)));
  y = attention_block(bind, "dec.cross", y, memory, tape.constant(Matrix(n, memory.rows(), 0.0)));
  y = ffn_block(bind, "dec.ffn", y);
  return ad::affine(y, bind("out.W"), bind("out.b"));
}

}  // namespace

Seq2SeqModel init_seq2seq(const Seq2SeqConfig& cfg, Vocabulary vocab, std::uint64_t seed) {
  if (cfg.d_model == 0 || cfg.ffn_hidden == 0 || cfg.max_source == 0 || cfg.max_target < 2) {
    throw ConfigError("invalid seq2seq dimensions");
  }
  Seq2SeqModel model{cfg, std::move(vocab), {}};
  ParamSet& p = model.params;
  Rng rng = make_rng(seed, "seq2seq-init");
  const std::size_t d = cfg.d_model, v = model.vocab.size();
  p.add("src_emb", gaussian(v, d, 0.3, rng));
  p.add("tgt_emb", gaussian(v, d, 0.3, rng));
  p.add("pos_src", gaussian(cfg.max_source, d, 0.1, rng));
  p.add("pos_tgt", gaussian(cfg.max_target, d, 0.1, rng));
  for (const char* block : {"enc.attn", "dec.self", "dec.cross"}) {
    for (const char* w : {".Wq", ".Wk", ".Wv", ".Wo"}) p.add(std::string(block) + w, xavier_uniform(d, d, rng));
  }
  for (const char* block : {"enc.ffn", "dec.ffn"}) {
    p.add(std::string(block) + ".W1", xavier_uniform(d, cfg.ffn_hidden, rng));
    p.add(std::string(block) + ".b1", Matrix(1, cfg.ffn_hidden));
    p.add(std::string(block) + ".W2", xavier_uniform(cfg.ffn_hidden, d, rng));
    p.add(std::string(block) + ".b2", Matrix(1, d));
  }
  p.add("out.W", xavier_uniform(d, v, rng));
  p.add("out.b", Matrix(1, v));
  return model;
}

nlohmann::json seq2seq_to_json(const Seq2SeqModel& model) {
  const auto& c = model.config;
  return {{"kind", "seq2seq"},
          {"config", {{"d_model", c.d_model}, {"ffn_hidden", c.ffn_hidden}, {"max_source", c.max_source}, {"max_target", c.max_target}}},
          {"vocab", model.vocab.to_json()},
          {"params", params_to_json(model.params)}};
}

Seq2SeqModel seq2seq_from_json(const nlohmann::json& j) {
  if (!j.contains("kind") || j.at("kind") != "seq2seq") throw DataError("not a seq2seq checkpoint");
  Seq2SeqConfig cfg;
  try {
    const auto& c = j.at("config");
    cfg.d_model = c.at("d_model").get<std::size_t>();
    cfg.ffn_hidden = c.at("ffn_hidden").get<std::size_t>();
    cfg.max_source = c.at("max_source").get<std::size_t>();
    cfg.max_target = c.at("max_target").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad seq2seq config: ") + e.what());
  }
  Seq2SeqModel model = init_seq2seq(cfg, Vocabulary::from_json(j.at("vocab")), 0);
  load_params_into(model.params, j.at("params"));
  return model;
}

std::vector<std::size_t> encode_source(const Seq2SeqModel& model, const LinearizedChain& chain) {
  auto tokens = tokenize_whitespace(chain.text);
  if (tokens.size() > model.config.max_source) {
    tokens.erase(tokens.begin(), tokens.end() - static_cast<std::ptrdiff_t>(model.config.max_source));
  }
  return model.vocab.encode(tokens);
}

std::vector<std::size_t> encode_target(const Seq2SeqModel& model, std::string_view rationale) {
  const auto tokens = tokenize_whitespace(rationale);
  if (tokens.empty()) throw DataError("empty rationale target");
  if (tokens.size() + 1 > model.config.max_target) {
    throw DataError("rationale of " + std::to_string(tokens.size()) + " tokens exceeds max_target");
  }
  std::vector<std::size_t> ids;
  for (const auto& t : tokens) {
    if (!model.vocab.contains(t)) throw DataError("rationale token '" + t + "' is not in the vocabulary");
    ids.push_back(model.vocab.id(t));
  }
  ids.push_back(Vocabulary::kEos);
  return ids;
}

Var decoder_nll(ParamBinder& bind, const Seq2SeqModel& model, std::span<const std::size_t> source,
                std::span<const std::size_t> target) {
  if (target.empty()) throw DataError("empty target sequence");
  check_ids(model, target, "target");
  Var memory = encode(bind, model, source);
  std::vector<std::size_t> inputs{Vocabulary::kBos};
  inputs.insert(inputs.end(), target.begin(), target.end() - 1);
  return ad::cross_entropy_rows(decode_logits(bind, model, memory, inputs), target);
}

double decoder_nll(const Seq2SeqModel& model, std::span<const std::size_t> source, std::span<const std::size_t> target) {
  Tape tape;
  ParamBinder bind(tape, model.params);
  return decoder_nll(bind, model, source, target).scalar();
}

double decoder_nll(const Seq2SeqModel& model, const LinearizedChain& chain, std::string_view rationale) {
  return decoder_nll(model, encode_source(model, chain), encode_target(model, rationale));
}

std::vector<std::size_t> greedy_decode(const Seq2SeqModel& model, std::span<const std::size_t> source) {
  Tape tape;
  ParamBinder bind(tape, model.params);
  Var memory = encode(bind, model, source);
  std::vector<std::size_t> inputs{Vocabulary::kBos};
  std::vector<std::size_t> out;
  while (inputs.size() <= model.config.max_target) {
    Var logits = decode_logits(bind, model, memory, inputs);
    const auto last = logits.value().row(logits.rows() - 1);
    std::size_t best = Vocabulary::kEos;
    for (std::size_t k = 0; k < last.size(); ++k) {
      if (k == Vocabulary::kPad || k == Vocabulary::kBos) continue;
      if (last[k] > last[best]) best = k;
    }
    out.push_back(best);
    if (best == Vocabulary::kEos || inputs.size() == model.config.max_target) break;
    inputs.push_back(best);
  }
  return out;
}

std::string TrainableBackend::generate(const LinearizedChain& chain) {
  const auto ids = greedy_decode(*model_, encode_source(*model_, chain));
  return model_->vocab.decode(ids);
}

std::vector<double> train_seq2seq(Seq2SeqModel& model, std::span<const Seq2SeqPair> pairs,
                                  const Seq2SeqTrainOptions& options,
                                  const std::function<void(std::size_t, double)>& on_epoch) {
  if (pairs.empty()) throw DataError("no seq2seq training pairs");
  if (options.batch_size == 0) throw ConfigError("batch size must be positive");
  const std::size_t steps_per_epoch = (pairs.size() + options.batch_size - 1) / options.batch_size;
  OptimizerConfig opt = options.optimizer;
  if (opt.total_steps == 0) opt.total_steps = steps_per_epoch * options.epochs;
  AdamW optimizer(opt);

  std::vector<std::size_t> order(pairs.size());
  std::vector<double> history;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(options.seed, "seq2seq-shuffle", epoch));
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += options.batch_size) {
      const std::size_t end = std::min(begin + options.batch_size, order.size());
      model.params.zero_grad();
      Tape tape;
      ParamBinder bind(tape, model.params);
      std::vector<Var> terms;
      for (std::size_t i = begin; i < end; ++i) {
        terms.push_back(decoder_nll(bind, model, pairs[order[i]].source, pairs[order[i]].target));
      }
      Var sum = ad::sum(ad::concat_rows(terms));
      if (!std::isfinite(sum.scalar())) throw NumericError("non-finite decoder loss");
      total += sum.scalar();
      tape.backward(ad::scale(sum, 1.0 / static_cast<double>(end - begin)));
      optimizer.step(model.params);
    }
    history.push_back(total / static_cast<double>(pairs.size()));
    if (on_epoch) on_epoch(epoch, history.back());
  }
  return history;
}

// ---- remote

RemoteConfig remote_config_from_env(RemoteConfig base) {
  if (const char* e = std::getenv("GEN_ENDPOINT"); e && *e) base.endpoint = e;
  if (const char* t = std::getenv("GEN_TIMEOUT_MS"); t && *t) {
    try {
      base.timeout_ms = std::stoi(t);
    } catch (const std::exception&) {
      throw ConfigError(std::string("GEN_TIMEOUT_MS is not an integer: ") + t);
    }
  }
  return base;
}

RemoteBackend::RemoteBackend(RemoteConfig cfg) : cfg_(std::move(cfg)) {
  const std::string scheme = "http://";
  if (cfg_.endpoint.rfind(scheme, 0) != 0) {
    throw RemoteError(RemoteError::Kind::Config, "remote endpoint must start with http:// (got '" + cfg_.endpoint + "')");
  }
  if (cfg_.timeout_ms <= 0) throw RemoteError(RemoteError::Kind::Config, "remote timeout must be positive");
  const auto slash = cfg_.endpoint.find('/', scheme.size());
  host_ = cfg_.endpoint.substr(0, slash);
  path_ = slash == std::string::npos ? "/" : cfg_.endpoint.substr(slash);
}

std::string RemoteBackend::generate(const LinearizedChain& chain) {
  httplib::Client client(host_);
  const auto sec = cfg_.timeout_ms / 1000;
  const auto usec = (cfg_.timeout_ms % 1000) * 1000;
  client.set_connection_timeout(sec, usec);
  client.set_read_timeout(sec, usec);
  client.set_write_timeout(sec, usec);
  const nlohmann::json body = {{"chain", chain.text}, {"max_tokens", cfg_.max_tokens}};
  auto res = client.Post(path_, body.dump(), "application/json");
  if (!res) {
    const auto err = res.error();
    const auto kind = err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout ? RemoteError::Kind::Timeout
                                                                                               : RemoteError::Kind::Connection;
    throw RemoteError(kind, "remote generation failed: " + httplib::to_string(err));
  }
  if (res->status != 200) {
    throw RemoteError(RemoteError::Kind::Status, "remote generation returned HTTP " + std::to_string(res->status));
  }
  try {
    const auto j = nlohmann::json::parse(res->body);
    return j.at("text").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw RemoteError(RemoteError::Kind::Protocol, std::string("bad remote response: ") + e.what());
  }
}

GenerationResult generate_with_fallback(const LinearizedChain& chain, RationaleBackend& primary,
                                        RationaleBackend& fallback) {
  const auto begin = std::chrono::steady_clock::now();
  try {
    std::string text = primary.generate(chain);
    const auto end = std::chrono::steady_clock::now();
    return {std::move(text), std::chrono::duration<double, std::milli>(end - begin).count(), primary.name()};
  } catch (const RemoteError&) {
    std::string text = fallback.generate(chain);
    const auto end = std::chrono::steady_clock::now();
    return {std::move(text), std::chrono::duration<double, std::milli>(end - begin).count(),
            fallback.name() + "-fallback"};
  }
}

}  // namespace convgot
