#include <chrono>
#include <cmath>
#include <random>
#include <thread>

#include "doctest.h"
#include "httplib.h"

#include "convgot/errors.hpp"
#include "convgot/grad_check.hpp"
#include "convgot/rationale.hpp"

using namespace convgot;

namespace {

SecondRecord rec(std::int64_t t, int speaker, std::string text, bool end = false) {
  SecondRecord r;
  r.audio_id = "r";
  r.t = t;
  r.speaker = speaker;
  r.text = std::move(text);
  r.emb_semantic = {0.0, 1.0};
  r.sentence_end = end;
  return r;
}

SpeechActPair lab(HighAct h, LowAct l) { return SpeechActPair::from_labels(h, l); }

// Two committed sentences, then an open one with two pending seconds.
GotGraph sample_graph() {
  GotGraph g;
  g.observe(rec(0, 0, "apple pie"), lab(HighAct::Constatives, LowAct::TurnTaking));
  g.observe(rec(1, 0, "apple tart", true), lab(HighAct::Constatives, LowAct::Continuation));
  g.observe(rec(2, 1, "river boat", true), lab(HighAct::Directives, LowAct::TurnTaking));
  g.observe(rec(3, 0, "apple now"), lab(HighAct::Commissives, LowAct::TurnTaking));
  g.observe(rec(4, 0, "still apple"), lab(HighAct::Commissives, LowAct::Continuation));
  g.observe(rec(5, 0, "apple again"), lab(HighAct::Commissives, LowAct::Continuation));
  return g;
}

SelectionResult selection_at(std::int64_t t, std::vector<std::int64_t> anchors) {
  SelectionResult s;
  s.t = t;
  s.anchors = std::move(anchors);
  return s;
}

}  // namespace

TEST_CASE("condition with nothing but the query") {
  GotGraph g;
  g.observe(rec(0, 0, "hello"), lab(HighAct::Constatives, LowAct::Continuation));
  const auto cond = build_condition(g, selection_at(0, {}));
  CHECK(cond.anchors.empty());
  CHECK(cond.recent.empty());
  CHECK(cond.pending.empty());
  CHECK(cond.query.t == 0);
  CHECK_THROWS_AS(build_condition(g, selection_at(1, {})), DataError);
}

TEST_CASE("anchors take precedence over recent sentences") {
  const GotGraph g = sample_graph();
  const auto cond = build_condition(g, selection_at(5, {0}));
  REQUIRE(cond.anchors.size() == 1);
  CHECK(cond.anchors[0].id == 0);
  REQUIRE(cond.recent.size() == 1);
  CHECK(cond.recent[0].id == 1);
  REQUIRE(cond.pending.size() == 2);
  CHECK(cond.pending[0].t == 3);
  CHECK(cond.pending[1].t == 4);
  CHECK_THROWS_AS(build_condition(g, selection_at(5, {7})), DataError);

  const auto chain = linearize(cond);
  std::size_t anchors = 0, sents = 0;
  for (const auto& s : chain.segments) {
    anchors += s.tag == SegmentTag::Anchor;
    sents += s.tag == SegmentTag::Sentence;
  }
  CHECK(anchors == 1);
  CHECK(sents == 1);
}

TEST_CASE("single query linearization format") {
  DecodingCondition cond;
  cond.t = 12;
  cond.query.t = 12;
  cond.query.speaker = 0;
  cond.query.text = "well  that is fine";
  cond.query.labels = lab(HighAct::Constatives, LowAct::Continuation);
  const auto chain = linearize(cond);
  CHECK(chain.text == "[QUERY] spk=A t=12 high=Constatives low=Continuation well that is fine");
}

TEST_CASE("two anchors and a query come out in time order") {
  const GotGraph g = sample_graph();
  const auto cond = build_condition(g, selection_at(5, {1, 0}));
  const auto chain = linearize(cond);
  REQUIRE(chain.segments.size() == 5);  // 2 anchors, 2 pending seconds, query
  CHECK(chain.segments[0].tag == SegmentTag::Anchor);
  CHECK(chain.segments[0].start == 0);
  CHECK(chain.segments[1].tag == SegmentTag::Anchor);
  CHECK(chain.segments[1].start == 2);
  CHECK(chain.segments.back().tag == SegmentTag::Query);
  for (std::size_t i = 1; i < chain.segments.size(); ++i) CHECK(chain.segments[i - 1].start < chain.segments[i].start);
}

TEST_CASE("chain parse round trip") {
  std::mt19937_64 rng(1);
  const char* words[] = {"oak", "[QUERY]", "pine", "t=3", "elm"};
  for (int trial = 0; trial < 200; ++trial) {
    DecodingCondition cond;
    cond.t = 100;
    std::int64_t t = 0;
    const int n = static_cast<int>(rng() % 5);
    for (int k = 0; k < n; ++k) {
      SentenceNode s;
      s.id = k;
      s.start = t;
      s.end = t + 1 + static_cast<std::int64_t>(rng() % 4);
      t = s.end;
      s.speaker = static_cast<int>(rng() % 30);
      s.high = static_cast<HighAct>(rng() % 4);
      s.low = static_cast<LowAct>(rng() % 4);
      for (int w = 0; w < static_cast<int>(rng() % 4); ++w) s.text += std::string(words[rng() % 5]) + " ";
      (rng() % 2 ? cond.anchors : cond.recent).push_back(s);
    }
    cond.query.t = 100;
    cond.query.speaker = 1;
    cond.query.text = words[rng() % 5];
    const auto chain = linearize(cond);
    const auto back = parse_chain(chain.text);
    CHECK(back.segments == chain.segments);
  }
  CHECK_THROWS_AS(parse_chain("[QUERY] spk=A t=x high=Constatives low=Continuation"), DataError);
  CHECK_THROWS_AS(parse_chain("hello [QUERY]"), DataError);
}

TEST_CASE("conditions never reach past the query tick") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    GraphConfig gc;
    gc.window = 6 + static_cast<std::int64_t>(rng() % 10);
    GotGraph g(gc);
    for (std::int64_t t = 0; t < 40; ++t) {
      g.observe(rec(t, static_cast<int>(rng() % 2), "w" + std::to_string(t), rng() % 3 == 0),
                lab(HighAct::Constatives, LowAct::Continuation));
      const auto view = g.candidate_view(t);
      std::vector<std::int64_t> anchors;
      for (const auto* c : view.candidates)
        if (rng() % 2) anchors.push_back(c->id);
      const auto cond = build_condition(g, selection_at(t, anchors));
      for (const auto& a : cond.anchors) CHECK(a.end <= t);
      for (const auto& r : cond.recent) CHECK(r.end <= t);
      for (const auto& p : cond.pending) CHECK(p.t < t);
      CHECK(cond.query.t == t);
    }
  }
}

TEST_CASE("template backend") {
  TemplateBackend tpl;
  DecodingCondition cond;
  cond.t = 4;
  cond.query.t = 4;
  cond.query.text = "kettle kettle";
  cond.query.labels = lab(HighAct::Directives, LowAct::Interruption);
  const auto chain = linearize(cond);
  const auto text = tpl.generate(chain);
  CHECK(text.find("grounded only in the current second") != std::string::npos);
  CHECK(text.find("Interruption") != std::string::npos);
  CHECK(text.find("Directives") != std::string::npos);
  CHECK(tpl.generate(chain) == text);

  const GotGraph g = sample_graph();
  const auto with = tpl.generate(linearize(build_condition(g, selection_at(5, {0, 1}))));
  CHECK(with.find("apple from speaker A at 0") != std::string::npos);
  CHECK(with.find("river from speaker B at 2") != std::string::npos);

  const auto r = generate_rationale(chain, tpl);
  CHECK(r.backend == "template");
  CHECK(r.latency_ms < 1.0);
}

TEST_CASE("topic word picks the most frequent, earliest on ties") {
  CHECK(topic_word("a b b a c") == "a");
  CHECK(topic_word("x y y") == "y");
  CHECK(topic_word("") == "");
}

namespace {

Seq2SeqModel tiny_model(std::uint64_t seed) {
  const std::vector<std::string> corpus{"[QUERY] spk=A t=1 high=Constatives low=Continuation red green",
                                        "speaker A says red", "speaker B says green"};
  Seq2SeqConfig cfg;
  cfg.d_model = 6;
  cfg.ffn_hidden = 5;
  cfg.max_source = 12;
  cfg.max_target = 8;
  return init_seq2seq(cfg, Vocabulary::build(corpus), seed);
}

}  // namespace

TEST_CASE("decoder nll on a uniform output layer") {
  Seq2SeqModel m = tiny_model(1);
  m.params.at("out.W").value.fill(0.0);
  m.params.at("out.b").value.fill(0.0);
  const std::vector<std::size_t> src{4, 5, 6};
  const std::vector<std::size_t> tgt{7, 8, 9, Vocabulary::kEos};
  CHECK(decoder_nll(m, src, tgt) == doctest::Approx(4.0 * std::log(static_cast<double>(m.vocab.size()))).epsilon(1e-12));
}

TEST_CASE("decoder nll near zero with a dominating output bias") {
  Seq2SeqModel m = tiny_model(2);
  m.params.at("out.W").value.fill(0.0);
  m.params.at("out.b").value.fill(0.0);
  m.params.at("out.b").value[7] = 80.0;
  const std::vector<std::size_t> src{4}, tgt{7, 7, 7};
  CHECK(decoder_nll(m, src, tgt) < 1e-30);
  CHECK(decoder_nll(m, src, tgt) >= 0.0);
}

TEST_CASE("decoder targets must be in vocabulary") {
  const Seq2SeqModel m = tiny_model(3);
  CHECK_THROWS_AS(encode_target(m, "speaker Z says blue"), DataError);
  const auto ids = encode_target(m, "speaker A says red");
  CHECK(ids.back() == Vocabulary::kEos);
  CHECK(ids.size() == 5);
  const std::vector<std::size_t> bad{m.vocab.size() + 3};
  CHECK_THROWS_AS(decoder_nll(m, bad, ids), DataError);
  CHECK_THROWS_AS(decoder_nll(m, ids, std::vector<std::size_t>{}), DataError);
}

TEST_CASE("decoder nll gradients match finite differences") {
  Seq2SeqModel m = tiny_model(4);
  const std::vector<std::size_t> src{4, 6, 5, 9}, tgt{10, 11, 12, Vocabulary::kEos};
  const auto report = grad_check(m.params, [&](ParamBinder& b) { return decoder_nll(b, m, src, tgt); });
  CHECK(report.max_rel_error <= 1e-3);
}

TEST_CASE("trainable backend fits a tiny corpus") {
  Seq2SeqModel m = tiny_model(5);
  const auto chain_a = parse_chain("[QUERY] spk=A t=1 high=Constatives low=Continuation red");
  const auto chain_b = parse_chain("[QUERY] spk=A t=1 high=Constatives low=Continuation green");
  std::vector<Seq2SeqPair> pairs{{encode_source(m, chain_a), encode_target(m, "speaker A says red")},
                                 {encode_source(m, chain_b), encode_target(m, "speaker B says green")}};
  Seq2SeqTrainOptions opt;
  opt.epochs = 300;
  opt.batch_size = 2;
  opt.optimizer.lr = 1e-2;
  opt.optimizer.warmup_steps = 0;
  opt.optimizer.weight_decay = 0.0;
  opt.optimizer.total_steps = 1000000;
  const auto hist = train_seq2seq(m, pairs, opt);
  CHECK(hist.back() < hist.front());
  auto shared = std::make_shared<Seq2SeqModel>(m);
  TrainableBackend backend(shared);
  CHECK(backend.generate(chain_a) == "speaker A says red");
  CHECK(backend.generate(chain_b) == "speaker B says green");
  const auto back = seq2seq_from_json(seq2seq_to_json(m));
  CHECK(decoder_nll(back, pairs[0].source, pairs[0].target) == decoder_nll(m, pairs[0].source, pairs[0].target));
}

TEST_CASE("remote backend talks to a local server and falls back on errors") {
  httplib::Server server;
  server.Post("/gen", [](const httplib::Request& req, httplib::Response& res) {
    const auto j = nlohmann::json::parse(req.body);
    res.set_content(nlohmann::json{{"text", "echo " + std::to_string(j.at("max_tokens").get<int>())}}.dump(),
                    "application/json");
  });
  server.Post("/slow", [](const httplib::Request&, httplib::Response& res) {
    std::this_thread::sleep_for(std::chrono::milliseconds(400));
    res.set_content(R"({"text":"late"})", "application/json");
  });
  server.Post("/broken", [](const httplib::Request&, httplib::Response& res) { res.status = 500; });
  server.Post("/garbage", [](const httplib::Request&, httplib::Response& res) { res.set_content("nope", "text/plain"); });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread worker([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  const std::string base = "http://127.0.0.1:" + std::to_string(port);
  DecodingCondition cond;
  cond.query.text = "hi";
  const auto chain = linearize(cond);
  TemplateBackend tpl;

  RemoteBackend ok({base + "/gen", 1000, 17});
  CHECK(ok.generate(chain) == "echo 17");
  CHECK(generate_with_fallback(chain, ok, tpl).backend == "remote");

  RemoteBackend slow({base + "/slow", 100, 8});
  try {
    slow.generate(chain);
    FAIL("expected a timeout");
  } catch (const RemoteError& e) {
    CHECK(e.kind() == RemoteError::Kind::Timeout);
  }
  const auto fb = generate_with_fallback(chain, slow, tpl);
  CHECK(fb.backend == "template-fallback");
  CHECK(fb.text == tpl.generate(chain));

  RemoteBackend broken({base + "/broken", 1000, 8});
  CHECK_THROWS_AS(broken.generate(chain), RemoteError);
  RemoteBackend garbage({base + "/garbage", 1000, 8});
  try {
    garbage.generate(chain);
    FAIL("expected a protocol error");
  } catch (const RemoteError& e) {
    CHECK(e.kind() == RemoteError::Kind::Protocol);
  }
  CHECK_THROWS_AS(RemoteBackend({"ftp://x", 100, 8}), RemoteError);

  server.stop();
  worker.join();
}
