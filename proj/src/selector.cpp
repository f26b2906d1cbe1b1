#include "convgot/selector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "convgot/checkpoint.hpp"
#include "convgot/errors.hpp"
#include "convgot/random.hpp"
#include "convgot/text.hpp"

namespace convgot {
namespace {

void put_one_hot(std::span<double> row, std::size_t offset, std::size_t index) { row[offset + index] = 1.0; }

Var row_of_ones_times(Tape& tape, Var scalar, std::size_t n) { return ad::scalar_mul(scalar, tape.constant(Matrix(1, n, 1.0))); }

}  // namespace

void validate(const SelectorConfig& cfg) {
  if (cfg.semantic_dim == 0 || cfg.hidden == 0 || cfg.ffn_hidden == 0) throw ConfigError("selector widths must be positive");
  if (cfg.hash_buckets == 0) throw ConfigError("selector hash buckets must be positive");
  if (!(cfg.temperature > 0.0)) throw ConfigError("selector temperature must be positive");
  if (cfg.lambda_count < 0.0 || cfg.lambda_rank < 0.0) throw ConfigError("selector loss weights must be nonnegative");
}

nlohmann::json to_json(const SelectorConfig& cfg) {
  return {{"semantic_dim", cfg.semantic_dim}, {"hidden", cfg.hidden},
          {"ffn_hidden", cfg.ffn_hidden},     {"hash_buckets", cfg.hash_buckets},
          {"temperature", cfg.temperature},   {"lambda_count", cfg.lambda_count},
          {"lambda_rank", cfg.lambda_rank}};
}

SelectorConfig selector_config_from_json(const nlohmann::json& j) {
  SelectorConfig cfg;
  try {
    cfg.semantic_dim = j.at("semantic_dim").get<std::size_t>();
    cfg.hidden = j.at("hidden").get<std::size_t>();
    cfg.ffn_hidden = j.at("ffn_hidden").get<std::size_t>();
    cfg.hash_buckets = j.at("hash_buckets").get<std::size_t>();
    cfg.temperature = j.at("temperature").get<double>();
    cfg.lambda_count = j.at("lambda_count").get<double>();
    cfg.lambda_rank = j.at("lambda_rank").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad selector config: ") + e.what());
  }
  validate(cfg);
  return cfg;
}

std::size_t selector_feature_dim(const SelectorConfig& cfg) { return kSelectorScalarFeatures + cfg.semantic_dim; }

SelectorModel init_selector(const SelectorConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  SelectorModel model{cfg, {}};
  ParamSet& p = model.params;
  Rng rng = make_rng(seed, "selector-init");
  const std::size_t f = selector_feature_dim(cfg);
  const std::size_t h = cfg.hidden;
  p.add("in.W", xavier_uniform(f, h, rng));
  p.add("in.b", Matrix(1, h));
  for (const char* w : {"attn.Wq", "attn.Wk", "attn.Wv", "attn.Wo"}) p.add(w, xavier_uniform(h, h, rng));
  p.add("rel.w", xavier_uniform(kRelationalFeatures, 1, rng));
  p.add("ffn.W1", xavier_uniform(h, cfg.ffn_hidden, rng));
  p.add("ffn.b1", Matrix(1, cfg.ffn_hidden));
  p.add("ffn.W2", xavier_uniform(cfg.ffn_hidden, h, rng));
  p.add("ffn.b2", Matrix(1, h));
  p.add("score.w", xavier_uniform(1, h, rng));
  p.add("score.b", Matrix(1, 1));
  p.add("tau.w", xavier_uniform(1, h, rng));
  p.add("tau.b", Matrix(1, 1));
  return model;
}

nlohmann::json selector_to_json(const SelectorModel& model) {
  return {{"kind", "selector"}, {"config", to_json(model.config)}, {"params", params_to_json(model.params)}};
}

SelectorModel selector_from_json(const nlohmann::json& j) {
  if (!j.contains("kind") || j.at("kind") != "selector") throw DataError("not a selector checkpoint");
  SelectorModel model = init_selector(selector_config_from_json(j.at("config")), 0);
  load_params_into(model.params, j.at("params"));
  return model;
}

NodeFeatures featurize(const CandidateView& view, const SelectorConfig& cfg) {
  if (!view.query) throw DataError("candidate view has no query node");
  const SecondNode& q = *view.query;
  const std::size_t d = cfg.semantic_dim;
  if (q.emb_semantic.size() != d) throw ShapeError("query semantic embedding does not match the selector");
  const std::size_t n = view.candidates.size();
  NodeFeatures out;
  out.x = Matrix(1 + n, selector_feature_dim(cfg));
  out.rel = Matrix(1 + n, kRelationalFeatures);
  const SparseBow qbow = hashed_bow(q.text, cfg.hash_buckets);

  auto row = out.x.row(0);
  row[0] = 1.0;
  row[1] = 1.0;
  row[2] = 0.0;
  row[3] = std::log1p(1.0);
  row[4] = 1.0;
  put_one_hot(row, 5, index_of(q.labels.high));
  put_one_hot(row, 9, index_of(q.labels.low));
  std::copy(q.emb_semantic.begin(), q.emb_semantic.end(), row.begin() + kSelectorScalarFeatures);

  for (std::size_t j = 0; j < n; ++j) {
    const SentenceNode& c = *view.candidates[j];
    if (c.mean_semantic.size() != d) throw ShapeError("candidate semantic embedding does not match the selector");
    const double match = c.speaker == q.speaker ? 1.0 : 0.0;
    const double gap = std::log1p(static_cast<double>(std::max<std::int64_t>(q.t - c.end, 0)));
    const double sim = cosine(qbow, hashed_bow(c.text, cfg.hash_buckets));
    auto r = out.x.row(1 + j);
    r[1] = match;
    r[2] = gap;
    r[3] = std::log1p(static_cast<double>(c.end - c.start));
    r[4] = sim;
    put_one_hot(r, 5, index_of(c.high));
    put_one_hot(r, 9, index_of(c.low));
    std::copy(c.mean_semantic.begin(), c.mean_semantic.end(), r.begin() + kSelectorScalarFeatures);
    out.rel(1 + j, 0) = gap;
    out.rel(1 + j, 1) = match;
    out.rel(1 + j, 2) = sim;
    out.ids.push_back(c.id);
    out.starts.push_back(c.start);
  }
  return out;
}

ScoreVars selector_forward(ParamBinder& bind, const SelectorConfig& cfg, const NodeFeatures& features) {
  if (features.x.cols() != selector_feature_dim(cfg)) throw ShapeError("selector feature width mismatch");
  const std::size_t rows = features.x.rows();
  if (rows == 0 || features.rel.rows() != rows || features.candidates() + 1 != rows) {
    throw ShapeError("selector features are inconsistent");
  }
  Tape& tape = bind.tape();
  Var h0 = ad::tanh(ad::affine(tape.frozen(features.x), bind("in.W"), bind("in.b")));

  // relational bias lives in row 0 only: e0 (n x 1) times (R w)^T
  Matrix e0(rows, 1, 0.0);
  e0[0] = 1.0;
  Var rel_bias = ad::matmul(tape.frozen(features.rel), bind("rel.w"));  // rows x 1
  Var bias = ad::matmul_nt(tape.constant(std::move(e0)), rel_bias);     // rows x rows

  Var q = ad::matmul(h0, bind("attn.Wq"));
  Var k = ad::matmul(h0, bind("attn.Wk"));
  Var v = ad::matmul(h0, bind("attn.Wv"));
  Var h1 = ad::add(h0, ad::matmul(ad::masked_attention(q, k, v, bias), bind("attn.Wo")));
  Var ff = ad::tanh(ad::affine(h1, bind("ffn.W1"), bind("ffn.b1")));
  Var h2 = ad::add(h1, ad::affine(ff, bind("ffn.W2"), bind("ffn.b2")));

  ScoreVars out;
  out.tau = ad::add(ad::matmul_nt(ad::rows(h2, 0, 1), bind("tau.w")), bind("tau.b"));
  const std::size_t n = rows - 1;
  if (n > 0) {
    Var s = ad::matmul_nt(bind("score.w"), ad::rows(h2, 1, n));  // 1 x n
    out.scores = ad::add(s, row_of_ones_times(tape, bind("score.b"), n));
  }
  return out;
}

ScoreResult score_candidates(const NodeFeatures& features, const SelectorModel& model) {
  Tape tape;
  ParamBinder bind(tape, model.params);
  ScoreVars v = selector_forward(bind, model.config, features);
  ScoreResult r;
  r.tau = v.tau.scalar();
  if (v.scores.valid()) r.scores = v.scores.value().storage();
  for (double s : r.scores) {
    if (!std::isfinite(s)) throw NumericError("non-finite selector score");
  }
  if (!std::isfinite(r.tau)) throw NumericError("non-finite selector threshold");
  return r;
}

std::vector<double> threshold_align(std::span<const double> scores, double tau, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  std::vector<double> out(scores.size());
  std::transform(scores.begin(), scores.end(), out.begin(), [&](double s) { return (s - tau) / temperature; });
  return out;
}

SelectorLoss selector_loss(Var logits, std::span<const double> targets, std::span<const double> mask, double alpha,
                           double lambda_count, double lambda_rank, Var* total) {
  if (!(alpha > 0.0)) throw ConfigError("positive weight must be positive");
  const std::size_t n = logits.cols();
  if (logits.rows() != 1 || targets.size() != n || mask.size() != n) throw ShapeError("selector loss shapes disagree");
  Tape& tape = *logits.tape();
  Var wbce = ad::weighted_bce_with_logits(logits, targets, mask, alpha);
  double label_count = 0.0;
  for (std::size_t j = 0; j < n; ++j) label_count += targets[j] * mask[j];
  Var soft = ad::sum(ad::mul(ad::sigmoid(logits), tape.constant(Matrix(1, n, std::vector<double>(mask.begin(), mask.end())))));
  Var count = ad::square(ad::add_scalar(soft, -label_count));
  Var rank = ad::masked_rank_loss(logits, targets, mask);
  Var sum = ad::add(wbce, ad::add(ad::scale(count, lambda_count), ad::scale(rank, lambda_rank)));
  if (total) *total = sum;
  return {sum.scalar(), wbce.scalar(), count.scalar(), rank.scalar()};
}

SelectorLoss selector_loss(std::span<const double> logits, std::span<const double> targets,
                           std::span<const double> mask, double alpha, double lambda_count, double lambda_rank) {
  Tape tape;
  Var l = tape.constant(Matrix::row_vector(logits));
  return selector_loss(l, targets, mask, alpha, lambda_count, lambda_rank, nullptr);
}

std::vector<std::size_t> select_anchors(std::span<const double> scores, double tau, std::span<const std::int64_t> starts) {
  if (scores.size() != starts.size()) throw ShapeError("scores and start times differ in length");
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (scores[j] > tau) out.push_back(j);
  }
  std::stable_sort(out.begin(), out.end(), [&](std::size_t a, std::size_t b) { return starts[a] < starts[b]; });
  return out;
}

SelectionResult select(const CandidateView& view, const SelectorModel& model) {
  const NodeFeatures f = featurize(view, model.config);
  const ScoreResult s = score_candidates(f, model);
  SelectionResult out;
  out.t = view.query->t;
  out.scores = s.scores;
  out.tau = s.tau;
  out.mask.assign(s.scores.size(), 1.0);
  for (std::size_t j : select_anchors(s.scores, s.tau, f.starts)) out.anchors.push_back(f.ids[j]);
  return out;
}

// ---- training

std::vector<SelectorSample> make_selector_samples(std::span<const SecondRecord> dialogue, const SelectorConfig& cfg,
                                                  const GraphConfig& graph_cfg) {
  GotGraph graph(graph_cfg);
  std::vector<SelectorSample> out;
  for (const auto& r : dialogue) {
    if (!r.gold) throw DataError("record " + r.audio_id + "@" + std::to_string(r.t) + " has no gold labels");
    graph.observe(r, SpeechActPair::from_labels(r.gold->high, r.gold->low));
    if (r.padded) continue;
    const CandidateView view = graph.candidate_view(r.t);
    if (view.candidates.empty()) continue;  // nothing to supervise
    SelectorSample s{featurize(view, cfg), {}};
    const std::set<std::int64_t> gold(r.gold->anchors.begin(), r.gold->anchors.end());
    for (std::int64_t id : s.features.ids) s.targets.push_back(gold.contains(id) ? 1.0 : 0.0);
    out.push_back(std::move(s));
  }
  return out;
}

double positive_weight(std::span<const SelectorSample> samples) {
  double pos = 0.0, neg = 0.0;
  for (const auto& s : samples) {
    for (double y : s.targets) (y > 0.5 ? pos : neg) += 1.0;
  }
  return pos > 0.0 && neg > 0.0 ? neg / pos : 1.0;
}

Var selector_sample_loss(ParamBinder& bind, const SelectorConfig& cfg, const SelectorSample& sample, double alpha,
                         SelectorLoss* parts) {
  if (sample.features.candidates() == 0) throw DataError("selector sample has no candidates");
  ScoreVars v = selector_forward(bind, cfg, sample.features);
  const std::size_t n = sample.features.candidates();
  Tape& tape = bind.tape();
  Var logits = ad::scale(ad::sub(v.scores, row_of_ones_times(tape, v.tau, n)), 1.0 / cfg.temperature);
  const std::vector<double> mask(n, 1.0);
  Var total;
  const SelectorLoss l = selector_loss(logits, sample.targets, mask, alpha, cfg.lambda_count, cfg.lambda_rank, &total);
  if (parts) *parts = l;
  return total;
}

SelectorLoss SelectorTrainer::train_step(std::span<const SelectorSample* const> batch) {
  if (batch.empty()) throw DataError("empty selector batch");
  model_.params.zero_grad();
  Tape tape;
  ParamBinder bind(tape, model_.params);
  std::vector<Var> totals;
  SelectorLoss sum;
  for (const auto* s : batch) {
    SelectorLoss parts;
    totals.push_back(selector_sample_loss(bind, model_.config, *s, alpha_, &parts));
    sum.total += parts.total;
    sum.wbce += parts.wbce;
    sum.count += parts.count;
    sum.rank += parts.rank;
  }
  if (!std::isfinite(sum.total)) {
    throw NumericError("non-finite selector loss at step " + std::to_string(optimizer_.steps_taken()));
  }
  Var mean = ad::scale(ad::sum(ad::concat_rows(totals)), 1.0 / static_cast<double>(batch.size()));
  tape.backward(mean);
  optimizer_.step(model_.params);
  return sum;
}

std::vector<double> train_selector(SelectorModel& model, std::span<const SelectorSample> samples,
                                   const SelectorTrainOptions& options,
                                   const std::function<void(std::size_t, const SelectorLoss&)>& on_epoch) {
  if (samples.empty()) throw DataError("no selector training samples");
  if (options.batch_size == 0) throw ConfigError("batch size must be positive");
  const std::size_t steps_per_epoch = (samples.size() + options.batch_size - 1) / options.batch_size;
  OptimizerConfig opt = options.optimizer;
  if (opt.total_steps == 0) opt.total_steps = steps_per_epoch * options.epochs;
  SelectorTrainer trainer(model, opt, positive_weight(samples));

  std::vector<std::size_t> order(samples.size());
  std::vector<const SelectorSample*> batch;
  std::vector<double> history;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(options.seed, "selector-shuffle", epoch));
    std::shuffle(order.begin(), order.end(), rng);
    SelectorLoss acc;
    for (std::size_t begin = 0; begin < order.size(); begin += options.batch_size) {
      batch.clear();
      for (std::size_t i = begin; i < std::min(begin + options.batch_size, order.size()); ++i) batch.push_back(&samples[order[i]]);
      const SelectorLoss l = trainer.train_step(batch);
      acc.total += l.total;
      acc.wbce += l.wbce;
      acc.count += l.count;
      acc.rank += l.rank;
    }
    const double n = static_cast<double>(samples.size());
    acc = {acc.total / n, acc.wbce / n, acc.count / n, acc.rank / n};
    history.push_back(acc.total);
    if (on_epoch) on_epoch(epoch, acc);
  }
  return history;
}

}  // namespace convgot
