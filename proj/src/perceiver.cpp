#include "convgot/perceiver.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "convgot/checkpoint.hpp"
#include "convgot/errors.hpp"
#include "convgot/random.hpp"

namespace convgot {
namespace {

std::string layer_name(std::string_view prefix, std::size_t layer, std::string_view leaf) {
  return std::string(prefix) + ".l" + std::to_string(layer) + "." + std::string(leaf);
}

ActDistribution to_distribution(const Matrix& logits) {
  const Matrix p = softmax_rowwise(logits);
  ActDistribution out{};
  std::copy(p.data().begin(), p.data().end(), out.begin());
  return out;
}

// Causal bias for an n-row window, either as a constant or through a learnable slope.
Var window_bias(ParamBinder& bind, const PerceiverConfig& cfg, std::size_t n) {
  Tape& tape = bind.tape();
  if (!cfg.learn_beta) return tape.constant(causal_bias(n, cfg.beta, cfg.context));
  Matrix mask = causal_bias(n, 0.0, cfg.context);
  Matrix neg_dist(n, n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) neg_dist(i, j) = -static_cast<double>(i - j);
  }
  return ad::add(tape.constant(std::move(mask)), ad::scalar_mul(bind("beta"), tape.constant(std::move(neg_dist))));
}

void check_dims(const PerceiverConfig& cfg, std::size_t acoustic, std::size_t semantic) {
  if (acoustic != cfg.acoustic_dim || semantic != cfg.semantic_dim) {
    throw ShapeError("embedding dims (" + std::to_string(acoustic) + ", " + std::to_string(semantic) +
                     ") do not match the model (" + std::to_string(cfg.acoustic_dim) + ", " +
                     std::to_string(cfg.semantic_dim) + ")");
  }
}

}  // namespace

void validate(const PerceiverConfig& cfg) {
  if (cfg.acoustic_dim == 0 || cfg.acoustic_dim != cfg.semantic_dim) {
    throw ConfigError("acoustic and semantic embeddings must share a nonzero dimension");
  }
  if (cfg.hidden == 0 || cfg.ffn_hidden == 0 || cfg.layers == 0) throw ConfigError("perceiver widths must be positive");
  if (cfg.heads == 0 || cfg.hidden % cfg.heads != 0) throw ConfigError("hidden size must be divisible by head count");
  if (cfg.context == 0) throw ConfigError("context length K must be at least 1");
  if (!(cfg.beta >= 0.0) || !std::isfinite(cfg.beta)) throw ConfigError("beta must be finite and nonnegative");
}

nlohmann::json to_json(const PerceiverConfig& cfg) {
  return {{"acoustic_dim", cfg.acoustic_dim}, {"semantic_dim", cfg.semantic_dim}, {"hidden", cfg.hidden},
          {"ffn_hidden", cfg.ffn_hidden},     {"layers", cfg.layers},             {"heads", cfg.heads},
          {"context", cfg.context},           {"beta", cfg.beta},                 {"learn_beta", cfg.learn_beta}};
}

PerceiverConfig perceiver_config_from_json(const nlohmann::json& j) {
  PerceiverConfig cfg;
  try {
    cfg.acoustic_dim = j.at("acoustic_dim").get<std::size_t>();
    cfg.semantic_dim = j.at("semantic_dim").get<std::size_t>();
    cfg.hidden = j.at("hidden").get<std::size_t>();
    cfg.ffn_hidden = j.at("ffn_hidden").get<std::size_t>();
    cfg.layers = j.at("layers").get<std::size_t>();
    cfg.heads = j.at("heads").get<std::size_t>();
    cfg.context = j.at("context").get<std::size_t>();
    cfg.beta = j.at("beta").get<double>();
    cfg.learn_beta = j.at("learn_beta").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad perceiver config: ") + e.what());
  }
  validate(cfg);
  return cfg;
}

PerceiverModel init_perceiver(const PerceiverConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  PerceiverModel model{cfg, {}};
  ParamSet& p = model.params;
  Rng rng = make_rng(seed, "perceiver-init");
  const std::size_t d = cfg.acoustic_dim;
  const std::size_t h = cfg.hidden;

  p.add("gate.W_b", xavier_uniform(d, d, rng));
  p.add("gate.W_e", xavier_uniform(d, d, rng));
  p.add("gate.b", Matrix(1, d));
  p.add("shared.W", xavier_uniform(d, h, rng));
  p.add("shared.b", Matrix(1, h));
  for (std::string_view prefix : {"high", "low"}) {
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      for (std::string_view w : {"Wq", "Wk", "Wv", "Wo"}) p.add(layer_name(prefix, l, w), xavier_uniform(h, h, rng));
      p.add(layer_name(prefix, l, "W1"), xavier_uniform(h, cfg.ffn_hidden, rng));
      p.add(layer_name(prefix, l, "b1"), Matrix(1, cfg.ffn_hidden));
      p.add(layer_name(prefix, l, "W2"), xavier_uniform(cfg.ffn_hidden, h, rng));
      p.add(layer_name(prefix, l, "b2"), Matrix(1, h));
    }
  }
  // identity FiLM: gamma = 1, eta = 0 regardless of z_H
  Matrix film_b(1, 2 * h, 0.0);
  for (std::size_t i = 0; i < h; ++i) film_b[i] = 1.0;
  p.add("film.W", Matrix(h, 2 * h));
  p.add("film.b", std::move(film_b));
  p.add("head_high.W", xavier_uniform(h, kNumActs, rng));
  p.add("head_high.b", Matrix(1, kNumActs));
  p.add("head_low.W", xavier_uniform(h, kNumActs, rng));
  p.add("head_low.b", Matrix(1, kNumActs));
  if (cfg.learn_beta) p.add("beta", Matrix(1, 1, cfg.beta));
  return model;
}

nlohmann::json perceiver_to_json(const PerceiverModel& model) {
  return {{"kind", "perceiver"}, {"config", to_json(model.config)}, {"params", params_to_json(model.params)}};
}

PerceiverModel perceiver_from_json(const nlohmann::json& j) {
  if (!j.contains("kind") || j.at("kind") != "perceiver") throw DataError("not a perceiver checkpoint");
  PerceiverModel model = init_perceiver(perceiver_config_from_json(j.at("config")), 0);
  load_params_into(model.params, j.at("params"));
  return model;
}

// ---- differentiable blocks

Var fuse(ParamBinder& bind, Var h_acoustic, Var h_semantic) {
  Var logits = ad::add_row(ad::add(ad::matmul(h_acoustic, bind("gate.W_b")), ad::matmul(h_semantic, bind("gate.W_e"))),
                           bind("gate.b"));
  Var lambda = ad::sigmoid(logits);
  // (1 - lambda) h_B + lambda h_E  ==  h_B + lambda (h_E - h_B)
  return ad::add(h_acoustic, ad::mul(lambda, ad::sub(h_semantic, h_acoustic)));
}

Var shared_latent(ParamBinder& bind, Var fused) {
  return ad::tanh(ad::affine(fused, bind("shared.W"), bind("shared.b")));
}

Var decoder_stack(ParamBinder& bind, const PerceiverConfig& cfg, std::string_view prefix, Var latents) {
  const std::size_t n = latents.rows();
  const std::size_t dh = cfg.hidden / cfg.heads;
  Var bias = window_bias(bind, cfg, n);
  Var x = latents;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    Var q = ad::matmul(x, bind(layer_name(prefix, l, "Wq")));
    Var k = ad::matmul(x, bind(layer_name(prefix, l, "Wk")));
    Var v = ad::matmul(x, bind(layer_name(prefix, l, "Wv")));
    Var attended;
    if (cfg.heads == 1) {
      attended = ad::masked_attention(q, k, v, bias);
    } else {
      std::vector<Var> heads;
      heads.reserve(cfg.heads);
      for (std::size_t hd = 0; hd < cfg.heads; ++hd) {
        heads.push_back(ad::masked_attention(ad::cols(q, hd * dh, dh), ad::cols(k, hd * dh, dh),
                                             ad::cols(v, hd * dh, dh), bias));
      }
      attended = ad::concat_cols(heads);
    }
    x = ad::add(x, ad::matmul(attended, bind(layer_name(prefix, l, "Wo"))));
    Var ff = ad::tanh(ad::affine(x, bind(layer_name(prefix, l, "W1")), bind(layer_name(prefix, l, "b1"))));
    x = ad::add(x, ad::affine(ff, bind(layer_name(prefix, l, "W2")), bind(layer_name(prefix, l, "b2"))));
  }
  return x;
}

Var film(ParamBinder& bind, Var z_high, Var z_low) {
  const std::size_t h = z_low.cols();
  Var ge = ad::affine(z_high, bind("film.W"), bind("film.b"));
  return ad::add(ad::mul(ad::cols(ge, 0, h), z_low), ad::cols(ge, h, h));
}

PerceiverLogits perceiver_heads(ParamBinder& bind, const PerceiverConfig& cfg, Var latents) {
  if (latents.rows() == 0) throw DataError("decoder window is empty");
  if (latents.rows() > cfg.context) throw ShapeError("decoder window exceeds context length");
  const std::size_t last = latents.rows() - 1;
  Var z_high = ad::rows(decoder_stack(bind, cfg, "high", latents), last, 1);
  Var z_low = ad::rows(decoder_stack(bind, cfg, "low", latents), last, 1);
  Var high = ad::affine(z_high, bind("head_high.W"), bind("head_high.b"));
  Var low = ad::affine(film(bind, z_high, z_low), bind("head_low.W"), bind("head_low.b"));
  return {high, low};
}

PerceiverLogits perceiver_forward(ParamBinder& bind, const PerceiverConfig& cfg, const Matrix& acoustic,
                                  const Matrix& semantic) {
  if (!acoustic.same_shape(semantic)) throw ShapeError("acoustic and semantic windows differ in shape");
  check_dims(cfg, acoustic.cols(), semantic.cols());
  Tape& tape = bind.tape();
  Var latents = shared_latent(bind, fuse(bind, tape.frozen(acoustic), tape.frozen(semantic)));
  return perceiver_heads(bind, cfg, latents);
}

// ---- value-level operations

GateResult gated_fuse(std::span<const double> h_acoustic, std::span<const double> h_semantic,
                      const PerceiverModel& model) {
  check_dims(model.config, h_acoustic.size(), h_semantic.size());
  const Matrix hb = Matrix::row_vector(h_acoustic);
  const Matrix he = Matrix::row_vector(h_semantic);
  Matrix logits = matmul(hb, model.params.at("gate.W_b").value);
  const Matrix le = matmul(he, model.params.at("gate.W_e").value);
  const Matrix& b = model.params.at("gate.b").value;
  GateResult out;
  out.gate.resize(hb.cols());
  out.fused.resize(hb.cols());
  for (std::size_t i = 0; i < hb.cols(); ++i) {
    const double lam = sigmoid(logits[i] + le[i] + b[i]);
    out.gate[i] = lam;
    out.fused[i] = (1.0 - lam) * hb[i] + lam * he[i];
  }
  return out;
}

void PerceiverState::push(std::int64_t tick, std::vector<double> latent) {
  if (last_tick_ && tick <= *last_tick_) {
    throw DataError("perceiver state received tick " + std::to_string(tick) + " after " + std::to_string(*last_tick_));
  }
  if (!latents_.empty() && latent.size() != latents_.front().size()) throw ShapeError("latent width changed");
  latents_.push_back(std::move(latent));
  while (latents_.size() > capacity_) latents_.pop_front();
  last_tick_ = tick;
}

Matrix PerceiverState::latents() const {
  if (latents_.empty()) return {};
  Matrix out(latents_.size(), latents_.front().size());
  for (std::size_t r = 0; r < latents_.size(); ++r) std::copy(latents_[r].begin(), latents_[r].end(), out.row(r).begin());
  return out;
}

DecoderOutput decode_states(const PerceiverState& state, const PerceiverModel& model) {
  if (state.empty()) throw DataError("decode_states needs at least one latent");
  Tape tape;
  ParamBinder bind(tape, model.params);
  const Matrix window = state.latents();
  if (window.cols() != model.config.hidden) throw ShapeError("latent width does not match the model");
  Var latents = tape.frozen(window);
  const std::size_t last = window.rows() - 1;
  Var zh = ad::rows(decoder_stack(bind, model.config, "high", latents), last, 1);
  Var zl = ad::rows(decoder_stack(bind, model.config, "low", latents), last, 1);
  return {zh.value().storage(), zl.value().storage()};
}

std::vector<double> film_modulate(std::span<const double> z_high, std::span<const double> z_low,
                                  const PerceiverModel& model) {
  const std::size_t h = model.config.hidden;
  if (z_high.size() != h || z_low.size() != h) throw ShapeError("FiLM inputs must have the hidden width");
  const Matrix ge = affine(Matrix::row_vector(z_high), model.params.at("film.W").value, model.params.at("film.b").value);
  std::vector<double> out(h);
  for (std::size_t i = 0; i < h; ++i) out[i] = ge[i] * z_low[i] + ge[h + i];
  return out;
}

SpeechActPair predict_step(const SecondRecord& record, PerceiverState& state, const PerceiverModel& model) {
  const PerceiverConfig& cfg = model.config;
  check_dims(cfg, record.emb_acoustic.size(), record.emb_semantic.size());
  if (state.capacity() != cfg.context) throw ConfigError("perceiver state capacity must equal the context length");
  if (state.last_tick() && record.t <= *state.last_tick()) {
    throw DataError("record tick " + std::to_string(record.t) + " is not after " + std::to_string(*state.last_tick()));
  }

  Tape tape;
  ParamBinder bind(tape, model.params);
  Var z = shared_latent(bind, fuse(bind, tape.constant(Matrix::row_vector(record.emb_acoustic)),
                                   tape.constant(Matrix::row_vector(record.emb_semantic))));
  state.push(record.t, z.value().storage());

  const Matrix window = state.latents();
  PerceiverLogits logits = perceiver_heads(bind, cfg, tape.frozen(window));
  return SpeechActPair::from_distributions(to_distribution(logits.high.value()), to_distribution(logits.low.value()));
}

// ---- training

std::vector<PerceiverSample> make_perceiver_samples(std::span<const SecondRecord> dialogue, std::size_t context) {
  if (context == 0) throw ConfigError("context length K must be at least 1");
  std::vector<PerceiverSample> out;
  for (std::size_t i = 0; i < dialogue.size(); ++i) {
    const SecondRecord& r = dialogue[i];
    if (r.padded) continue;
    if (!r.gold) throw DataError("record " + r.audio_id + "@" + std::to_string(r.t) + " has no gold labels");
    const std::size_t begin = i + 1 >= context ? i + 1 - context : 0;
    const std::size_t n = i + 1 - begin;
    const std::size_t d = r.emb_acoustic.size();
    PerceiverSample s{Matrix(n, d), Matrix(n, r.emb_semantic.size()), r.gold->high, r.gold->low};
    for (std::size_t k = 0; k < n; ++k) {
      const SecondRecord& w = dialogue[begin + k];
      if (w.emb_acoustic.size() != d || w.emb_semantic.size() != s.semantic.cols()) {
        throw ShapeError("embedding dims change inside " + r.audio_id);
      }
      std::copy(w.emb_acoustic.begin(), w.emb_acoustic.end(), s.acoustic.row(k).begin());
      std::copy(w.emb_semantic.begin(), w.emb_semantic.end(), s.semantic.row(k).begin());
    }
    out.push_back(std::move(s));
  }
  return out;
}

Var perceiver_loss(ParamBinder& bind, const PerceiverConfig& cfg, std::span<const PerceiverSample> batch) {
  if (batch.empty()) throw DataError("empty perceiver batch");
  std::vector<Var> terms;
  terms.reserve(2 * batch.size());
  for (const auto& s : batch) {
    PerceiverLogits o = perceiver_forward(bind, cfg, s.acoustic, s.semantic);
    terms.push_back(ad::cross_entropy(o.high, index_of(s.high)));
    terms.push_back(ad::cross_entropy(o.low, index_of(s.low)));
  }
  return ad::sum(ad::concat_rows(terms));
}

double perceiver_loss(std::span<const PerceiverSample> batch, const PerceiverModel& model) {
  Tape tape;
  ParamBinder bind(tape, model.params);
  return perceiver_loss(bind, model.config, batch).scalar();
}

double PerceiverTrainer::train_step(std::span<const PerceiverSample> batch) {
  model_.params.zero_grad();
  Tape tape;
  ParamBinder bind(tape, model_.params);
  Var total = perceiver_loss(bind, model_.config, batch);
  const double loss = total.scalar();
  if (!std::isfinite(loss)) {
    throw NumericError("non-finite perceiver loss at step " + std::to_string(optimizer_.steps_taken()));
  }
  tape.backward(ad::scale(total, 1.0 / static_cast<double>(batch.size())));
  optimizer_.step(model_.params);
  if (model_.config.learn_beta) {
    double& beta = model_.params.at("beta").value[0];
    beta = std::max(beta, 0.0);
  }
  return loss;
}

std::vector<double> train_perceiver(PerceiverModel& model, std::span<const PerceiverSample> samples,
                                    const TrainOptions& options,
                                    const std::function<void(std::size_t, double)>& on_epoch) {
  if (samples.empty()) throw DataError("no perceiver training samples");
  if (options.batch_size == 0) throw ConfigError("batch size must be positive");
  const std::size_t steps_per_epoch = (samples.size() + options.batch_size - 1) / options.batch_size;
  OptimizerConfig opt = options.optimizer;
  if (opt.total_steps == 0) opt.total_steps = steps_per_epoch * options.epochs;
  PerceiverTrainer trainer(model, opt);

  std::vector<std::size_t> order(samples.size());
  std::vector<PerceiverSample> batch;
  std::vector<double> history;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(options.seed, "perceiver-shuffle", epoch));
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += options.batch_size) {
      const std::size_t end = std::min(begin + options.batch_size, order.size());
      batch.clear();
      for (std::size_t i = begin; i < end; ++i) batch.push_back(samples[order[i]]);
      total += trainer.train_step(batch);
    }
    const double mean = total / static_cast<double>(samples.size());
    history.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean);
  }
  return history;
}

}  // namespace convgot
