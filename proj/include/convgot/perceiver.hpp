#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "convgot/autodiff.hpp"
#include "convgot/optimizer.hpp"
#include "convgot/speech_act.hpp"
#include "convgot/stream.hpp"

namespace convgot {

struct PerceiverConfig {
  std::size_t acoustic_dim = 16;
  std::size_t semantic_dim = 16;
  std::size_t hidden = 32;
  std::size_t ffn_hidden = 64;
  std::size_t layers = 1;
  std::size_t heads = 1;
  std::size_t context = 8;  // K: seconds of fused latents visible to the decoders
  double beta = 0.1;        // temporal-neighborhood bias slope
  bool learn_beta = false;
};

void validate(const PerceiverConfig& cfg);
nlohmann::json to_json(const PerceiverConfig& cfg);
PerceiverConfig perceiver_config_from_json(const nlohmann::json& j);

struct PerceiverModel {
  PerceiverConfig config;
  ParamSet params;
};

// Parameter names: gate.{W_b,W_e,b}, shared.{W,b}, {high,low}.l<k>.{Wq,Wk,Wv,Wo,W1,b1,W2,b2},
// film.{W,b}, head_high.{W,b}, head_low.{W,b}, and beta when learn_beta is set.
PerceiverModel init_perceiver(const PerceiverConfig& cfg, std::uint64_t seed);

nlohmann::json perceiver_to_json(const PerceiverModel& model);
PerceiverModel perceiver_from_json(const nlohmann::json& j);

// ---- value-level operations

struct GateResult {
  std::vector<double> gate;   // lambda
  std::vector<double> fused;  // e
};
// lambda = sigmoid(W_b h_B + W_e h_E + b), e = (1 - lambda) * h_B + lambda * h_E
GateResult gated_fuse(std::span<const double> h_acoustic, std::span<const double> h_semantic,
                      const PerceiverModel& model);

// Ring buffer of fused latents for the last K seconds of one stream.
class PerceiverState {
 public:
  explicit PerceiverState(std::size_t capacity = 8) : capacity_(capacity) {}

  void push(std::int64_t tick, std::vector<double> latent);
  std::size_t size() const { return latents_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return latents_.empty(); }
  std::optional<std::int64_t> last_tick() const { return last_tick_; }
  Matrix latents() const;  // rows ordered oldest -> newest

 private:
  std::size_t capacity_;
  std::deque<std::vector<double>> latents_;
  std::optional<std::int64_t> last_tick_;
};

struct DecoderOutput {
  std::vector<double> z_high;
  std::vector<double> z_low;
};
DecoderOutput decode_states(const PerceiverState& state, const PerceiverModel& model);

// gamma * z_L + eta, with (gamma, eta) = g_FiLM(z_H)
std::vector<double> film_modulate(std::span<const double> z_high, std::span<const double> z_low,
                                  const PerceiverModel& model);

// Fuses the record, advances the state by one tick and returns both distributions.
SpeechActPair predict_step(const SecondRecord& record, PerceiverState& state, const PerceiverModel& model);

// ---- differentiable building blocks

Var fuse(ParamBinder& bind, Var h_acoustic, Var h_semantic);
Var shared_latent(ParamBinder& bind, Var fused);
Var decoder_stack(ParamBinder& bind, const PerceiverConfig& cfg, std::string_view prefix, Var latents);
Var film(ParamBinder& bind, Var z_high, Var z_low);

struct PerceiverLogits {
  Var high;  // 1 x 4
  Var low;   // 1 x 4
};
// Heads evaluated at the last row of a latent window.
PerceiverLogits perceiver_heads(ParamBinder& bind, const PerceiverConfig& cfg, Var latents);
// Full forward over a window of raw embeddings (rows oldest -> newest, at most K rows).
PerceiverLogits perceiver_forward(ParamBinder& bind, const PerceiverConfig& cfg, const Matrix& acoustic,
                                  const Matrix& semantic);

// ---- training

// One supervised tick with its causal context window.
struct PerceiverSample {
  Matrix acoustic;
  Matrix semantic;
  HighAct high = HighAct::Constatives;
  LowAct low = LowAct::Continuation;
};

// Builds one sample per non-padded tick; every record must carry gold labels.
std::vector<PerceiverSample> make_perceiver_samples(std::span<const SecondRecord> dialogue, std::size_t context);

// Sum over samples of CE(y_H, o_H) + CE(y_L, o_L).
double perceiver_loss(std::span<const PerceiverSample> batch, const PerceiverModel& model);
Var perceiver_loss(ParamBinder& bind, const PerceiverConfig& cfg, std::span<const PerceiverSample> batch);

struct TrainOptions {
  std::size_t epochs = 15;
  std::size_t batch_size = 8;
  OptimizerConfig optimizer;
  std::uint64_t seed = 42;
};

class PerceiverTrainer {
 public:
  PerceiverTrainer(PerceiverModel& model, const OptimizerConfig& opt) : model_(model), optimizer_(opt) {}

  // One AdamW step on the batch-mean loss. Returns the summed batch loss.
  double train_step(std::span<const PerceiverSample> batch);
  const AdamW& optimizer() const { return optimizer_; }

 private:
  PerceiverModel& model_;
  AdamW optimizer_;
};

// Returns per-epoch mean loss per sample. total_steps is derived from epochs and batch size.
std::vector<double> train_perceiver(PerceiverModel& model, std::span<const PerceiverSample> samples,
                                    const TrainOptions& options,
                                    const std::function<void(std::size_t epoch, double mean_loss)>& on_epoch = {});

}  // namespace convgot
