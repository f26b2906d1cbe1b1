#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "convgot/autodiff.hpp"
#include "convgot/got_graph.hpp"
#include "convgot/optimizer.hpp"

namespace convgot {

struct SelectorConfig {
  std::size_t semantic_dim = 16;
  std::size_t hidden = 32;
  std::size_t ffn_hidden = 64;
  std::size_t hash_buckets = 1024;
  double temperature = 1.0;
  double lambda_count = 0.01;
  double lambda_rank = 0.1;
};

void validate(const SelectorConfig& cfg);
nlohmann::json to_json(const SelectorConfig& cfg);
SelectorConfig selector_config_from_json(const nlohmann::json& j);

// Per-node features: is_query, speaker_match, log1p(gap), log1p(length), text_sim,
// high one-hot (4), low one-hot (4), semantic embedding.
inline constexpr std::size_t kSelectorScalarFeatures = 13;
// Relational features on query -> candidate edges: log1p(gap), speaker_match, text_sim.
inline constexpr std::size_t kRelationalFeatures = 3;

std::size_t selector_feature_dim(const SelectorConfig& cfg);

struct SelectorModel {
  SelectorConfig config;
  ParamSet params;
};
SelectorModel init_selector(const SelectorConfig& cfg, std::uint64_t seed);
nlohmann::json selector_to_json(const SelectorModel& model);
SelectorModel selector_from_json(const nlohmann::json& j);

// Row 0 is the query; rows 1..n are candidates in view order.
struct NodeFeatures {
  Matrix x;    // (1 + n) x feature_dim
  Matrix rel;  // (1 + n) x kRelationalFeatures, row 0 all zero
  std::vector<std::int64_t> ids;     // candidate sentence ids
  std::vector<std::int64_t> starts;  // candidate start ticks
  std::size_t candidates() const { return ids.size(); }
};
NodeFeatures featurize(const CandidateView& view, const SelectorConfig& cfg);

struct ScoreResult {
  std::vector<double> scores;
  double tau = 0.0;
};
ScoreResult score_candidates(const NodeFeatures& features, const SelectorModel& model);

struct ScoreVars {
  Var scores;  // 1 x n; invalid when n == 0
  Var tau;     // 1 x 1
};
ScoreVars selector_forward(ParamBinder& bind, const SelectorConfig& cfg, const NodeFeatures& features);

// (s - tau) / T
std::vector<double> threshold_align(std::span<const double> scores, double tau, double temperature = 1.0);

struct SelectorLoss {
  double total = 0.0;
  double wbce = 0.0;
  double count = 0.0;
  double rank = 0.0;
};
SelectorLoss selector_loss(std::span<const double> logits, std::span<const double> targets,
                           std::span<const double> mask, double alpha, double lambda_count = 0.01,
                           double lambda_rank = 0.1);
SelectorLoss selector_loss(Var logits, std::span<const double> targets, std::span<const double> mask, double alpha,
                           double lambda_count, double lambda_rank, Var* total);

// Indices with s > tau ordered by start tick (then index).
std::vector<std::size_t> select_anchors(std::span<const double> scores, double tau, std::span<const std::int64_t> starts);

struct SelectionResult {
  std::int64_t t = 0;  // query tick the selection was computed for
  std::vector<double> scores;
  double tau = 0.0;
  std::vector<std::int64_t> anchors;  // sentence ids, far -> near
  std::vector<double> mask;
};
SelectionResult select(const CandidateView& view, const SelectorModel& model);

// ---- training

struct SelectorSample {
  NodeFeatures features;
  std::vector<double> targets;  // multi-hot over candidates
};

// Replays the graph with gold labels and collects one sample per tick with candidates.
std::vector<SelectorSample> make_selector_samples(std::span<const SecondRecord> dialogue, const SelectorConfig& cfg,
                                                  const GraphConfig& graph_cfg);

// N_neg / N_pos over every candidate slot in the split; 1 when there are no positives.
double positive_weight(std::span<const SelectorSample> samples);

Var selector_sample_loss(ParamBinder& bind, const SelectorConfig& cfg, const SelectorSample& sample, double alpha,
                         SelectorLoss* parts = nullptr);

struct SelectorTrainOptions {
  std::size_t epochs = 10;
  std::size_t batch_size = 8;
  OptimizerConfig optimizer;
  std::uint64_t seed = 42;
};

class SelectorTrainer {
 public:
  SelectorTrainer(SelectorModel& model, const OptimizerConfig& opt, double alpha)
      : model_(model), optimizer_(opt), alpha_(alpha) {}
  // One step on the batch-mean loss; returns batch-summed components.
  SelectorLoss train_step(std::span<const SelectorSample* const> batch);
  double alpha() const { return alpha_; }

 private:
  SelectorModel& model_;
  AdamW optimizer_;
  double alpha_;
};

// Returns per-epoch mean total loss per sample.
std::vector<double> train_selector(SelectorModel& model, std::span<const SelectorSample> samples,
                                   const SelectorTrainOptions& options,
                                   const std::function<void(std::size_t, const SelectorLoss&)>& on_epoch = {});

}  // namespace convgot
