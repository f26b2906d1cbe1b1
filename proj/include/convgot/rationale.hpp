#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "convgot/autodiff.hpp"
#include "convgot/got_graph.hpp"
#include "convgot/optimizer.hpp"
#include "convgot/selector.hpp"
#include "convgot/text.hpp"

namespace convgot {

struct DecodingCondition {
  std::int64_t t = 0;
  std::vector<SentenceNode> anchors;   // selected evidence, far -> near
  std::vector<SentenceNode> recent;    // last r committed sentences not already anchors
  std::vector<SecondNode> pending;     // unfolded seconds of the query's sentence, before t
  SecondNode query;
};

// Anchors take precedence over recent sentences. Throws when the selection is for another tick.
DecodingCondition build_condition(const GotGraph& graph, const SelectionResult& selection, std::size_t recent_count = 3);

enum class SegmentTag { Anchor, Sentence, Second, Query };
std::string_view to_string(SegmentTag tag);

struct ChainSegment {
  SegmentTag tag = SegmentTag::Query;
  int speaker = 0;
  std::int64_t start = 0;
  std::int64_t end = 0;  // exclusive; start + 1 for seconds
  HighAct high = HighAct::Constatives;
  LowAct low = LowAct::Continuation;
  std::string text;

  friend bool operator==(const ChainSegment&, const ChainSegment&) = default;
};

struct LinearizedChain {
  std::vector<ChainSegment> segments;  // ascending time, query last
  std::string text;
};

// "[TAG] spk=A t=12 high=... low=... words" per segment; sentences use t=start-end (end exclusive).
LinearizedChain linearize(const DecodingCondition& cond);
std::string format_segment(const ChainSegment& seg);
LinearizedChain parse_chain(std::string_view text);

std::string speaker_tag(int speaker);  // 0 -> A, 1 -> B, ...

// ---- backends

struct GenerationResult {
  std::string text;
  double latency_ms = 0.0;
  std::string backend;
};

class RationaleBackend {
 public:
  virtual ~RationaleBackend() = default;
  virtual std::string name() const = 0;
  virtual std::string generate(const LinearizedChain& chain) = 0;
};

// Times one call of the backend with a steady clock.
GenerationResult generate_rationale(const LinearizedChain& chain, RationaleBackend& backend);

class TemplateBackend final : public RationaleBackend {
 public:
  std::string name() const override { return "template"; }
  std::string generate(const LinearizedChain& chain) override;
};

// Most frequent word of a segment text; ties go to the earliest.
std::string topic_word(std::string_view text);

struct Seq2SeqConfig {
  std::size_t d_model = 32;
  std::size_t ffn_hidden = 64;
  std::size_t max_source = 160;  // keeps the last tokens of the chain, which hold the query
  std::size_t max_target = 96;  // including <eos>
};

struct Seq2SeqModel {
  Seq2SeqConfig config;
  Vocabulary vocab;
  ParamSet params;
};

Seq2SeqModel init_seq2seq(const Seq2SeqConfig& cfg, Vocabulary vocab, std::uint64_t seed);
nlohmann::json seq2seq_to_json(const Seq2SeqModel& model);
Seq2SeqModel seq2seq_from_json(const nlohmann::json& j);

// Source ids for a chain (unknown tokens map to <unk>).
std::vector<std::size_t> encode_source(const Seq2SeqModel& model, const LinearizedChain& chain);
// Rationale tokens plus <eos>; unknown tokens are an error.
std::vector<std::size_t> encode_target(const Seq2SeqModel& model, std::string_view rationale);

// -sum_n log p(y_n | y_<n, source); target ids are scored exactly as given.
Var decoder_nll(ParamBinder& bind, const Seq2SeqModel& model, std::span<const std::size_t> source,
                std::span<const std::size_t> target);
double decoder_nll(const Seq2SeqModel& model, std::span<const std::size_t> source, std::span<const std::size_t> target);
double decoder_nll(const Seq2SeqModel& model, const LinearizedChain& chain, std::string_view rationale);

std::vector<std::size_t> greedy_decode(const Seq2SeqModel& model, std::span<const std::size_t> source);

class TrainableBackend final : public RationaleBackend {
 public:
  explicit TrainableBackend(std::shared_ptr<const Seq2SeqModel> model) : model_(std::move(model)) {}
  std::string name() const override { return "trainable"; }
  std::string generate(const LinearizedChain& chain) override;

 private:
  std::shared_ptr<const Seq2SeqModel> model_;
};

struct Seq2SeqPair {
  std::vector<std::size_t> source;
  std::vector<std::size_t> target;
};

struct Seq2SeqTrainOptions {
  std::size_t epochs = 10;
  std::size_t batch_size = 8;
  OptimizerConfig optimizer;
  std::uint64_t seed = 42;
};

// Returns per-epoch mean NLL per pair.
std::vector<double> train_seq2seq(Seq2SeqModel& model, std::span<const Seq2SeqPair> pairs,
                                  const Seq2SeqTrainOptions& options,
                                  const std::function<void(std::size_t, double)>& on_epoch = {});

// ---- remote

struct RemoteConfig {
  std::string endpoint;  // http://host:port/path
  int timeout_ms = 2000;
  int max_tokens = 64;
};

// GEN_ENDPOINT / GEN_TIMEOUT_MS override the given values when set.
RemoteConfig remote_config_from_env(RemoteConfig base = {});

class RemoteError : public std::runtime_error {
 public:
  enum class Kind { Config, Connection, Timeout, Status, Protocol };
  RemoteError(Kind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

class RemoteBackend final : public RationaleBackend {
 public:
  explicit RemoteBackend(RemoteConfig cfg);
  std::string name() const override { return "remote"; }
  // POSTs {"chain", "max_tokens"} and reads {"text"}; throws RemoteError.
  std::string generate(const LinearizedChain& chain) override;

 private:
  RemoteConfig cfg_;
  std::string host_;
  std::string path_;
};

// Tries the primary backend; on RemoteError uses the fallback and tags the backend name.
GenerationResult generate_with_fallback(const LinearizedChain& chain, RationaleBackend& primary,
                                        RationaleBackend& fallback);

}  // namespace convgot
