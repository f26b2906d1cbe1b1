#include "convgot/pipeline.hpp"

#include <chrono>

#include "convgot/errors.hpp"
#include "convgot/record_io.hpp"

namespace convgot {

namespace {

using Clock = std::chrono::steady_clock;

double ms_between(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double, std::milli>(b - a).count();
}

}  // namespace

nlohmann::json prediction_line(const TickOutput& o) {
  return {{"audio_id", o.audio_id},
          {"t", o.t},
          {"high", to_string(o.labels.high)},
          {"low", to_string(o.labels.low)},
          {"p_high", o.labels.p_high},
          {"p_low", o.labels.p_low}};
}

nlohmann::json selection_line(const TickOutput& o) {
  return {{"audio_id", o.audio_id},
          {"t", o.t},
          {"candidates", o.candidates},
          {"scores", o.selection.scores},
          {"tau", o.selection.tau},
          {"anchors", o.selection.anchors}};
}

nlohmann::json rationale_line(const TickOutput& o) {
  return {{"audio_id", o.audio_id},
          {"t", o.t},
          {"chain", o.chain},
          {"text", o.rationale.text},
          {"backend", o.rationale.backend}};
}

nlohmann::json timing_line(const TickOutput& o) {
  return {{"audio_id", o.audio_id},
          {"t", o.t},
          {"predict_ms", o.timings.predict_ms},
          {"graph_ms", o.timings.graph_ms},
          {"select_ms", o.timings.select_ms},
          {"rationale_ms", o.timings.rationale_ms},
          {"total_ms", o.timings.total_ms}};
}

StreamRunner::StreamRunner(const EngineConfig& cfg, const EngineModels& models)
    : cfg_(cfg), models_(models), state_(models.perceiver.config.context), graph_(cfg.graph()) {
  if (!models_.backend) throw ConfigError("no rationale backend");
}

std::optional<TickOutput> StreamRunner::step(const SecondRecord& record) {
  const std::int64_t expected = last_t_ ? *last_t_ + 1 : 0;
  if (record.t != expected) {
    throw DataError("record " + record.audio_id + "@" + std::to_string(record.t) + " out of sequence, expected tick " +
                    std::to_string(expected));
  }
  const auto begin = Clock::now();

  auto t0 = Clock::now();
  const SpeechActPair labels = predict_step(record, state_, models_.perceiver);
  auto t1 = Clock::now();
  graph_.observe(record, labels);
  last_t_ = record.t;
  auto t2 = Clock::now();
  if (record.padded) return std::nullopt;

  TickOutput out;
  out.audio_id = record.audio_id;
  out.t = record.t;
  out.labels = labels;
  out.timings.predict_ms = ms_between(t0, t1);
  out.timings.graph_ms = ms_between(t1, t2);

  auto t3 = Clock::now();
  const CandidateView view = graph_.candidate_view(record.t);
  out.selection = select(view, models_.selector);
  auto t4 = Clock::now();
  out.timings.select_ms = ms_between(t3, t4);
  for (const auto* c : view.candidates) out.candidates.push_back(c->id);

  auto t5 = Clock::now();
  const LinearizedChain chain = linearize(build_condition(graph_, out.selection, cfg_.recent));
  out.rationale = cfg_.backend == BackendKind::Remote ? generate_with_fallback(chain, *models_.backend, fallback_)
                                                      : generate_rationale(chain, *models_.backend);
  auto t6 = Clock::now();
  out.timings.rationale_ms = ms_between(t5, t6);
  out.chain = chain.text;

  out.timings.total_ms = ms_between(begin, Clock::now());
  return out;
}

SecondRecord placeholder_record(const std::string& audio_id, std::int64_t t, const PerceiverConfig& cfg) {
  SecondRecord r;
  r.audio_id = audio_id;
  r.t = t;
  r.emb_acoustic.assign(cfg.acoustic_dim, 0.0);
  r.emb_semantic.assign(cfg.semantic_dim, 0.0);
  r.padded = true;
  return r;
}

std::vector<TickOutput> run_stream(const EngineConfig& cfg, const EngineModels& models,
                                   std::span<const SecondRecord> records,
                                   const std::function<void(const TickOutput&)>& sink, RunLog* log) {
  std::vector<TickOutput> outputs;
  const PerceiverConfig& pc = models.perceiver.config;
  for (const Dialogue& d : group_dialogues(records)) {
    StreamRunner runner(cfg, models);
    auto emit = [&](std::optional<TickOutput> out) {
      if (!out) return;
      if (sink) sink(*out);
      outputs.push_back(std::move(*out));
    };
    for (const SecondRecord& r : d.records) {
      if (cfg.strict) {
        emit(runner.step(r));
        continue;
      }
      const std::int64_t next = runner.last_tick() ? *runner.last_tick() + 1 : 0;
      std::string problem;
      if (r.t < next) problem = "tick not after the previous one";
      else if (r.emb_acoustic.size() != pc.acoustic_dim || r.emb_semantic.size() != pc.semantic_dim)
        problem = "embedding dimension mismatch";
      if (!problem.empty()) {
        if (log) log->skipped.push_back(r.audio_id + "@" + std::to_string(r.t) + ": " + problem);
        continue;
      }
      for (std::int64_t t = next; t < r.t; ++t) runner.step(placeholder_record(r.audio_id, t, pc));
      emit(runner.step(r));
    }
  }
  return outputs;
}

}  // namespace convgot
