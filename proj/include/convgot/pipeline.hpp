#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "convgot/config.hpp"
#include "convgot/got_graph.hpp"
#include "convgot/perceiver.hpp"
#include "convgot/rationale.hpp"
#include "convgot/selector.hpp"

namespace convgot {

struct StageTimings {
  double predict_ms = 0.0;
  double graph_ms = 0.0;
  double select_ms = 0.0;
  double rationale_ms = 0.0;  // condition + linearize + generate
  double total_ms = 0.0;      // own clock around the whole tick
};

struct TickOutput {
  std::string audio_id;
  std::int64_t t = 0;
  SpeechActPair labels;
  std::vector<std::int64_t> candidates;
  SelectionResult selection;
  std::string chain;
  GenerationResult rationale;
  StageTimings timings;
};

nlohmann::json prediction_line(const TickOutput& out);
nlohmann::json selection_line(const TickOutput& out);
nlohmann::json rationale_line(const TickOutput& out);
nlohmann::json timing_line(const TickOutput& out);

struct EngineModels {
  PerceiverModel perceiver;
  SelectorModel selector;
  std::shared_ptr<RationaleBackend> backend;  // remote backends fall back to the template
};

// Per-dialogue causal state: one tick in, one output out. Reads nothing past the given record.
class StreamRunner {
 public:
  StreamRunner(const EngineConfig& cfg, const EngineModels& models);

  // nullopt for padded records, which advance the state without emitting.
  std::optional<TickOutput> step(const SecondRecord& record);
  std::optional<std::int64_t> last_tick() const { return last_t_; }
  const GotGraph& graph() const { return graph_; }

 private:
  const EngineConfig& cfg_;
  const EngineModels& models_;
  PerceiverState state_;
  GotGraph graph_;
  TemplateBackend fallback_;
  std::optional<std::int64_t> last_t_;
};

struct RunLog {
  std::vector<std::string> skipped;  // lenient mode only
};

// Runs every dialogue in first-appearance order. Strict mode aborts on the first bad record;
// lenient mode logs and skips it, and pads tick gaps with silent placeholder records.
std::vector<TickOutput> run_stream(const EngineConfig& cfg, const EngineModels& models,
                                   std::span<const SecondRecord> records,
                                   const std::function<void(const TickOutput&)>& sink = {}, RunLog* log = nullptr);

// Silent record used to fill a gap in lenient mode.
SecondRecord placeholder_record(const std::string& audio_id, std::int64_t t, const PerceiverConfig& cfg);

}  // namespace convgot
