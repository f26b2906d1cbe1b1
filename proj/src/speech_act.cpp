#include "convgot/speech_act.hpp"

#include <cmath>

namespace convgot {
namespace {

constexpr std::array<std::string_view, kNumActs> kHighNames{"Constatives", "Directives", "Commissives",
                                                             "Acknowledgments"};
constexpr std::array<std::string_view, kNumActs> kLowNames{"Continuation", "TurnTaking", "Interruption",
                                                            "Backchannel"};

}  // namespace

std::string_view to_string(HighAct act) { return kHighNames[index_of(act)]; }
std::string_view to_string(LowAct act) { return kLowNames[index_of(act)]; }

std::optional<HighAct> parse_high_act(std::string_view name) {
  for (std::size_t i = 0; i < kNumActs; ++i) {
    if (kHighNames[i] == name) return static_cast<HighAct>(i);
  }
  return std::nullopt;
}

std::optional<LowAct> parse_low_act(std::string_view name) {
  for (std::size_t i = 0; i < kNumActs; ++i) {
    if (kLowNames[i] == name) return static_cast<LowAct>(i);
  }
  // Accept the hyphenated spelling used in annotation tables.
  if (name == "Turn-taking") return LowAct::TurnTaking;
  return std::nullopt;
}

std::size_t argmax(const ActDistribution& p) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < p.size(); ++i) {
    if (p[i] > p[best]) best = i;
  }
  return best;
}

SpeechActPair SpeechActPair::from_labels(HighAct high, LowAct low) {
  SpeechActPair pair;
  pair.high = high;
  pair.low = low;
  pair.p_high = {0.0, 0.0, 0.0, 0.0};
  pair.p_low = {0.0, 0.0, 0.0, 0.0};
  pair.p_high[index_of(high)] = 1.0;
  pair.p_low[index_of(low)] = 1.0;
  return pair;
}

SpeechActPair SpeechActPair::from_distributions(const ActDistribution& p_high, const ActDistribution& p_low) {
  SpeechActPair pair;
  pair.p_high = p_high;
  pair.p_low = p_low;
  pair.high = static_cast<HighAct>(argmax(p_high));
  pair.low = static_cast<LowAct>(argmax(p_low));
  return pair;
}

bool is_valid(const SpeechActPair& pair, double tol) {
  auto simplex = [tol](const ActDistribution& p) {
    double sum = 0.0;
    for (double v : p) {
      if (!(v >= 0.0) || !std::isfinite(v)) return false;
      sum += v;
    }
    return std::abs(sum - 1.0) <= tol;
  };
  if (!simplex(pair.p_high) || !simplex(pair.p_low)) return false;
  const auto& ph = pair.p_high;
  const auto& pl = pair.p_low;
  return ph[index_of(pair.high)] == ph[argmax(ph)] && pl[index_of(pair.low)] == pl[argmax(pl)];
}

}  // namespace convgot
