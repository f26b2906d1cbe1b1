#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string_view>

namespace convgot {

inline constexpr std::size_t kNumActs = 4;

// Communicative intent.
enum class HighAct : int { Constatives = 0, Directives = 1, Commissives = 2, Acknowledgments = 3 };

// Interaction mechanics, defined by speaker / turn-ownership changes.
enum class LowAct : int { Continuation = 0, TurnTaking = 1, Interruption = 2, Backchannel = 3 };

using ActDistribution = std::array<double, kNumActs>;

std::string_view to_string(HighAct act);
std::string_view to_string(LowAct act);
std::optional<HighAct> parse_high_act(std::string_view name);
std::optional<LowAct> parse_low_act(std::string_view name);

constexpr std::size_t index_of(HighAct a) { return static_cast<std::size_t>(a); }
constexpr std::size_t index_of(LowAct a) { return static_cast<std::size_t>(a); }

// Joint high/low decision plus the class distributions it was read from.
struct SpeechActPair {
  HighAct high = HighAct::Constatives;
  LowAct low = LowAct::Continuation;
  ActDistribution p_high{1.0, 0.0, 0.0, 0.0};
  ActDistribution p_low{1.0, 0.0, 0.0, 0.0};

  // One-hot distributions for gold labels.
  static SpeechActPair from_labels(HighAct high, LowAct low);
  // Argmax labels (lowest index wins ties).
  static SpeechActPair from_distributions(const ActDistribution& p_high, const ActDistribution& p_low);
};

// True when both vectors are nonnegative, sum to 1 within tol, and agree with the labels' argmax.
bool is_valid(const SpeechActPair& pair, double tol = 1e-9);

std::size_t argmax(const ActDistribution& p);

}  // namespace convgot
