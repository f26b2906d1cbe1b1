#include "convgot/stream.hpp"

#include <algorithm>
#include <cmath>

#include "convgot/errors.hpp"

namespace convgot {

void validate(const AudioSignal& signal) {
  if (signal.sample_rate_hz <= 0) throw ConfigError("sample rate must be positive");
  if (signal.channel_count() < 1 || signal.channel_count() > 2) throw ShapeError("audio must have 1 or 2 channels");
  if (signal.channel_count() == 2 && signal.channels[0].size() != signal.channels[1].size()) {
    throw ShapeError("channel lengths differ: " + std::to_string(signal.channels[0].size()) + " vs " +
                     std::to_string(signal.channels[1].size()));
  }
}

AudioSignal downmix_to_mono(const AudioSignal& signal, std::pair<double, double> weights) {
  validate(signal);
  if (signal.channel_count() != 2) throw ShapeError("downmix expects a two-channel signal");
  if (!std::isfinite(weights.first) || !std::isfinite(weights.second)) throw ConfigError("downmix weights must be finite");
  const auto& a = signal.channels[0];
  const auto& b = signal.channels[1];
  std::vector<double> mono(a.size());
  std::transform(a.begin(), a.end(), b.begin(), mono.begin(),
                 [w0 = weights.first, w1 = weights.second](double x, double y) { return w0 * x + w1 * y; });
  return AudioSignal{{std::move(mono)}, signal.sample_rate_hz};
}

BlockPartition partition_blocks(const AudioSignal& mono) {
  validate(mono);
  if (mono.channel_count() != 1) throw ShapeError("partition_blocks expects a mono signal");
  if (mono.sample_rate_hz != kCanonicalSampleRate) {
    throw ConfigError("expected " + std::to_string(kCanonicalSampleRate) + " Hz input, got " +
                      std::to_string(mono.sample_rate_hz) + " Hz (resampling is not supported)");
  }
  const auto& x = mono.channels[0];
  const std::size_t block = static_cast<std::size_t>(mono.sample_rate_hz);
  BlockPartition out;
  out.block_size = block;
  const std::size_t n = (x.size() + block - 1) / block;
  out.blocks.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t begin = i * block;
    const std::size_t end = std::min(begin + block, x.size());
    std::vector<double> b(block, 0.0);
    std::copy(x.begin() + static_cast<std::ptrdiff_t>(begin), x.begin() + static_cast<std::ptrdiff_t>(end), b.begin());
    out.blocks.push_back(std::move(b));
  }
  out.pad_len = n * block - x.size();
  return out;
}

std::vector<double> reassemble(const BlockPartition& partition) {
  std::vector<double> out;
  out.reserve(partition.count() * partition.block_size);
  for (const auto& b : partition.blocks) out.insert(out.end(), b.begin(), b.end());
  out.resize(out.size() - partition.pad_len);
  return out;
}

std::vector<SecondRecord> causal_window(std::span<const SecondRecord> records, std::int64_t t, std::int64_t window) {
  auto lo = std::lower_bound(records.begin(), records.end(), t - window,
                             [](const SecondRecord& r, std::int64_t tick) { return r.t < tick; });
  auto hi = std::lower_bound(lo, records.end(), t, [](const SecondRecord& r, std::int64_t tick) { return r.t < tick; });
  return {lo, hi};
}

}  // namespace convgot
