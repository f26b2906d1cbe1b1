#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "convgot/matrix.hpp"

namespace convgot {

std::uint64_t splitmix64(std::uint64_t x);

// Derives an independent stream seed from a root seed and a stream label, so
// adding randomness to one module never shifts another module's draws.
std::uint64_t derive_seed(std::uint64_t root, std::string_view stream);
std::uint64_t derive_seed(std::uint64_t root, std::string_view stream, std::uint64_t index);

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t root, std::string_view stream) { return Rng(derive_seed(root, stream)); }

// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
Matrix xavier_uniform(std::size_t rows, std::size_t cols, Rng& rng);
Matrix gaussian(std::size_t rows, std::size_t cols, double stddev, Rng& rng);

}  // namespace convgot
