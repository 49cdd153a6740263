// Test-only reference implementations, independent of the library code
// paths they check.
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "zorn/models.hpp"
#include "zorn/numerics.hpp"
#include "zorn/tasks.hpp"

namespace oracles {

// Published SplitMix64: state advances by the golden-gamma increment and
// the new state is scrambled. Kept verbatim and stateful, unlike the
// library's counter-based form.
struct SplitMix64Ref {
  std::uint64_t state;

  explicit SplitMix64Ref(std::uint64_t seed) : state(seed) {}
  std::uint64_t next() {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }
};

// Naive triple-loop product with a float64 accumulator per element.
zorn::Matrix naive_matmul(const zorn::Matrix& a, const zorn::Matrix& b);

// Scalar float64 LSTM step over the documented flat layout; plain
// per-gate dot products, no shared kernels.
struct ScalarLstmState {
  std::vector<double> h;  // layers x hidden
  std::vector<double> c;
};

std::vector<double> scalar_lstm_step(const zorn::LstmConfig& cfg,
                                     std::span<const float> theta,
                                     ScalarLstmState& state, std::int32_t token);

// Central finite differences of a scalar function of a float64 vector.
std::vector<double> central_differences(
    const std::function<double(std::span<const double>)>& f,
    std::span<const double> x, double h);

}  // namespace oracles
