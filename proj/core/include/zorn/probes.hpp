#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "zorn/numerics.hpp"

namespace zorn {

enum class Distribution : std::uint8_t {
  kRademacher = 0,
  kNormal = 1,
  kUniform = 2,
};

const char* to_string(Distribution d);
Distribution distribution_from_string(const std::string& s);

// Default perturbation chunk: 2^20 entries. Perturbations are applied in
// chunks of this many indices so peak scratch stays bounded regardless of
// parameter count; tunable per step.
inline constexpr std::size_t kDefaultChunkSize = std::size_t{1} << 20;

// (seed, distribution, epsilon): deterministically defines one probe p of
// any dimension. Probes are never materialized whole, only regenerated
// entry- or chunk-wise from the seed.
struct ProbeSpec {
  std::uint64_t seed = 0;
  Distribution distribution = Distribution::kRademacher;
  double epsilon = 0.0;
};

// Entry i of the probe defined by spec; a pure function of (spec, i).
//   Rademacher: 2*(low bit of rng at (seed, i)) - 1, in {-1, +1}
//   Normal:     Box-Muller on stream draws at positions (2i, 2i+1)
//   Uniform:    draw at position i scaled to [-1, 1]
float probe_entry(const ProbeSpec& spec, std::uint64_t i);

// Walks [0, total) in chunk_size pieces; position is a multiple of
// chunk_size except possibly for the final chunk.
struct ChunkCursor {
  std::size_t chunk_size = kDefaultChunkSize;
  std::size_t position = 0;

  bool done(std::size_t total) const { return position >= total; }
  std::size_t end(std::size_t total) const {
    const std::size_t e = position + chunk_size;
    return e < total ? e : total;
  }
  void advance(std::size_t total) { position = end(total); }
};

// theta[i] += alpha * probe_entry(spec, i) for all i, processed chunkwise
// in place. Throws InputError on non-finite alpha.
void apply_probe(ParamVector& theta, double alpha, const ProbeSpec& spec,
                 std::size_t chunk_size = kDefaultChunkSize);
void apply_probe(std::span<float> theta, double alpha, const ProbeSpec& spec,
                 std::size_t chunk_size = kDefaultChunkSize);
// Float64 variant for dense synthetic objectives.
void apply_probe(std::span<double> theta, double alpha, const ProbeSpec& spec,
                 std::size_t chunk_size = kDefaultChunkSize);

// Applies theta[j] += sum_i alpha[i] * p_i[j] with the per-element sums
// ordered by ascending i, bit-identical to issuing apply_probe(alpha[i],
// spec[i]) sequentially, but streaming theta once per chunk. Returns the
// squared L2 norm of the applied update (float64).
double apply_probe_batch(std::span<float> theta, std::span<const double> alphas,
                         std::span<const ProbeSpec> specs,
                         std::size_t chunk_size = kDefaultChunkSize);
double apply_probe_batch(std::span<double> theta, std::span<const double> alphas,
                         std::span<const ProbeSpec> specs,
                         std::size_t chunk_size = kDefaultChunkSize);

// Rademacher probes have constant L2 norm sqrt(d): queries live on the
// shell of the sphere, not its interior. Throws InputError for other
// distributions.
double rademacher_shell_norm(const ProbeSpec& spec, std::size_t d);

// Rademacher probes pack to one bit per entry (bit i of word i/64 set for
// +1). Round-trips exactly against probe_entry.
std::vector<std::uint64_t> pack_rademacher(const ProbeSpec& spec, std::size_t d);
int unpack_rademacher(std::span<const std::uint64_t> bits, std::size_t i);

}  // namespace zorn
