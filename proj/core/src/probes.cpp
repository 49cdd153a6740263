#include "zorn/probes.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "zorn/error.hpp"

namespace zorn {

const char* to_string(Distribution d) {
  switch (d) {
    case Distribution::kRademacher: return "rademacher";
    case Distribution::kNormal: return "normal";
    case Distribution::kUniform: return "uniform";
  }
  return "?";
}

Distribution distribution_from_string(const std::string& s) {
  if (s == "rademacher") return Distribution::kRademacher;
  if (s == "normal") return Distribution::kNormal;
  if (s == "uniform") return Distribution::kUniform;
  throw InputError("unknown distribution: " + s);
}

namespace {

inline float rademacher_at(std::uint64_t seed, std::uint64_t i) {
  return static_cast<float>(2 * static_cast<int>(RngStream::at(seed, i) & 1u) - 1);
}

// (0, 1]: never zero, so log() below is safe.
inline double unit_open(std::uint64_t bits) {
  return static_cast<double>((bits >> 11) + 1) * 0x1.0p-53;
}

inline float normal_at(std::uint64_t seed, std::uint64_t i) {
  const double u1 = unit_open(RngStream::at(seed, 2 * i));
  const double u2 = unit_open(RngStream::at(seed, 2 * i + 1));
  const double r = std::sqrt(-2.0 * std::log(u1));
  return static_cast<float>(r * std::cos(2.0 * std::numbers::pi * u2));
}

inline float uniform_at(std::uint64_t seed, std::uint64_t i) {
  const double u = static_cast<double>(RngStream::at(seed, i) >> 11) * 0x1.0p-53;
  return static_cast<float>(2.0 * u - 1.0);
}

template <typename T>
void apply_probe_impl(std::span<T> theta, double alpha, const ProbeSpec& spec,
                      std::size_t chunk_size) {
  if (!std::isfinite(alpha)) {
    throw InputError("apply_probe: non-finite alpha");
  }
  if (alpha == 0.0) return;
  if (chunk_size == 0) throw InputError("apply_probe: zero chunk size");
  ChunkCursor cur{chunk_size, 0};
  const std::size_t n = theta.size();
  switch (spec.distribution) {
    case Distribution::kRademacher: {
      // Branch-free hot path: add +alpha or -alpha by low bit.
      const T plus = static_cast<T>(alpha);
      while (!cur.done(n)) {
        const std::size_t end = cur.end(n);
        for (std::size_t i = cur.position; i < end; ++i) {
          const std::uint64_t bit = RngStream::at(spec.seed, i) & 1u;
          theta[i] += bit ? plus : -plus;
        }
        cur.advance(n);
      }
      break;
    }
    case Distribution::kNormal:
      while (!cur.done(n)) {
        const std::size_t end = cur.end(n);
        for (std::size_t i = cur.position; i < end; ++i) {
          theta[i] += static_cast<T>(alpha * static_cast<double>(normal_at(spec.seed, i)));
        }
        cur.advance(n);
      }
      break;
    case Distribution::kUniform:
      while (!cur.done(n)) {
        const std::size_t end = cur.end(n);
        for (std::size_t i = cur.position; i < end; ++i) {
          theta[i] += static_cast<T>(alpha * static_cast<double>(uniform_at(spec.seed, i)));
        }
        cur.advance(n);
      }
      break;
  }
}

}  // namespace

float probe_entry(const ProbeSpec& spec, std::uint64_t i) {
  switch (spec.distribution) {
    case Distribution::kRademacher: return rademacher_at(spec.seed, i);
    case Distribution::kNormal: return normal_at(spec.seed, i);
    case Distribution::kUniform: return uniform_at(spec.seed, i);
  }
  throw InputError("probe_entry: bad distribution");
}

void apply_probe(ParamVector& theta, double alpha, const ProbeSpec& spec,
                 std::size_t chunk_size) {
  apply_probe_impl<float>(theta.values, alpha, spec, chunk_size);
}

void apply_probe(std::span<float> theta, double alpha, const ProbeSpec& spec,
                 std::size_t chunk_size) {
  apply_probe_impl<float>(theta, alpha, spec, chunk_size);
}

void apply_probe(std::span<double> theta, double alpha, const ProbeSpec& spec,
                 std::size_t chunk_size) {
  apply_probe_impl<double>(theta, alpha, spec, chunk_size);
}

namespace {

template <typename T>
double apply_probe_batch_impl(std::span<T> theta, std::span<const double> alphas,
                              std::span<const ProbeSpec> specs,
                              std::size_t chunk_size) {
  if (alphas.size() != specs.size()) {
    throw ShapeError("apply_probe_batch: alphas/specs size mismatch");
  }
  for (const double a : alphas) {
    if (!std::isfinite(a)) throw InputError("apply_probe_batch: non-finite alpha");
  }
  double norm_sq = 0.0;
  ChunkCursor cur{chunk_size, 0};
  const std::size_t n = theta.size();
  while (!cur.done(n)) {
    const std::size_t begin = cur.position;
    const std::size_t end = cur.end(n);
    // Per element the i-sum runs ascending, matching sequential
    // apply_probe calls bit-for-bit.
    for (std::size_t j = begin; j < end; ++j) {
      const T before = theta[j];
      T v = before;
      for (std::size_t i = 0; i < specs.size(); ++i) {
        if (alphas[i] == 0.0) continue;
        v += static_cast<T>(alphas[i] *
                            static_cast<double>(probe_entry(specs[i], j)));
      }
      theta[j] = v;
      const double d = static_cast<double>(v) - static_cast<double>(before);
      norm_sq += d * d;
    }
    cur.advance(n);
  }
  return norm_sq;
}

}  // namespace

double apply_probe_batch(std::span<float> theta, std::span<const double> alphas,
                         std::span<const ProbeSpec> specs,
                         std::size_t chunk_size) {
  return apply_probe_batch_impl<float>(theta, alphas, specs, chunk_size);
}

double apply_probe_batch(std::span<double> theta, std::span<const double> alphas,
                         std::span<const ProbeSpec> specs,
                         std::size_t chunk_size) {
  return apply_probe_batch_impl<double>(theta, alphas, specs, chunk_size);
}

double rademacher_shell_norm(const ProbeSpec& spec, std::size_t d) {
  if (spec.distribution != Distribution::kRademacher) {
    throw InputError("shell norm is a Rademacher property");
  }
  return std::sqrt(static_cast<double>(d));
}

std::vector<std::uint64_t> pack_rademacher(const ProbeSpec& spec, std::size_t d) {
  if (spec.distribution != Distribution::kRademacher) {
    throw InputError("pack_rademacher: wrong distribution");
  }
  std::vector<std::uint64_t> bits((d + 63) / 64, 0);
  for (std::size_t i = 0; i < d; ++i) {
    bits[i / 64] |= (RngStream::at(spec.seed, i) & 1u) << (i % 64);
  }
  return bits;
}

int unpack_rademacher(std::span<const std::uint64_t> bits, std::size_t i) {
  return ((bits[i / 64] >> (i % 64)) & 1u) ? 1 : -1;
}

}  // namespace zorn
