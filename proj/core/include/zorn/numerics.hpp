#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "zorn/error.hpp"

namespace zorn {

// Dense row-major float32 matrix. Weight tensors and activations live here;
// reductions and dot products accumulate in float64 (see matmul).
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, float fill = 0.0f)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0f;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  float& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  float operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::span<float> span() { return data_; }
  std::span<const float> span() const { return data_; }
  std::span<float> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const float> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> data_;
};

// Product with float64 inner accumulation in fixed ascending-k order per
// output element. The order is part of the contract: distributed and
// sequential runs must agree bit-for-bit, so no reassociation, no BLAS.
Matrix matmul(const Matrix& a, const Matrix& b);

// Left-to-right sequential sum of float32 values in a float64 accumulator.
// The order is part of the contract.
double reduce_sum_f64(std::span<const float> xs);

// Counter-based keyed random stream: output at position i is a pure
// function of (seed, i), independent of call history. The generator is
// SplitMix64, fixed verbatim so independent implementations agree
// bit-for-bit:
//   at(seed, i) = mix(seed + (i + 1) * 0x9E3779B97F4A7C15)
// where mix is the SplitMix64 finalizer. at(0, 0) equals the published
// first output of a SplitMix64 stream seeded with 0.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t counter = 0)
      : seed_(seed), counter_(counter) {}

  static std::uint64_t at(std::uint64_t seed, std::uint64_t position) {
    std::uint64_t z = seed + (position + 1) * 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t next_u64() { return at(seed_, counter_++); }

  // [0, 1) with 53 random bits.
  double next_unit() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform float32 in [lo, hi) with 24 random bits.
  float next_uniform(float lo, float hi) {
    const float u = static_cast<float>(next_u64() >> 40) * 0x1.0p-24f;
    return lo + u * (hi - lo);
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

// One SplitMix64 scramble of x; the seed-derivation primitive used for
// per-probe and per-step seeds.
inline std::uint64_t mix64(std::uint64_t x) { return RngStream::at(x, 0); }

// derive_seed(base, a [, b]): collision-resistant seed derivation for
// independent substreams (probe i of a step, batch of a step, ...).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a,
                                 std::uint64_t b = 0) {
  return mix64(mix64(base ^ 0x5851F42D4C957F2DULL) ^ a * 0x9E3779B97F4A7C15ULL ^ b);
}

// Named range of a flat parameter vector.
struct LayoutEntry {
  std::string name;
  std::size_t offset = 0;
  std::size_t length = 0;
};

// Flat float32 parameter array plus the layout map from model tensors to
// index ranges. The single mutable object of training.
struct ParamVector {
  std::vector<float> values;
  std::vector<LayoutEntry> layout;

  std::size_t size() const { return values.size(); }
  std::span<float> span() { return values; }
  std::span<const float> span() const { return values; }

  std::span<float> tensor(const LayoutEntry& e) {
    return {values.data() + e.offset, e.length};
  }
  std::span<const float> tensor(const LayoutEntry& e) const {
    return {values.data() + e.offset, e.length};
  }
};

}  // namespace zorn
