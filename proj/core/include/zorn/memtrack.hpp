#pragma once

#include <cstdint>

// Process-wide allocation counters fed by the global operator new/delete
// overrides in memtrack.cpp. Every binary linking zorn_core gets them.
// Peak tracking is relative: reset_peak() rebases the peak to the current
// level, so peak_bytes() - baseline measures the working set of a region.
namespace zorn::memtrack {

std::int64_t current_bytes();
std::int64_t peak_bytes();
std::int64_t allocation_count();

// Rebase peak to the current level and return that level.
std::int64_t reset_peak();

// Convenience: working-set measurement of a callable region.
// Returns peak-over-region minus level-at-entry.
template <typename Fn>
std::int64_t measure_delta_peak(Fn&& fn) {
  const std::int64_t base = reset_peak();
  fn();
  return peak_bytes() - base;
}

}  // namespace zorn::memtrack
