#include "zorn/memtrack.hpp"

#include <malloc.h>

#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <new>

namespace {

std::atomic<std::int64_t> g_current{0};
std::atomic<std::int64_t> g_peak{0};
std::atomic<std::int64_t> g_allocs{0};

void note_alloc(void* p) noexcept {
  if (p == nullptr) return;
  const auto sz = static_cast<std::int64_t>(malloc_usable_size(p));
  const auto cur = g_current.fetch_add(sz, std::memory_order_relaxed) + sz;
  g_allocs.fetch_add(1, std::memory_order_relaxed);
  auto peak = g_peak.load(std::memory_order_relaxed);
  while (cur > peak &&
         !g_peak.compare_exchange_weak(peak, cur, std::memory_order_relaxed)) {
  }
}

void note_free(void* p) noexcept {
  if (p == nullptr) return;
  const auto sz = static_cast<std::int64_t>(malloc_usable_size(p));
  g_current.fetch_sub(sz, std::memory_order_relaxed);
}

void* tracked_alloc(std::size_t n) {
  void* p = std::malloc(n == 0 ? 1 : n);
  if (p == nullptr) throw std::bad_alloc{};
  note_alloc(p);
  return p;
}

void* tracked_alloc_aligned(std::size_t n, std::size_t align) {
  if (align < alignof(std::max_align_t)) align = alignof(std::max_align_t);
  void* p = std::aligned_alloc(align, (n + align - 1) / align * align);
  if (p == nullptr) throw std::bad_alloc{};
  note_alloc(p);
  return p;
}

void tracked_free(void* p) noexcept {
  note_free(p);
  std::free(p);
}

}  // namespace

namespace zorn::memtrack {

std::int64_t current_bytes() { return g_current.load(std::memory_order_relaxed); }
std::int64_t peak_bytes() { return g_peak.load(std::memory_order_relaxed); }
std::int64_t allocation_count() { return g_allocs.load(std::memory_order_relaxed); }

std::int64_t reset_peak() {
  const auto cur = current_bytes();
  g_peak.store(cur, std::memory_order_relaxed);
  return cur;
}

}  // namespace zorn::memtrack

void* operator new(std::size_t n) { return tracked_alloc(n); }
void* operator new[](std::size_t n) { return tracked_alloc(n); }
void* operator new(std::size_t n, std::align_val_t a) {
  return tracked_alloc_aligned(n, static_cast<std::size_t>(a));
}
void* operator new[](std::size_t n, std::align_val_t a) {
  return tracked_alloc_aligned(n, static_cast<std::size_t>(a));
}
void* operator new(std::size_t n, const std::nothrow_t&) noexcept {
  void* p = std::malloc(n == 0 ? 1 : n);
  note_alloc(p);
  return p;
}
void* operator new[](std::size_t n, const std::nothrow_t&) noexcept {
  void* p = std::malloc(n == 0 ? 1 : n);
  note_alloc(p);
  return p;
}

void operator delete(void* p) noexcept { tracked_free(p); }
void operator delete[](void* p) noexcept { tracked_free(p); }
void operator delete(void* p, std::size_t) noexcept { tracked_free(p); }
void operator delete[](void* p, std::size_t) noexcept { tracked_free(p); }
void operator delete(void* p, std::align_val_t) noexcept { tracked_free(p); }
void operator delete[](void* p, std::align_val_t) noexcept { tracked_free(p); }
void operator delete(void* p, std::size_t, std::align_val_t) noexcept {
  tracked_free(p);
}
void operator delete[](void* p, std::size_t, std::align_val_t) noexcept {
  tracked_free(p);
}
void operator delete(void* p, const std::nothrow_t&) noexcept { tracked_free(p); }
void operator delete[](void* p, const std::nothrow_t&) noexcept {
  tracked_free(p);
}
