#pragma once

#include <atomic>
#include <cstddef>
#include <memory>
#include <new>
#include <vector>

namespace inat {

// Process-wide accounting of live tensor-buffer bytes. Only buffers allocated
// through TrackedAllocator are counted, so analytic activation models and
// measured peaks talk about the same quantity. Measurement scopes are
// single-stream: begin_scope resets the running peak to the current live size.
class MemoryTracker {
public:
  static MemoryTracker& instance() {
    static MemoryTracker t;
    return t;
  }

  void on_alloc(std::size_t bytes) noexcept {
    long long live = live_.fetch_add(static_cast<long long>(bytes), std::memory_order_relaxed) +
                     static_cast<long long>(bytes);
    long long prev = peak_.load(std::memory_order_relaxed);
    while (live > prev && !peak_.compare_exchange_weak(prev, live, std::memory_order_relaxed)) {
    }
  }

  void on_free(std::size_t bytes) noexcept {
    live_.fetch_sub(static_cast<long long>(bytes), std::memory_order_relaxed);
  }

  long long live_bytes() const noexcept { return live_.load(std::memory_order_relaxed); }
  long long peak_bytes() const noexcept { return peak_.load(std::memory_order_relaxed); }

  void begin_scope() noexcept { peak_.store(live_.load(std::memory_order_relaxed)); }

private:
  MemoryTracker() = default;
  std::atomic<long long> live_{0};
  std::atomic<long long> peak_{0};
};

// Every numeric buffer is allocated on a 64-byte boundary. SIMD kernels pick
// their scalar/vector split from the base address at run time, so with the
// default 16-byte heap alignment the low-order bits of a reduction depend on
// where the allocator happened to place the buffer — and reruns of the same
// seed stop being bit-identical. Pinning the alignment pins the split.
inline constexpr std::size_t kBufferAlign = 64;

template <typename T>
struct AlignedAllocator {
  using value_type = T;

  AlignedAllocator() noexcept = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(kBufferAlign)));
  }

  void deallocate(T* p, std::size_t) noexcept {
    ::operator delete(p, std::align_val_t(kBufferAlign));
  }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <typename T>
using AlignedVec = std::vector<T, AlignedAllocator<T>>;

template <typename T>
struct TrackedAllocator {
  using value_type = T;

  TrackedAllocator() noexcept = default;
  template <typename U>
  TrackedAllocator(const TrackedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    MemoryTracker::instance().on_alloc(n * sizeof(T));
    return AlignedAllocator<T>().allocate(n);
  }

  void deallocate(T* p, std::size_t n) noexcept {
    MemoryTracker::instance().on_free(n * sizeof(T));
    AlignedAllocator<T>().deallocate(p, n);
  }

  template <typename U>
  bool operator==(const TrackedAllocator<U>&) const noexcept {
    return true;
  }
};

template <typename T>
using TrackedVec = std::vector<T, TrackedAllocator<T>>;

}  // namespace inat
