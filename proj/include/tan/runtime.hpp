#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace tanflow {

/// Keeps freed tensor buffers in the heap instead of returning them to the
/// system, so each training step reuses already-mapped memory. Call once at
/// program start; has no effect outside glibc.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace tanflow
