#pragma once

#include <cstdlib>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace decg {

/// Training allocates and frees the same multi-megabyte activations every step. glibc's
/// default returns such blocks to the kernel each time, so every step page-faults them back
/// in; keeping them in the heap roughly halves system time.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace decg
