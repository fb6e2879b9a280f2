#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace cemlab {

// Training allocates many short-lived arrays of a few hundred kilobytes.
// glibc would serve each from a fresh mmap; keeping them on the heap avoids
// the page-fault churn. No-op elsewhere.
inline void tune_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 64 << 20);
    mallopt(M_TRIM_THRESHOLD, 128 << 20);
#endif
}

}  // namespace cemlab
