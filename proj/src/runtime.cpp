#include "g2sd/runtime.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace g2sd {

void configure_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace g2sd
