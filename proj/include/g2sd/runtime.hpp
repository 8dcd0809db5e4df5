#pragma once

namespace g2sd {

// Keeps large tensor buffers in the heap instead of fresh mmap pages per
// allocation. Call once at program start.
void configure_allocator();

}  // namespace g2sd
