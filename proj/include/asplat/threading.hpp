// Copyright Contributors to the asplat Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>

namespace asplat {

/// Process-wide default worker count. 0 is never returned; the initial value
/// is the hardware concurrency. The CLI sets this from --threads.
int default_thread_count();
void set_default_thread_count(int n);

/// Splits [0, n) into one contiguous chunk per worker and runs fn(begin, end)
/// on each. Chunk boundaries depend only on n and the worker count, so callers
/// that write disjoint per-index outputs get identical results at any thread
/// count. threads == 0 uses the process default; threads == 1 runs inline.
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn,
                  int threads = 0);

}  // namespace asplat
