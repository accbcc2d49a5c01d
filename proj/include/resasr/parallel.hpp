// Copyright 2026 The resasr authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <functional>

namespace resasr {

// Persistent worker pool used by the tensor kernels. Work items must write
// disjoint outputs; every reduction stays serial inside one item, so results
// are bitwise identical for any thread count (including 1).
//
// Thread count: RESASR_THREADS env var if set, else hardware concurrency.
class ThreadPool {
 public:
  static ThreadPool& instance();

  int num_threads() const;

  // Runs fn(begin_i, end_i) on contiguous chunks of [begin, end).
  // Blocks until every chunk is done. Nested calls run inline.
  void parallel_for(int64_t begin, int64_t end,
                    const std::function<void(int64_t, int64_t)>& fn);

 private:
  ThreadPool();
  ~ThreadPool();
  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

  struct Impl;
  Impl* impl_;
};

/// Convenience wrapper over the global pool.
void parallel_for(int64_t begin, int64_t end,
                  const std::function<void(int64_t, int64_t)>& fn);

}  // namespace resasr
