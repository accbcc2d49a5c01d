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

#include "resasr/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

namespace resasr {

namespace {
thread_local bool inside_pool = false;

int configured_thread_count() {
  if (const char* env = std::getenv("RESASR_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}
}  // namespace

struct ThreadPool::Impl {
  int nthreads;
  std::vector<std::thread> workers;

  std::mutex mu;
  std::condition_variable work_cv;
  std::condition_variable done_cv;
  const std::function<void(int64_t, int64_t)>* job = nullptr;
  int64_t job_begin = 0;
  int64_t job_end = 0;
  int64_t chunk = 0;
  uint64_t generation = 0;
  int pending = 0;
  bool shutdown = false;

  explicit Impl(int n) : nthreads(n) {
    for (int t = 1; t < nthreads; ++t) {
      workers.emplace_back([this, t] { worker_loop(t); });
    }
  }

  ~Impl() {
    {
      std::lock_guard<std::mutex> lock(mu);
      shutdown = true;
    }
    work_cv.notify_all();
    for (auto& w : workers) w.join();
  }

  void run_chunk(int index) {
    const int64_t b = job_begin + chunk * index;
    const int64_t e = std::min(job_end, b + chunk);
    if (b < e) (*job)(b, e);
  }

  void worker_loop(int index) {
    inside_pool = true;
    uint64_t seen = 0;
    for (;;) {
      {
        std::unique_lock<std::mutex> lock(mu);
        work_cv.wait(lock, [&] { return shutdown || generation != seen; });
        if (shutdown) return;
        seen = generation;
      }
      run_chunk(index);
      std::lock_guard<std::mutex> lock(mu);
      if (--pending == 0) done_cv.notify_all();
    }
  }

  void run(int64_t begin, int64_t end,
           const std::function<void(int64_t, int64_t)>& fn) {
    const int64_t n = end - begin;
    if (n <= 0) return;
    // Serial fast paths: tiny ranges, one thread, or a nested call.
    if (nthreads == 1 || inside_pool) {
      fn(begin, end);
      return;
    }
    {
      std::lock_guard<std::mutex> lock(mu);
      job = &fn;
      job_begin = begin;
      job_end = end;
      chunk = (n + nthreads - 1) / nthreads;
      pending = nthreads - 1;
      ++generation;
    }
    work_cv.notify_all();
    inside_pool = true;
    run_chunk(0);
    inside_pool = false;
    std::unique_lock<std::mutex> lock(mu);
    done_cv.wait(lock, [&] { return pending == 0; });
    job = nullptr;
  }
};

ThreadPool::ThreadPool() : impl_(new Impl(configured_thread_count())) {}

ThreadPool::~ThreadPool() { delete impl_; }

ThreadPool& ThreadPool::instance() {
  static ThreadPool pool;
  return pool;
}

int ThreadPool::num_threads() const { return impl_->nthreads; }

void ThreadPool::parallel_for(int64_t begin, int64_t end,
                              const std::function<void(int64_t, int64_t)>& fn) {
  impl_->run(begin, end, fn);
}

void parallel_for(int64_t begin, int64_t end,
                  const std::function<void(int64_t, int64_t)>& fn) {
  ThreadPool::instance().parallel_for(begin, end, fn);
}

}  // namespace resasr
