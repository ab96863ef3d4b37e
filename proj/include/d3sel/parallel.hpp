// Copyright 2026 The D3Select Authors.
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

#ifndef D3SEL_PARALLEL_HPP
#define D3SEL_PARALLEL_HPP

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace d3sel {

inline unsigned default_threads() {
  unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : n;
}

// Splits [0, n) into at most `threads` contiguous chunks and calls
// fn(chunk, begin, end) for each one. Chunk boundaries depend only on n and
// the effective chunk count, so callers that write per-index results or
// reduce per-chunk partials in chunk order get schedule-independent output.
template <typename Fn>
void parallel_chunks(std::size_t n, unsigned threads, std::size_t min_chunk,
                     Fn&& fn) {
  if (n == 0) return;
  std::size_t max_chunks = std::max<std::size_t>(1, n / std::max<std::size_t>(min_chunk, 1));
  std::size_t chunks = std::min<std::size_t>(std::max(threads, 1u), max_chunks);
  if (chunks == 1) {
    fn(std::size_t{0}, std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(chunks);
  workers.reserve(chunks - 1);
  auto run = [&](std::size_t c) {
    std::size_t begin = n * c / chunks;
    std::size_t end = n * (c + 1) / chunks;
    try {
      fn(c, begin, end);
    } catch (...) {
      errors[c] = std::current_exception();
    }
  };
  for (std::size_t c = 1; c < chunks; ++c) workers.emplace_back(run, c);
  run(0);
  for (auto& w : workers) w.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// Number of chunks parallel_chunks will use for the same arguments.
inline std::size_t chunk_count(std::size_t n, unsigned threads, std::size_t min_chunk) {
  if (n == 0) return 0;
  std::size_t max_chunks = std::max<std::size_t>(1, n / std::max<std::size_t>(min_chunk, 1));
  return std::min<std::size_t>(std::max(threads, 1u), max_chunks);
}

template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  parallel_chunks(n, threads, 256, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) fn(i);
  });
}

}  // namespace d3sel

#endif  // D3SEL_PARALLEL_HPP
