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

#ifndef D3SEL_DISTANCE_HPP
#define D3SEL_DISTANCE_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>

#include "d3sel/core.hpp"

namespace d3sel {

// Inner product with a fixed 16-lane float accumulation order followed by a
// fixed pairwise combine in double. The result depends only on the inputs,
// never on the call site, so every caller that computes the same distance
// gets the same bits.
inline double dot(std::span<const float> a, std::span<const float> b) {
  constexpr std::size_t kLanes = 16;
  const std::size_t n = std::min(a.size(), b.size());
  const float* pa = a.data();
  const float* pb = b.data();
  float acc[kLanes] = {};
  std::size_t k = 0;
  for (; k + kLanes <= n; k += kLanes) {
    for (std::size_t j = 0; j < kLanes; ++j) acc[j] += pa[k + j] * pb[k + j];
  }
  double lanes[kLanes];
  for (std::size_t j = 0; j < kLanes; ++j) lanes[j] = acc[j];
  for (std::size_t width = kLanes / 2; width > 0; width /= 2) {
    for (std::size_t j = 0; j < width; ++j) lanes[j] += lanes[j + width];
  }
  double tail = 0.0;
  for (; k < n; ++k) tail += static_cast<double>(pa[k]) * pb[k];
  return lanes[0] + tail;
}

inline double l2_norm(std::span<const float> a) { return std::sqrt(dot(a, a)); }

// 1 - cos(a, b) from precomputed norms, clamped to [0, 2].
inline double cosine_distance(std::span<const float> a, std::span<const float> b,
                              double norm_a, double norm_b) {
  double d = 1.0 - dot(a, b) / (norm_a * norm_b);
  return std::clamp(d, 0.0, 2.0);
}

inline double cosine_distance(std::span<const float> a, std::span<const float> b) {
  double na = l2_norm(a);
  double nb = l2_norm(b);
  if (!(na > 0.0) || !(nb > 0.0)) throw DomainError("zero-norm embedding row");
  return cosine_distance(a, b, na, nb);
}

// Distance from row i to its closest selected row.
inline double diversity_d1(std::size_t i, std::span<const std::size_t> selected,
                           const EmbeddingMatrix& embeddings) {
  if (selected.empty()) throw DomainError("selected set is empty");
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t s : selected) {
    if (s == i) return 0.0;
    best = std::min(best, cosine_distance(embeddings.row(i), embeddings.row(s)));
  }
  return best;
}

}  // namespace d3sel

#endif  // D3SEL_DISTANCE_HPP
