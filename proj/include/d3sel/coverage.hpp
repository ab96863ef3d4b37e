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

#ifndef D3SEL_COVERAGE_HPP
#define D3SEL_COVERAGE_HPP

// Greedy weighted k-center over cosine distance.
//
// Every remaining candidate i carries nearest_raw(i), its cosine distance to
// the closest center so far, and the weighted value w(i) * nearest_raw(i).
// Each pick takes the candidate with the largest weighted value (lowest
// manifest index on ties) and folds the new center into nearest_raw with a
// min. Two update strategies produce the same pick sequence:
//
//   kDense  updates every remaining candidate after every pick, O(N*d) per
//           pick, parallel over candidates.
//   kLazy   keeps a max-heap of weighted values that may be stale. Values
//           only shrink as centers are added, so a stale entry is an upper
//           bound; a candidate is brought up to date (min over the centers
//           it has not seen yet) only when it reaches the top of the heap.
//           The first up-to-date top is the exact argmax.
//
// When every remaining weighted value is 0 the solver falls back to the
// largest nearest_raw, then lowest index, for all remaining picks.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "d3sel/core.hpp"
#include "d3sel/distance.hpp"
#include "d3sel/parallel.hpp"
#include "d3sel/rng.hpp"

namespace d3sel {

enum class KernelStrategy { kLazy, kDense };

struct KernelOptions {
  KernelStrategy strategy = KernelStrategy::kLazy;
  unsigned threads = 1;
};

struct CoverageResult {
  std::vector<std::size_t> picks;        // manifest indices, pick order
  std::vector<double> objective_trace;   // max weighted nearest distance after each pick
};

namespace detail {

struct Candidate {
  double value;
  std::size_t slot;
};

// Strict weak order for "a ranks below b": smaller value, or equal value and
// larger slot (slots are in ascending manifest-index order).
inline bool ranks_below(const Candidate& a, const Candidate& b) {
  return a.value < b.value || (a.value == b.value && a.slot > b.slot);
}

class CoverageState {
 public:
  CoverageState(const EmbeddingMatrix& emb, std::span<const double> weights,
                std::span<const std::size_t> candidates, const KernelOptions& opts)
      : emb_(emb),
        weights_(weights),
        candidates_(candidates),
        opts_(opts),
        norms_(emb.count()),
        raw_(candidates.size(), std::numeric_limits<double>::infinity()),
        synced_(candidates.size(), 0),
        alive_(candidates.size(), 1),
        alive_count_(candidates.size()) {
    parallel_for(emb.count(), opts.threads,
                 [&](std::size_t i) { norms_[i] = l2_norm(emb.row(i)); });
  }

  std::size_t alive_count() const { return alive_count_; }
  std::size_t sample(std::size_t slot) const { return candidates_[slot]; }

  double weighted(std::size_t slot) const {
    return weights_[candidates_[slot]] * raw_[slot];
  }

  double distance_to(std::size_t slot, std::size_t center) const {
    std::size_t i = candidates_[slot];
    return cosine_distance(emb_.row(i), emb_.row(center), norms_[i], norms_[center]);
  }

  void sync(std::size_t slot) {
    double r = raw_[slot];
    for (std::size_t c = synced_[slot]; c < centers_.size(); ++c) {
      r = std::min(r, distance_to(slot, centers_[c]));
    }
    raw_[slot] = r;
    synced_[slot] = centers_.size();
  }

  void sync_all() {
    parallel_for(candidates_.size(), opts_.threads, [&](std::size_t slot) {
      if (alive_[slot]) sync(slot);
    });
  }

  void add_center(std::size_t sample_index) {
    centers_.push_back(sample_index);
    if (opts_.strategy == KernelStrategy::kDense || fallback_) sync_all();
  }

  void add_prior(std::span<const std::size_t> prior) {
    centers_.insert(centers_.end(), prior.begin(), prior.end());
    if (opts_.strategy == KernelStrategy::kDense) sync_all();
  }

  void kill(std::size_t slot) {
    alive_[slot] = 0;
    --alive_count_;
  }

  bool fallback() const { return fallback_; }

  void enter_fallback() {
    fallback_ = true;
    heap_.clear();
    sync_all();
  }

  void build_heap() {
    heap_.clear();
    heap_.reserve(alive_count_);
    for (std::size_t slot = 0; slot < candidates_.size(); ++slot) {
      if (!alive_[slot]) continue;
      // Cosine distance never exceeds 2, so w * 2 bounds the weighted value.
      heap_.push_back({weights_[candidates_[slot]] * 2.0, slot});
    }
    std::make_heap(heap_.begin(), heap_.end(), ranks_below);
  }

  // Exact argmax of the weighted value over alive candidates.
  std::optional<Candidate> best() {
    if (alive_count_ == 0) return std::nullopt;
    if (opts_.strategy == KernelStrategy::kDense) return dense_best();
    while (true) {
      Candidate top = heap_.front();
      if (synced_[top.slot] == centers_.size()) return top;
      std::pop_heap(heap_.begin(), heap_.end(), ranks_below);
      sync(top.slot);
      heap_.back() = {weighted(top.slot), top.slot};
      std::push_heap(heap_.begin(), heap_.end(), ranks_below);
    }
  }

  // Removes the candidate returned by the last best() call.
  void take_best(std::size_t slot) {
    if (opts_.strategy == KernelStrategy::kLazy && !fallback_) {
      std::pop_heap(heap_.begin(), heap_.end(), ranks_below);
      heap_.pop_back();
    }
    kill(slot);
  }

  // Largest nearest_raw among alive candidates, lowest index on ties.
  // Requires every alive candidate to be synced.
  std::size_t raw_argmax() const {
    return reduce_argmax([&](std::size_t slot) { return raw_[slot]; });
  }

 private:
  std::optional<Candidate> dense_best() const {
    std::size_t slot = reduce_argmax([&](std::size_t s) { return weighted(s); });
    return Candidate{weighted(slot), slot};
  }

  template <typename ValueFn>
  std::size_t reduce_argmax(ValueFn value) const {
    constexpr std::size_t kMinChunk = 1024;
    const std::size_t n = candidates_.size();
    std::size_t chunks = chunk_count(n, opts_.threads, kMinChunk);
    std::vector<std::optional<Candidate>> partial(chunks);
    parallel_chunks(n, opts_.threads, kMinChunk,
                    [&](std::size_t chunk, std::size_t begin, std::size_t end) {
                      std::optional<Candidate> local;
                      for (std::size_t s = begin; s < end; ++s) {
                        if (!alive_[s]) continue;
                        Candidate c{value(s), s};
                        if (!local || ranks_below(*local, c)) local = c;
                      }
                      partial[chunk] = local;
                    });
    std::optional<Candidate> winner;
    for (const auto& p : partial) {
      if (p && (!winner || ranks_below(*winner, *p))) winner = p;
    }
    return winner->slot;
  }

  const EmbeddingMatrix& emb_;
  std::span<const double> weights_;
  std::span<const std::size_t> candidates_;
  KernelOptions opts_;
  std::vector<double> norms_;
  std::vector<double> raw_;
  std::vector<std::size_t> synced_;
  std::vector<std::uint8_t> alive_;
  std::size_t alive_count_;
  std::vector<std::size_t> centers_;
  std::vector<Candidate> heap_;
  bool fallback_ = false;
};

}  // namespace detail

// Selects `quota` candidates. Without prior centers the first pick is drawn
// uniformly from the candidates with a generator seeded by `seed`; with prior
// centers every pick maximizes the weighted distance to prior + picked.
// `candidates` must not intersect `prior`; weights are indexed by manifest
// position and must be finite and nonnegative.
inline CoverageResult greedy_weighted_kcenter(const EmbeddingMatrix& embeddings,
                                              std::span<const double> weights,
                                              std::span<const std::size_t> prior,
                                              std::span<const std::size_t> candidates,
                                              std::size_t quota, std::uint64_t seed,
                                              const KernelOptions& opts = {}) {
  const std::size_t n = embeddings.count();
  if (weights.size() != n) {
    throw ValidationError("weight count " + std::to_string(weights.size()) +
                          " != embedding rows " + std::to_string(n));
  }
  if (quota == 0) throw ConfigError("quota must be >= 1");
  if (quota > candidates.size()) {
    throw ConfigError("quota " + std::to_string(quota) + " exceeds candidate count " +
                      std::to_string(candidates.size()));
  }
  for (double w : weights) {
    if (!std::isfinite(w) || w < 0.0) {
      throw DomainError("weights must be finite and nonnegative");
    }
  }

  std::vector<std::size_t> sorted(candidates.begin(), candidates.end());
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw DomainError("duplicate candidate index");
  }
  std::vector<std::uint8_t> is_prior(n, 0);
  for (std::size_t p : prior) {
    if (p >= n) throw DomainError("prior index out of range");
    is_prior[p] = 1;
  }
  for (std::size_t c : sorted) {
    if (c >= n) throw DomainError("candidate index out of range");
    if (is_prior[c]) throw DomainError("candidate " + std::to_string(c) + " is also a prior center");
  }

  detail::CoverageState state(embeddings, weights, sorted, opts);
  CoverageResult result;
  result.picks.reserve(quota);
  result.objective_trace.reserve(quota);

  auto record_objective = [&] {
    if (state.fallback()) {
      result.objective_trace.push_back(0.0);
      return;
    }
    auto top = state.best();
    result.objective_trace.push_back(top ? top->value : 0.0);
  };

  if (prior.empty()) {
    SeededRng rng(seed);
    std::size_t slot = rng.uniform_index(sorted.size());
    state.kill(slot);
    result.picks.push_back(state.sample(slot));
    state.add_center(state.sample(slot));
    if (opts.strategy == KernelStrategy::kLazy) state.build_heap();
    record_objective();
  } else {
    state.add_prior(prior);
    if (opts.strategy == KernelStrategy::kLazy) state.build_heap();
  }

  while (result.picks.size() < quota) {
    std::size_t slot;
    if (!state.fallback()) {
      auto top = state.best();
      if (top->value > 0.0) {
        slot = top->slot;
        state.take_best(slot);
      } else {
        state.enter_fallback();
        slot = state.raw_argmax();
        state.kill(slot);
      }
    } else {
      slot = state.raw_argmax();
      state.kill(slot);
    }
    result.picks.push_back(state.sample(slot));
    state.add_center(state.sample(slot));
    record_objective();
  }
  return result;
}

}  // namespace d3sel

#endif  // D3SEL_COVERAGE_HPP
