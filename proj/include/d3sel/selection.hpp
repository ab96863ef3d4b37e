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

#ifndef D3SEL_SELECTION_HPP
#define D3SEL_SELECTION_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "d3sel/core.hpp"
#include "d3sel/coverage.hpp"
#include "d3sel/rng.hpp"
#include "d3sel/scoring.hpp"

namespace d3sel {

// Per-round quotas: round(k*N) split evenly, the first (total mod R) rounds
// get one extra.
inline std::vector<std::size_t> plan_rounds(double budget, int rounds,
                                            std::size_t pool_size) {
  SelectionConfig cfg;
  cfg.budget = budget;
  cfg.rounds = rounds;
  cfg.validate(pool_size);
  const std::size_t total = SelectionConfig::total_picks(budget, pool_size);
  const auto r = static_cast<std::size_t>(rounds);
  std::vector<std::size_t> quotas(r, total / r);
  for (std::size_t i = 0; i < total % r; ++i) ++quotas[i];
  return quotas;
}

// Response-only losses at or below this are excluded from the IFD ratio.
inline constexpr double kIfdMinUncondLoss = 1e-9;

// Selection weight of one score row under `mode`, with the removed factor
// forced to 1.
inline double mode_weight(const ScoreRow& row, Mode mode) {
  switch (mode) {
    case Mode::kNoDifficulty: return 1.0 * row.d3;
    case Mode::kNoDependability: return row.d2 * 1.0;
    default: return row.d2 * row.d3;
  }
}

// Everything one selection round may read, aligned to manifest order.
struct SelectionInputs {
  std::span<const SampleRecord> pool;
  std::span<const ScoreRow> scores;        // required by d3 and ablation modes
  const EmbeddingMatrix* embeddings = nullptr;  // required by coverage modes
  std::span<const TokenTrace> traces;      // required by ppl and ifd
};

struct RoundRequest {
  std::size_t quota = 1;
  std::vector<std::size_t> prior;     // manifest indices selected in earlier rounds
  std::vector<std::size_t> excluded;  // manifest indices never eligible
  std::uint64_t seed = 0;
  KernelOptions kernel;
};

struct RoundSelection {
  std::vector<std::size_t> picks;
  std::vector<double> objective_trace;  // empty for non-coverage modes
  std::vector<std::string> ifd_excluded;
};

namespace detail {

// Top-m eligible indices by descending key, ties by lowest index.
inline std::vector<std::size_t> top_by_key(std::span<const std::size_t> eligible,
                                           std::span<const double> key,
                                           std::size_t quota) {
  std::vector<std::size_t> order(eligible.begin(), eligible.end());
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return key[a] > key[b];
  });
  order.resize(quota);
  return order;
}

inline void require_aligned(std::span<const SampleRecord> pool, std::size_t size,
                            const char* what) {
  if (size != pool.size()) {
    throw ValidationError(std::string(what) + " count " + std::to_string(size) +
                          " != pool size " + std::to_string(pool.size()));
  }
}

}  // namespace detail

inline RoundSelection select(Mode mode, const SelectionInputs& in,
                             const RoundRequest& req) {
  const std::size_t n = in.pool.size();
  std::vector<std::uint8_t> blocked(n, 0);
  for (std::size_t p : req.prior) blocked.at(p) = 1;
  for (std::size_t e : req.excluded) blocked.at(e) = 1;
  std::vector<std::size_t> eligible;
  eligible.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!blocked[i]) eligible.push_back(i);
  }

  RoundSelection out;
  auto check_quota = [&](std::size_t available) {
    if (req.quota == 0) throw ConfigError("quota must be >= 1");
    if (req.quota > available) {
      throw ConfigError("quota " + std::to_string(req.quota) +
                        " exceeds eligible candidate count " + std::to_string(available));
    }
  };

  switch (mode) {
    case Mode::kD3:
    case Mode::kNoDifficulty:
    case Mode::kNoDependability: {
      detail::require_aligned(in.pool, in.scores.size(), "score row");
      if (!in.embeddings) throw ConfigError("mode " + std::string(to_string(mode)) + " needs embeddings");
      detail::require_aligned(in.pool, in.embeddings->count(), "embedding row");
      std::vector<double> weights(n);
      for (std::size_t i = 0; i < n; ++i) weights[i] = mode_weight(in.scores[i], mode);
      check_quota(eligible.size());
      auto cover = greedy_weighted_kcenter(*in.embeddings, weights, req.prior, eligible,
                                           req.quota, req.seed, req.kernel);
      out.picks = std::move(cover.picks);
      out.objective_trace = std::move(cover.objective_trace);
      break;
    }
    case Mode::kNoDiversity: {
      detail::require_aligned(in.pool, in.scores.size(), "score row");
      check_quota(eligible.size());
      std::vector<double> weights(n);
      for (std::size_t i = 0; i < n; ++i) weights[i] = mode_weight(in.scores[i], mode);
      out.picks = detail::top_by_key(eligible, weights, req.quota);
      break;
    }
    case Mode::kRand: {
      check_quota(eligible.size());
      // Partial Fisher-Yates; picks are in draw order.
      SeededRng rng(req.seed);
      for (std::size_t k = 0; k < req.quota; ++k) {
        std::size_t j = k + rng.uniform_index(eligible.size() - k);
        std::swap(eligible[k], eligible[j]);
        out.picks.push_back(eligible[k]);
      }
      break;
    }
    case Mode::kPpl: {
      detail::require_aligned(in.pool, in.traces.size(), "trace");
      check_quota(eligible.size());
      std::vector<double> loss(n, 0.0);
      for (std::size_t i : eligible) loss[i] = sample_loss(in.traces[i]);
      out.picks = detail::top_by_key(eligible, loss, req.quota);
      break;
    }
    case Mode::kIfd: {
      detail::require_aligned(in.pool, in.traces.size(), "trace");
      std::vector<double> ratio(n, 0.0);
      std::vector<std::size_t> usable;
      for (std::size_t i : eligible) {
        const auto& t = in.traces[i];
        if (!t.uncond_logprobs) {
          throw ConfigError("mode ifd needs uncond_logprobs, missing for sample '" +
                            t.sample_id + "'");
        }
        double uncond = sample_loss(std::span<const double>(*t.uncond_logprobs));
        if (uncond <= kIfdMinUncondLoss) {
          out.ifd_excluded.push_back(t.sample_id);
          continue;
        }
        // Conditional loss over response-only loss.
        ratio[i] = sample_loss(t) / uncond;
        usable.push_back(i);
      }
      check_quota(usable.size());
      out.picks = detail::top_by_key(usable, ratio, req.quota);
      break;
    }
  }
  return out;
}

inline RoundManifest make_manifest(int round_index, std::span<const SampleRecord> pool,
                                   const RoundSelection& selection,
                                   std::string fingerprint) {
  RoundManifest m;
  m.round_index = round_index;
  m.selected_ids.reserve(selection.picks.size());
  for (std::size_t i : selection.picks) m.selected_ids.push_back(pool[i].id);
  if (!m.selected_ids.empty()) m.first_pick_id = m.selected_ids.front();
  m.objective_trace = selection.objective_trace;
  m.config_fingerprint = std::move(fingerprint);
  return m;
}

}  // namespace d3sel

#endif  // D3SEL_SELECTION_HPP
