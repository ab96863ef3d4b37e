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

#ifndef D3SEL_SCORING_HPP
#define D3SEL_SCORING_HPP

// Per-sample difficulty (uncertainty-aware prediction difficulty, "UPD") and
// teacher-judged dependability. All logarithms are natural.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "d3sel/core.hpp"
#include "d3sel/parallel.hpp"

namespace d3sel {

inline double token_loss(double gold_logprob) {
  if (!std::isfinite(gold_logprob) || gold_logprob > 0.0) {
    throw DomainError("gold log-probability must be finite and <= 0");
  }
  return -gold_logprob;
}

// Mean token loss over the response.
inline double sample_loss(std::span<const double> gold_logprobs) {
  if (gold_logprobs.empty()) throw DomainError("empty trace");
  double sum = 0.0;
  for (double lp : gold_logprobs) sum += token_loss(lp);
  return sum / static_cast<double>(gold_logprobs.size());
}

inline double sample_loss(const TokenTrace& trace) {
  return sample_loss(std::span<const double>(trace.gold_logprobs));
}

// Maps a nonnegative loss into [0, 1): 2 * (logistic(u / alpha) - 1/2).
// Evaluated as tanh(u / (2 alpha)), which is the same function without the
// cancellation near u = 0.
inline double sigmoid_alpha(double u, double alpha) {
  if (!(alpha > 0.0)) throw DomainError("alpha must be positive");
  if (std::isnan(u) || u < 0.0) throw DomainError("loss must be nonnegative");
  return std::tanh(u / (2.0 * alpha));
}

// Denominator of the entropy factor: (ln vocab_size)^beta.
inline double entropy_scale(const ScoringConfig& config) {
  double log_v = config.max_entropy();
  return config.beta == 1.0 ? log_v : std::pow(log_v, config.beta);
}

inline double upd_token(double loss, double entropy, const ScoringConfig& config) {
  if (std::isnan(entropy) || entropy < 0.0) {
    throw DomainError("entropy must be nonnegative");
  }
  double certainty = std::max(1.0 - entropy / entropy_scale(config), 0.0);
  return sigmoid_alpha(loss, config.alpha) * certainty;
}

// d2: unweighted mean of upd_token over the response tokens.
inline double upd_sample(const TokenTrace& trace, const ScoringConfig& config) {
  const auto n = trace.gold_logprobs.size();
  if (n == 0) throw DomainError("empty trace for sample '" + trace.sample_id + "'");
  if (trace.entropies.size() != n) {
    throw DomainError("trace length mismatch for sample '" + trace.sample_id + "'");
  }
  double sum = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    sum += upd_token(token_loss(trace.gold_logprobs[t]), trace.entropies[t], config);
  }
  return sum / static_cast<double>(n);
}

// d3: two-way softmax probability of the positive judgment token, with the
// larger logit subtracted before exponentiation.
inline double dependability(const DependabilityLogits& logits) {
  if (!std::isfinite(logits.logit_pos) || !std::isfinite(logits.logit_neg)) {
    throw DomainError("non-finite dependability logit for sample '" +
                      logits.sample_id + "'");
  }
  double top = std::max(logits.logit_pos, logits.logit_neg);
  double pos = std::exp(logits.logit_pos - top);
  double neg = std::exp(logits.logit_neg - top);
  return pos / (pos + neg);
}

// d3 per pooled sample, manifest order.
inline std::vector<double> dependability_scores(
    std::span<const SampleRecord> pool, std::span<const DependabilityLogits> logits) {
  auto aligned = align_to_pool<DependabilityLogits>(
      pool, logits, [](const DependabilityLogits& d) -> const std::string& {
        return d.sample_id;
      },
      "dependability logits");
  std::vector<double> out(aligned.size());
  for (std::size_t i = 0; i < aligned.size(); ++i) out[i] = dependability(aligned[i]);
  return out;
}

// Builds the score table from traces and precomputed d3 values (manifest
// order). Ablation modes override the removed factor with 1.
inline ScoreTable build_score_table(std::span<const SampleRecord> pool,
                                    std::span<const TokenTrace> traces,
                                    std::span<const double> d3_scores,
                                    const ScoringConfig& config, Mode mode,
                                    unsigned threads = 1) {
  config.validate();
  if (d3_scores.size() != pool.size()) {
    throw ValidationError("dependability score count does not match pool size");
  }
  auto aligned = align_to_pool<TokenTrace>(
      pool, traces, [](const TokenTrace& t) -> const std::string& { return t.sample_id; },
      "trace");

  ScoreTable table;
  table.rows.resize(pool.size());
  parallel_for(pool.size(), threads, [&](std::size_t i) {
    auto& row = table.rows[i];
    row.id = pool[i].id;
    row.d2 = mode == Mode::kNoDifficulty ? 1.0 : upd_sample(aligned[i], config);
    row.d3 = mode == Mode::kNoDependability ? 1.0 : d3_scores[i];
    row.weight = row.d2 * row.d3;
  });
  return table;
}

inline ScoreTable build_score_table(std::span<const SampleRecord> pool,
                                    std::span<const TokenTrace> traces,
                                    std::span<const DependabilityLogits> logits,
                                    const ScoringConfig& config, Mode mode,
                                    unsigned threads = 1) {
  auto d3 = dependability_scores(pool, logits);
  return build_score_table(pool, traces, std::span<const double>(d3), config, mode,
                           threads);
}

}  // namespace d3sel

#endif  // D3SEL_SCORING_HPP
