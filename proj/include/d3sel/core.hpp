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

#ifndef D3SEL_CORE_HPP
#define D3SEL_CORE_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

namespace d3sel {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Inconsistent or infeasible configuration (budget, mode, flags).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Inputs parsed fine but violate a pool invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents. `offset` is a byte offset for binary files and a
// 1-based line number for line-delimited files.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what), offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

// ---------------------------------------------------------------------------
// Selection modes
// ---------------------------------------------------------------------------

enum class Mode {
  kD3,
  kNoDiversity,
  kNoDifficulty,
  kNoDependability,
  kRand,
  kPpl,
  kIfd,
};

inline std::string_view to_string(Mode mode) {
  switch (mode) {
    case Mode::kD3: return "d3";
    case Mode::kNoDiversity: return "no_diversity";
    case Mode::kNoDifficulty: return "no_difficulty";
    case Mode::kNoDependability: return "no_dependability";
    case Mode::kRand: return "rand";
    case Mode::kPpl: return "ppl";
    case Mode::kIfd: return "ifd";
  }
  return "d3";
}

inline Mode parse_mode(std::string_view name) {
  for (Mode m : {Mode::kD3, Mode::kNoDiversity, Mode::kNoDifficulty,
                 Mode::kNoDependability, Mode::kRand, Mode::kPpl, Mode::kIfd}) {
    if (to_string(m) == name) return m;
  }
  throw ConfigError("unknown mode '" + std::string(name) + "'");
}

// Modes that run the weighted k-center solver.
inline bool uses_coverage(Mode mode) {
  return mode == Mode::kD3 || mode == Mode::kNoDifficulty ||
         mode == Mode::kNoDependability;
}

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

// One instruction/response pair of the pool. token_count counts response
// tokens under the extractor's tokenizer.
struct SampleRecord {
  std::string id;
  std::string instruction;
  std::string response;
  std::int64_t token_count = 0;

  bool operator==(const SampleRecord&) const = default;
};

// Per-token gold log-probabilities (natural log, <= 0) and predictive
// entropies (nats) of one sample's response under one model snapshot.
// uncond_logprobs holds response-only log-probabilities for the IFD baseline.
struct TokenTrace {
  std::string sample_id;
  std::vector<double> gold_logprobs;
  std::vector<double> entropies;
  std::optional<std::vector<double>> uncond_logprobs;

  bool operator==(const TokenTrace&) const = default;
};

struct DependabilityLogits {
  std::string sample_id;
  double logit_pos = 0.0;
  double logit_neg = 0.0;

  bool operator==(const DependabilityLogits&) const = default;
};

// Dense row-major float32 matrix, one row per pooled sample in manifest order.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  EmbeddingMatrix(std::uint32_t dim, std::size_t count)
      : dim_(dim), data_(static_cast<std::size_t>(dim) * count, 0.0f) {}
  EmbeddingMatrix(std::uint32_t dim, std::vector<float> data)
      : dim_(dim), data_(std::move(data)) {
    if (dim_ == 0 || data_.size() % dim_ != 0) {
      throw DomainError("embedding data size is not a multiple of dim");
    }
  }

  std::uint32_t dim() const { return dim_; }
  std::size_t count() const { return dim_ == 0 ? 0 : data_.size() / dim_; }

  std::span<const float> row(std::size_t i) const {
    return {data_.data() + i * dim_, dim_};
  }
  std::span<float> row(std::size_t i) { return {data_.data() + i * dim_, dim_}; }

  std::span<const float> data() const { return data_; }
  std::span<float> data() { return data_; }
  std::size_t payload_bytes() const { return data_.size() * sizeof(float); }

  bool operator==(const EmbeddingMatrix&) const = default;

 private:
  std::uint32_t dim_ = 0;
  std::vector<float> data_;
};

struct ScoringConfig {
  double alpha = 1.0;  // sigmoid temperature
  double beta = 1.0;   // entropy normalization exponent
  std::int64_t vocab_size = 32000;

  void validate() const {
    if (!(alpha > 0.0) || !std::isfinite(alpha)) {
      throw ConfigError("alpha must be a finite positive number");
    }
    if (!(beta > 0.0) || !std::isfinite(beta)) {
      throw ConfigError("beta must be a finite positive number");
    }
    if (vocab_size < 2) throw ConfigError("vocab_size must be >= 2");
  }

  // ln(vocab_size), the entropy of a uniform next-token distribution.
  double max_entropy() const { return std::log(static_cast<double>(vocab_size)); }

  bool operator==(const ScoringConfig&) const = default;
};

struct SelectionConfig {
  double budget = 0.05;  // fraction k of the pool to select over all rounds
  int rounds = 1;
  std::uint64_t seed = 0;
  Mode mode = Mode::kD3;
  std::set<std::string> exclude_ids;

  // Total number of picks: round(k * N), half-up.
  static std::size_t total_picks(double budget, std::size_t pool_size) {
    return static_cast<std::size_t>(
        std::floor(budget * static_cast<double>(pool_size) + 0.5));
  }

  void validate(std::size_t pool_size) const {
    if (!(budget > 0.0 && budget <= 1.0)) {
      throw ConfigError("budget must lie in (0, 1]");
    }
    if (rounds < 1) throw ConfigError("rounds must be >= 1");
    std::size_t total = total_picks(budget, pool_size);
    if (total < static_cast<std::size_t>(rounds)) {
      throw ConfigError("round(k*N) = " + std::to_string(total) +
                        " is smaller than the round count " +
                        std::to_string(rounds));
    }
  }

  bool operator==(const SelectionConfig&) const = default;
};

struct ScoreRow {
  std::string id;
  double d2 = 0.0;  // difficulty
  double d3 = 0.0;  // dependability
  double weight = 0.0;  // d2 * d3

  bool operator==(const ScoreRow&) const = default;
};

struct ScoreTable {
  std::vector<ScoreRow> rows;

  bool operator==(const ScoreTable&) const = default;
};

struct RoundManifest {
  int round_index = 1;
  std::vector<std::string> selected_ids;  // pick order
  std::string first_pick_id;
  std::vector<double> objective_trace;
  std::string config_fingerprint;

  bool operator==(const RoundManifest&) const = default;
};

// ---------------------------------------------------------------------------
// Pool indexing
// ---------------------------------------------------------------------------

// Maps sample ids to manifest positions. Throws on duplicate ids.
class PoolIndex {
 public:
  PoolIndex() = default;
  explicit PoolIndex(std::span<const SampleRecord> pool) {
    index_.reserve(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (!index_.emplace(pool[i].id, i).second) {
        throw ValidationError("duplicate sample id '" + pool[i].id + "'");
      }
    }
  }

  std::optional<std::size_t> find(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t at(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) {
      throw ValidationError("unknown sample id '" + id + "'");
    }
    return it->second;
  }

  std::size_t size() const { return index_.size(); }

 private:
  std::unordered_map<std::string, std::size_t> index_;
};

// Reorders keyed records into manifest order. Missing, unknown and duplicate
// ids raise ValidationError naming `what`.
template <typename Record, typename KeyFn>
std::vector<Record> align_to_pool(std::span<const SampleRecord> pool,
                                  std::span<const Record> records,
                                  KeyFn key, std::string_view what) {
  PoolIndex index(pool);
  std::vector<std::optional<std::size_t>> slot(pool.size());
  for (std::size_t r = 0; r < records.size(); ++r) {
    const std::string& id = key(records[r]);
    auto pos = index.find(id);
    if (!pos) {
      throw ValidationError(std::string(what) + " for unknown sample '" + id + "'");
    }
    if (slot[*pos]) {
      throw ValidationError("duplicate " + std::string(what) + " for sample '" +
                            id + "'");
    }
    slot[*pos] = r;
  }
  std::vector<Record> out;
  out.reserve(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (!slot[i]) {
      throw ValidationError("missing " + std::string(what) + " for sample '" +
                            pool[i].id + "'");
    }
    out.push_back(records[*slot[i]]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pool validation
// ---------------------------------------------------------------------------

struct Violation {
  std::string sample_id;  // empty for file-level problems
  std::string message;

  bool operator==(const Violation&) const = default;
};

struct ValidationReport {
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }
  std::string to_text() const {
    std::string out;
    for (const auto& v : violations) {
      out += v.sample_id.empty() ? std::string("<pool>") : v.sample_id;
      out += ": ";
      out += v.message;
      out += '\n';
    }
    return out;
  }
};

// Inputs to validate_pool. Absent optionals are not checked.
struct PoolInputs {
  std::span<const SampleRecord> manifest;
  std::optional<std::span<const TokenTrace>> traces;
  const EmbeddingMatrix* embeddings = nullptr;
  std::optional<std::span<const DependabilityLogits>> dependability;
};

namespace detail {

inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void check_trace(const TokenTrace& trace, std::int64_t token_count,
                        double entropy_bound, std::vector<Violation>& out) {
  const std::string& id = trace.sample_id;
  auto n = static_cast<std::size_t>(token_count);
  if (trace.gold_logprobs.size() != n) {
    out.push_back({id, "gold_logprobs length " +
                           std::to_string(trace.gold_logprobs.size()) +
                           " != token_count " + std::to_string(token_count)});
  }
  if (trace.entropies.size() != n) {
    out.push_back({id, "entropies length " +
                           std::to_string(trace.entropies.size()) +
                           " != token_count " + std::to_string(token_count)});
  }
  for (std::size_t t = 0; t < trace.gold_logprobs.size(); ++t) {
    double lp = trace.gold_logprobs[t];
    if (!std::isfinite(lp)) {
      out.push_back({id, "non-finite gold_logprob at token " + std::to_string(t)});
    } else if (lp > 0.0) {
      out.push_back({id, "positive gold_logprob " + fmt_double(lp) +
                             " at token " + std::to_string(t)});
    }
  }
  for (std::size_t t = 0; t < trace.entropies.size(); ++t) {
    double h = trace.entropies[t];
    if (!std::isfinite(h)) {
      out.push_back({id, "non-finite entropy at token " + std::to_string(t)});
    } else if (h < 0.0) {
      out.push_back({id, "negative entropy " + fmt_double(h) + " at token " +
                             std::to_string(t)});
    } else if (h > entropy_bound) {
      out.push_back({id, "entropy " + fmt_double(h) + " at token " +
                             std::to_string(t) + " exceeds ln(vocab_size) bound " +
                             fmt_double(entropy_bound)});
    }
  }
  if (trace.uncond_logprobs) {
    const auto& u = *trace.uncond_logprobs;
    if (u.size() != n) {
      out.push_back({id, "uncond_logprobs length " + std::to_string(u.size()) +
                             " != token_count " + std::to_string(token_count)});
    }
    for (std::size_t t = 0; t < u.size(); ++t) {
      if (!std::isfinite(u[t]) || u[t] > 0.0) {
        out.push_back({id, "invalid uncond_logprob at token " + std::to_string(t)});
      }
    }
  }
}

}  // namespace detail

// Relative slack on the ln(vocab_size) entropy ceiling.
inline constexpr double kEntropyTolerance = 1e-6;

// Checks every pool invariant and reports all violations in manifest order,
// followed by records that reference unknown samples. Never throws on
// finite or non-finite data; the caller decides what a violation means.
inline ValidationReport validate_pool(const PoolInputs& in,
                                      const ScoringConfig& config) {
  ValidationReport report;
  auto& out = report.violations;
  const auto& pool = in.manifest;

  std::unordered_map<std::string, std::size_t> index;
  index.reserve(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto& s = pool[i];
    if (!index.emplace(s.id, i).second) {
      out.push_back({s.id, "duplicate id in pool manifest"});
    }
    if (s.token_count < 1) out.push_back({s.id, "token_count must be >= 1"});
    if (s.instruction.empty()) out.push_back({s.id, "empty instruction"});
    if (s.response.empty()) out.push_back({s.id, "empty response"});
  }
  if (pool.empty()) out.push_back({"", "pool manifest is empty"});

  const double entropy_bound =
      std::log(static_cast<double>(std::max<std::int64_t>(config.vocab_size, 2))) *
      (1.0 + kEntropyTolerance);

  std::vector<Violation> orphans;

  if (in.traces) {
    std::vector<const TokenTrace*> by_sample(pool.size(), nullptr);
    for (const auto& t : *in.traces) {
      auto it = index.find(t.sample_id);
      if (it == index.end()) {
        orphans.push_back({t.sample_id, "trace for sample not in pool manifest"});
      } else if (by_sample[it->second]) {
        orphans.push_back({t.sample_id, "duplicate trace"});
      } else {
        by_sample[it->second] = &t;
      }
    }
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (!by_sample[i]) {
        out.push_back({pool[i].id, "missing trace"});
      } else {
        detail::check_trace(*by_sample[i], pool[i].token_count, entropy_bound, out);
      }
    }
  }

  if (in.dependability) {
    std::vector<const DependabilityLogits*> by_sample(pool.size(), nullptr);
    for (const auto& d : *in.dependability) {
      auto it = index.find(d.sample_id);
      if (it == index.end()) {
        orphans.push_back({d.sample_id, "dependability for sample not in pool manifest"});
      } else if (by_sample[it->second]) {
        orphans.push_back({d.sample_id, "duplicate dependability record"});
      } else {
        by_sample[it->second] = &d;
      }
    }
    for (std::size_t i = 0; i < pool.size(); ++i) {
      const auto* d = by_sample[i];
      if (!d) {
        out.push_back({pool[i].id, "missing dependability logits"});
      } else if (!std::isfinite(d->logit_pos) || !std::isfinite(d->logit_neg)) {
        out.push_back({pool[i].id, "non-finite dependability logit"});
      }
    }
  }

  if (in.embeddings) {
    const auto& emb = *in.embeddings;
    if (emb.count() != pool.size()) {
      out.push_back({"", "embedding row count " + std::to_string(emb.count()) +
                             " != pool size " + std::to_string(pool.size())});
    }
    std::size_t rows = std::min(emb.count(), pool.size());
    for (std::size_t i = 0; i < rows; ++i) {
      auto row = emb.row(i);
      double sq = 0.0;
      bool finite = true;
      for (std::size_t j = 0; j < row.size(); ++j) {
        if (!std::isfinite(row[j])) {
          out.push_back({pool[i].id, "non-finite embedding value at column " +
                                         std::to_string(j)});
          finite = false;
          break;
        }
        sq += static_cast<double>(row[j]) * row[j];
      }
      if (finite && !(sq > 0.0)) {
        out.push_back({pool[i].id, "zero-norm embedding row"});
      }
    }
  }

  out.insert(out.end(), orphans.begin(), orphans.end());
  return report;
}

}  // namespace d3sel

#endif  // D3SEL_CORE_HPP
