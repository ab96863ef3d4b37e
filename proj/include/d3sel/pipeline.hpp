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

#ifndef D3SEL_PIPELINE_HPP
#define D3SEL_PIPELINE_HPP

// Multi-round scoring and selection. Round r scores the pool from traces and
// embeddings produced by the model fine-tuned after round r-1, excludes every
// earlier pick, and covers the pool starting from the union of earlier picks.
// Dependability is computed once.

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "d3sel/core.hpp"
#include "d3sel/io.hpp"
#include "d3sel/scoring.hpp"
#include "d3sel/selection.hpp"

namespace d3sel {

struct RoundInputs {
  std::vector<TokenTrace> traces;
  EmbeddingMatrix embeddings;
  InputDigests digests;  // folded into the round's fingerprint
};

struct PipelineContext {
  std::span<const SampleRecord> pool;
  std::vector<double> d3;  // manifest order
  ScoringConfig scoring;
  SelectionConfig selection;
  KernelOptions kernel;
  InputDigests shared_digests;  // pool, dependability, ...
};

inline PipelineContext make_pipeline_context(std::span<const SampleRecord> pool,
                                             std::span<const DependabilityLogits> dep,
                                             const ScoringConfig& scoring,
                                             const SelectionConfig& selection,
                                             const KernelOptions& kernel,
                                             InputDigests shared_digests = {}) {
  scoring.validate();
  selection.validate(pool.size());
  PipelineContext ctx;
  ctx.pool = pool;
  ctx.d3 = dependability_scores(pool, dep);
  ctx.scoring = scoring;
  ctx.selection = selection;
  ctx.kernel = kernel;
  ctx.shared_digests = std::move(shared_digests);
  return ctx;
}

struct RoundOutput {
  ScoreTable scores;
  RoundManifest manifest;
  std::vector<std::string> ifd_excluded;
};

// Digest of the ordered picks of earlier rounds.
inline std::string prior_selection_digest(std::span<const RoundManifest> previous) {
  Sha256 h;
  for (const auto& m : previous) {
    h.update("round " + std::to_string(m.round_index) + "\n");
    for (const auto& id : m.selected_ids) {
      h.update(id);
      h.update("\n", 1);
    }
  }
  return h.hex_digest();
}

inline std::string round_fingerprint(const PipelineContext& ctx, int round_index,
                                     const InputDigests& round_digests,
                                     std::span<const RoundManifest> previous) {
  InputDigests all = ctx.shared_digests;
  all.insert(all.end(), round_digests.begin(), round_digests.end());
  if (!previous.empty()) all.emplace_back("prior_selection", prior_selection_digest(previous));
  return config_fingerprint(ctx.scoring, ctx.selection, round_index, all);
}

inline RoundOutput run_round(const PipelineContext& ctx, int round_index,
                             const RoundInputs& in, std::span<const RoundManifest> previous) {
  const auto quotas = plan_rounds(ctx.selection.budget, ctx.selection.rounds, ctx.pool.size());
  if (round_index < 1 || round_index > ctx.selection.rounds) {
    throw ConfigError("round " + std::to_string(round_index) + " outside 1.." +
                      std::to_string(ctx.selection.rounds));
  }
  PoolInputs check;
  check.manifest = ctx.pool;
  check.traces = std::span<const TokenTrace>(in.traces);
  check.embeddings = uses_coverage(ctx.selection.mode) ? &in.embeddings : nullptr;
  auto report = validate_pool(check, ctx.scoring);
  if (!report.ok()) {
    throw ValidationError("round " + std::to_string(round_index) + " inputs are invalid:\n" +
                          report.to_text());
  }

  RoundOutput out;
  out.scores = build_score_table(ctx.pool, in.traces, std::span<const double>(ctx.d3),
                                 ctx.scoring, ctx.selection.mode, ctx.kernel.threads);

  PoolIndex index(ctx.pool);
  RoundRequest req;
  req.quota = quotas[static_cast<std::size_t>(round_index - 1)];
  req.seed = ctx.selection.seed;
  req.kernel = ctx.kernel;
  for (const auto& m : previous) {
    for (const auto& id : m.selected_ids) req.prior.push_back(index.at(id));
  }
  for (const auto& id : ctx.selection.exclude_ids) {
    if (auto pos = index.find(id)) req.excluded.push_back(*pos);
  }

  auto aligned = align_to_pool<TokenTrace>(
      ctx.pool, in.traces, [](const TokenTrace& t) -> const std::string& { return t.sample_id; },
      "trace");
  SelectionInputs sel;
  sel.pool = ctx.pool;
  sel.scores = out.scores.rows;
  sel.embeddings = &in.embeddings;
  sel.traces = aligned;
  auto picked = select(ctx.selection.mode, sel, req);
  out.ifd_excluded = picked.ifd_excluded;
  out.manifest = make_manifest(round_index, ctx.pool, picked,
                               round_fingerprint(ctx, round_index, in.digests, previous));
  return out;
}

struct PipelineResult {
  std::vector<RoundOutput> rounds;
  std::optional<int> halted_round;  // set when a round's inputs were unavailable
  std::string message;
};

// Supplies round r's inputs, or nullopt when they are not available.
using RoundInputProvider = std::function<std::optional<RoundInputs>(int round_index)>;

inline PipelineResult run_pipeline(const PipelineContext& ctx, const RoundInputProvider& inputs) {
  PipelineResult result;
  std::vector<RoundManifest> previous;
  for (int r = 1; r <= ctx.selection.rounds; ++r) {
    auto in = inputs(r);
    if (!in) {
      result.halted_round = r;
      result.message = "missing inputs for round " + std::to_string(r);
      return result;
    }
    result.rounds.push_back(run_round(ctx, r, *in, previous));
    previous.push_back(result.rounds.back().manifest);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Pipeline config file (JSON)
//
// {
//   "pool": "pool.jsonl",
//   "dependability": "dep.jsonl",
//   "rounds": [{"traces": "r1.traces.jsonl", "embeddings": "r1.emb"}, ...],
//   "scoring": {"alpha": 1.0, "beta": 1.0, "vocab_size": 32000},
//   "selection": {"budget": 0.05, "rounds": 2, "seed": 0, "mode": "d3",
//                 "exclude_ids": ["..."], "exclude_file": "warmup.txt"},
//   "output_dir": "out"
// }
//
// Relative paths resolve against the config file's directory. "rounds" may
// list fewer entries than selection.rounds while later rounds' inputs do not
// exist yet.
// ---------------------------------------------------------------------------

struct PipelineRoundPaths {
  std::filesystem::path traces;
  std::filesystem::path embeddings;
};

struct PipelineConfigFile {
  std::filesystem::path pool;
  std::filesystem::path dependability;
  std::vector<PipelineRoundPaths> rounds;
  ScoringConfig scoring;
  SelectionConfig selection;
  std::optional<std::filesystem::path> exclude_file;
  std::filesystem::path output_dir;
};

inline PipelineConfigFile read_pipeline_config(const std::filesystem::path& path) {
  const std::string text = read_bytes(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": malformed JSON (" + e.what() + ")", e.byte);
  }
  const auto base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path q(p);
    return q.is_absolute() ? q : base / q;
  };
  PipelineConfigFile cfg;
  try {
    cfg.pool = resolve(j.at("pool").get<std::string>());
    cfg.dependability = resolve(j.at("dependability").get<std::string>());
    cfg.output_dir = resolve(j.at("output_dir").get<std::string>());
    for (const auto& r : j.value("rounds", nlohmann::json::array())) {
      cfg.rounds.push_back({resolve(r.at("traces").get<std::string>()),
                            resolve(r.at("embeddings").get<std::string>())});
    }
    if (auto s = j.find("scoring"); s != j.end()) {
      cfg.scoring.alpha = s->value("alpha", cfg.scoring.alpha);
      cfg.scoring.beta = s->value("beta", cfg.scoring.beta);
      cfg.scoring.vocab_size = s->value("vocab_size", cfg.scoring.vocab_size);
    }
    if (auto s = j.find("selection"); s != j.end()) {
      cfg.selection.budget = s->value("budget", cfg.selection.budget);
      cfg.selection.rounds = s->value("rounds", cfg.selection.rounds);
      cfg.selection.seed = s->value("seed", cfg.selection.seed);
      cfg.selection.mode = parse_mode(s->value("mode", std::string("d3")));
      for (const auto& id : s->value("exclude_ids", nlohmann::json::array())) {
        cfg.selection.exclude_ids.insert(id.get<std::string>());
      }
      if (s->contains("exclude_file")) {
        cfg.exclude_file = resolve(s->at("exclude_file").get<std::string>());
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  cfg.scoring.validate();
  if (cfg.exclude_file) {
    auto ids = read_id_list(*cfg.exclude_file);
    cfg.selection.exclude_ids.insert(ids.begin(), ids.end());
  }
  for (const auto* p : {&cfg.pool, &cfg.dependability}) {
    if (!std::filesystem::exists(*p)) throw IoError("missing input '" + p->string() + "'");
  }
  if (static_cast<int>(cfg.rounds.size()) > cfg.selection.rounds) {
    throw ConfigError("config lists " + std::to_string(cfg.rounds.size()) +
                      " round inputs for " + std::to_string(cfg.selection.rounds) + " rounds");
  }
  return cfg;
}

}  // namespace d3sel

#endif  // D3SEL_PIPELINE_HPP
