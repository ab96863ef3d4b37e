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

// d3sel: validate, score, select, pipeline and report commands.
//
// Exit codes: 0 success, 1 validation failure, 2 usage/I/O/config/format
// error, 3 pipeline paused awaiting external fine-tuning.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "d3sel/d3sel.hpp"

namespace fs = std::filesystem;
using namespace d3sel;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 1;
constexpr int kExitUsage = 2;
constexpr int kExitPaused = 3;

struct Options {
  std::string pool, traces, embeddings, dependability, scores, out, exclude;
  std::string mode = "d3";
  std::string strategy = "lazy";
  double alpha = 1.0;
  double beta = 1.0;
  std::int64_t vocab_size = 32000;
  double budget = 0.05;
  int rounds = 1;
  std::uint64_t seed = 0;
  unsigned threads = default_threads();
  std::vector<std::string> prior;
  // pipeline
  std::string config, resume;
  // report
  std::string judgments;
  std::vector<std::string> manifests;
  std::vector<std::string> score_tables;
};

// Thrown after the violation report has been printed.
struct InvalidInputs {
  std::string summary;
};

ScoringConfig scoring_config(const Options& o) {
  ScoringConfig c;
  c.alpha = o.alpha;
  c.beta = o.beta;
  c.vocab_size = o.vocab_size;
  c.validate();
  return c;
}

KernelOptions kernel_options(const Options& o) {
  KernelOptions k;
  if (o.strategy == "lazy") {
    k.strategy = KernelStrategy::kLazy;
  } else if (o.strategy == "dense") {
    k.strategy = KernelStrategy::kDense;
  } else {
    throw ConfigError("unknown strategy '" + o.strategy + "' (lazy|dense)");
  }
  k.threads = std::max(1u, o.threads);
  return k;
}

void fail_on_report(const ValidationReport& report) {
  if (report.ok()) return;
  std::cout << report.to_text();
  throw InvalidInputs{std::to_string(report.violations.size()) + " violation(s)"};
}

void add_shared_scoring_flags(CLI::App* cmd, Options& o) {
  cmd->add_option("--alpha", o.alpha, "sigmoid temperature for token loss")->default_str("1.0");
  cmd->add_option("--beta", o.beta, "entropy normalization exponent")->default_str("1.0");
  cmd->add_option("--vocab-size", o.vocab_size, "tokenizer vocabulary size")
      ->capture_default_str();
}

void add_mode_flag(CLI::App* cmd, Options& o) {
  cmd->add_option("--mode", o.mode,
                  "d3 | no_diversity | no_difficulty | no_dependability | rand | ppl | ifd")
      ->capture_default_str();
}

void add_threads_flag(CLI::App* cmd, Options& o) {
  cmd->add_option("--threads", o.threads, "worker threads")->capture_default_str();
}

struct Stats {
  double min = 0, mean = 0, max = 0;
};

Stats column_stats(const ScoreTable& t, double ScoreRow::*field) {
  Stats s;
  if (t.rows.empty()) return s;
  s.min = s.max = t.rows.front().*field;
  double sum = 0;
  for (const auto& r : t.rows) {
    s.min = std::min(s.min, r.*field);
    s.max = std::max(s.max, r.*field);
    sum += r.*field;
  }
  s.mean = sum / static_cast<double>(t.rows.size());
  return s;
}

// --- validate ----------------------------------------------------------------

int cmd_validate(const Options& o) {
  ScoringConfig scoring = scoring_config(o);
  auto pool = read_pool(o.pool).records;
  std::optional<std::vector<TokenTrace>> traces;
  std::optional<EmbeddingMatrix> emb;
  std::optional<std::vector<DependabilityLogits>> dep;
  if (!o.traces.empty()) traces = read_traces(o.traces).records;
  if (!o.embeddings.empty()) emb = read_embeddings(o.embeddings);
  if (!o.dependability.empty()) dep = read_dependability(o.dependability).records;

  PoolInputs in;
  in.manifest = pool;
  if (traces) in.traces = std::span<const TokenTrace>(*traces);
  if (emb) in.embeddings = &*emb;
  if (dep) in.dependability = std::span<const DependabilityLogits>(*dep);
  auto report = validate_pool(in, scoring);
  std::cout << report.to_text();
  std::cerr << "validate: " << pool.size() << " samples, " << report.violations.size()
            << " violation(s)\n";
  return report.ok() ? kExitOk : kExitInvalid;
}

// --- score -------------------------------------------------------------------

int cmd_score(const Options& o) {
  ScoringConfig scoring = scoring_config(o);
  Mode mode = parse_mode(o.mode);
  auto pool = read_pool(o.pool).records;
  auto traces = read_traces(o.traces).records;
  auto dep = read_dependability(o.dependability).records;

  PoolInputs in;
  in.manifest = pool;
  in.traces = std::span<const TokenTrace>(traces);
  in.dependability = std::span<const DependabilityLogits>(dep);
  fail_on_report(validate_pool(in, scoring));

  auto table = build_score_table(pool, traces, std::span<const DependabilityLogits>(dep),
                                 scoring, mode, std::max(1u, o.threads));
  write_scores(table, o.out);

  auto d2 = column_stats(table, &ScoreRow::d2);
  auto d3 = column_stats(table, &ScoreRow::d3);
  std::fprintf(stderr, "score: %zu samples -> %s\n", table.rows.size(), o.out.c_str());
  std::fprintf(stderr, "  d2 min %.6f mean %.6f max %.6f\n", d2.min, d2.mean, d2.max);
  std::fprintf(stderr, "  d3 min %.6f mean %.6f max %.6f\n", d3.min, d3.mean, d3.max);
  return kExitOk;
}

// --- select ------------------------------------------------------------------

int cmd_select(const Options& o) {
  ScoringConfig scoring = scoring_config(o);
  SelectionConfig selection;
  selection.budget = o.budget;
  selection.rounds = o.rounds;
  selection.seed = o.seed;
  selection.mode = parse_mode(o.mode);
  if (!o.exclude.empty()) selection.exclude_ids = read_id_list(o.exclude);
  KernelOptions kernel = kernel_options(o);

  auto pool = read_pool(o.pool).records;
  selection.validate(pool.size());
  InputDigests digests{{"pool", file_digest(o.pool)}};

  const Mode mode = selection.mode;
  const bool needs_scores = uses_coverage(mode) || mode == Mode::kNoDiversity;
  const bool needs_traces = mode == Mode::kPpl || mode == Mode::kIfd;

  std::vector<ScoreRow> scores;
  if (needs_scores) {
    if (o.scores.empty()) throw ConfigError("mode " + o.mode + " needs --scores");
    auto rows = read_scores(o.scores).records;
    scores = align_to_pool<ScoreRow>(
        pool, rows, [](const ScoreRow& r) -> const std::string& { return r.id; }, "score row");
    digests.emplace_back("scores", file_digest(o.scores));
  }
  std::optional<EmbeddingMatrix> emb;
  if (uses_coverage(mode)) {
    if (o.embeddings.empty()) throw ConfigError("mode " + o.mode + " needs --embeddings");
    emb = read_embeddings(o.embeddings);
    digests.emplace_back("embeddings", file_digest(o.embeddings));
  }
  std::vector<TokenTrace> traces;
  if (needs_traces) {
    if (o.traces.empty()) throw ConfigError("mode " + o.mode + " needs --traces");
    auto raw = read_traces(o.traces).records;
    if (mode == Mode::kIfd) {
      for (const auto& t : raw) {
        if (!t.uncond_logprobs) {
          throw ConfigError("mode ifd needs the uncond_logprobs field; missing for sample '" +
                            t.sample_id + "'");
        }
      }
    }
    traces = align_to_pool<TokenTrace>(
        pool, raw, [](const TokenTrace& t) -> const std::string& { return t.sample_id; },
        "trace");
    digests.emplace_back("traces", file_digest(o.traces));
  }

  PoolInputs in;
  in.manifest = pool;
  if (emb) in.embeddings = &*emb;
  if (needs_traces) in.traces = std::span<const TokenTrace>(traces);
  fail_on_report(validate_pool(in, scoring));

  std::vector<RoundManifest> previous;
  for (const auto& p : o.prior) {
    auto ms = read_manifests(p).records;
    previous.insert(previous.end(), ms.begin(), ms.end());
    digests.emplace_back("prior", file_digest(p));
  }
  const int round_index = static_cast<int>(previous.size()) + 1;
  auto quotas = plan_rounds(selection.budget, selection.rounds, pool.size());
  if (round_index > selection.rounds) {
    throw ConfigError("all " + std::to_string(selection.rounds) +
                      " rounds already have manifests");
  }

  PoolIndex index(pool);
  RoundRequest req;
  req.quota = quotas[static_cast<std::size_t>(round_index - 1)];
  req.seed = selection.seed;
  req.kernel = kernel;
  for (const auto& m : previous) {
    for (const auto& id : m.selected_ids) req.prior.push_back(index.at(id));
  }
  for (const auto& id : selection.exclude_ids) {
    if (auto pos = index.find(id)) req.excluded.push_back(*pos);
  }

  SelectionInputs sel;
  sel.pool = pool;
  sel.scores = scores;
  sel.embeddings = emb ? &*emb : nullptr;
  sel.traces = traces;
  auto picked = select(mode, sel, req);
  for (const auto& id : picked.ifd_excluded) {
    std::cerr << "select: ifd excluded '" << id << "' (response-only loss <= 1e-9)\n";
  }
  auto manifest = make_manifest(round_index, pool, picked,
                                config_fingerprint(scoring, selection, round_index, digests));
  write_manifests(std::span<const RoundManifest>(&manifest, 1), o.out);

  std::fprintf(stderr, "select: round %d, %zu selected -> %s\n", round_index,
               manifest.selected_ids.size(), o.out.c_str());
  if (!manifest.objective_trace.empty()) {
    std::fprintf(stderr, "  final objective %.9g\n", manifest.objective_trace.back());
  }
  return kExitOk;
}

// --- pipeline ----------------------------------------------------------------

constexpr const char* kStateFile = "pipeline_state.json";

fs::path manifest_path(const fs::path& dir, int r) {
  return dir / ("round_" + std::to_string(r) + ".selection.jsonl");
}
fs::path scores_path(const fs::path& dir, int r) {
  return dir / ("round_" + std::to_string(r) + ".scores.jsonl");
}

RoundInputs load_round_inputs(const PipelineConfigFile& cfg, int r, bool needs_embeddings) {
  if (static_cast<int>(cfg.rounds.size()) < r) {
    throw IoError("round " + std::to_string(r) + ": no inputs listed in the pipeline config");
  }
  const auto& paths = cfg.rounds[static_cast<std::size_t>(r - 1)];
  for (const auto* p : {&paths.traces, &paths.embeddings}) {
    if (!fs::exists(*p)) {
      throw IoError("round " + std::to_string(r) + ": missing input '" + p->string() + "'");
    }
  }
  RoundInputs in;
  in.traces = read_traces(paths.traces).records;
  if (needs_embeddings) in.embeddings = read_embeddings(paths.embeddings);
  in.digests = {{"traces", file_digest(paths.traces)},
                {"embeddings", file_digest(paths.embeddings)}};
  return in;
}

int cmd_pipeline(const Options& o) {
  auto cfg = read_pipeline_config(o.config);
  auto pool = read_pool(cfg.pool).records;
  auto dep = read_dependability(cfg.dependability).records;
  {
    PoolInputs in;
    in.manifest = pool;
    in.dependability = std::span<const DependabilityLogits>(dep);
    fail_on_report(validate_pool(in, cfg.scoring));
  }
  auto ctx = make_pipeline_context(
      pool, dep, cfg.scoring, cfg.selection, kernel_options(o),
      {{"pool", file_digest(cfg.pool)}, {"dependability", file_digest(cfg.dependability)}});

  fs::create_directories(cfg.output_dir);
  const fs::path state_path = cfg.output_dir / kStateFile;
  nlohmann::ordered_json state;
  std::vector<RoundManifest> previous;

  if (fs::exists(state_path)) {
    if (o.resume.empty()) {
      throw ConfigError("'" + state_path.string() +
                        "' exists; pass --resume <token> to continue this run");
    }
    const std::string bytes = read_bytes(state_path);
    if (sha256_hex(bytes) != o.resume) {
      throw ConfigError("resume token does not match '" + state_path.string() + "'");
    }
    state = nlohmann::ordered_json::parse(bytes);
    for (const auto& done : state.at("completed")) {
      const int r = done.at("round").get<int>();
      const fs::path mpath = manifest_path(cfg.output_dir, r);
      if (file_digest(mpath) != done.at("manifest_digest").get<std::string>()) {
        throw ConfigError("round " + std::to_string(r) + " manifest '" + mpath.string() +
                          "' changed since it was written (fingerprint mismatch)");
      }
      auto ms = read_manifests(mpath).records;
      if (ms.size() != 1 || ms.front().round_index != r) {
        throw ConfigError("round " + std::to_string(r) + " manifest is malformed");
      }
      // Recompute the round's fingerprint from the inputs as they are now.
      auto in = load_round_inputs(cfg, r, false);
      auto fp = round_fingerprint(ctx, r, in.digests, previous);
      if (fp != ms.front().config_fingerprint ||
          fp != done.at("fingerprint").get<std::string>()) {
        throw ConfigError("round " + std::to_string(r) +
                          " inputs or configuration changed since the round ran "
                          "(fingerprint mismatch)");
      }
      previous.push_back(ms.front());
    }
  } else {
    if (!o.resume.empty()) {
      throw ConfigError("--resume given but no pipeline state in '" +
                        cfg.output_dir.string() + "'");
    }
    state["rounds"] = cfg.selection.rounds;
    state["completed"] = nlohmann::ordered_json::array();
  }

  const int r = static_cast<int>(previous.size()) + 1;
  if (r > cfg.selection.rounds) {
    std::cerr << "pipeline: all " << cfg.selection.rounds << " rounds already complete\n";
    return kExitOk;
  }

  auto in = load_round_inputs(cfg, r, uses_coverage(cfg.selection.mode));
  auto out = run_round(ctx, r, in, previous);
  write_scores(out.scores, scores_path(cfg.output_dir, r));
  const std::string mdigest = write_manifests(
      std::span<const RoundManifest>(&out.manifest, 1), manifest_path(cfg.output_dir, r));
  for (const auto& id : out.ifd_excluded) {
    std::cerr << "pipeline: ifd excluded '" << id << "'\n";
  }

  nlohmann::ordered_json entry;
  entry["round"] = r;
  entry["manifest"] = manifest_path(cfg.output_dir, r).filename().string();
  entry["manifest_digest"] = mdigest;
  entry["fingerprint"] = out.manifest.config_fingerprint;
  state["completed"].push_back(entry);
  const std::string state_bytes = state.dump(2) + "\n";
  write_bytes(state_path, state_bytes);

  std::fprintf(stderr, "pipeline: round %d/%d selected %zu -> %s\n", r, cfg.selection.rounds,
               out.manifest.selected_ids.size(),
               manifest_path(cfg.output_dir, r).string().c_str());
  if (r < cfg.selection.rounds) {
    std::cout << "resume_token=" << sha256_hex(state_bytes) << "\n";
    std::cerr << "pipeline: paused. Fine-tune on " << manifest_path(cfg.output_dir, r).string()
              << ", extract round " << (r + 1)
              << " traces and embeddings with the new model, list them as rounds[" << r
              << "] in the config, then rerun with --resume <token>\n";
    return kExitPaused;
  }
  return kExitOk;
}

// --- report ------------------------------------------------------------------

int cmd_report(const Options& o) {
  std::string text;
  if (!o.judgments.empty()) {
    auto records = read_judgments(o.judgments).records;
    if (records.empty()) throw ConfigError("'" + o.judgments + "' holds no judgments");
    auto outcomes = classify_all(records);
    std::vector<Outcome> flat;
    for (const auto& t : outcomes) flat.push_back(t.outcome);
    text = format_winning_score(count_outcomes(flat), winning_score(flat));
  } else {
    if (o.manifests.empty()) throw ConfigError("report needs --judgments or --manifests");
    if (o.score_tables.size() != 1 && o.score_tables.size() != o.manifests.size()) {
      throw ConfigError("pass one --scores file, or one per manifest");
    }
    std::vector<RoundManifest> manifests;
    std::vector<ScoreTable> tables;
    for (const auto& path : o.manifests) {
      auto ms = read_manifests(path).records;
      if (ms.size() != 1) {
        throw ConfigError("'" + path + "' must hold exactly one manifest for a sweep row");
      }
      manifests.push_back(ms.front());
    }
    for (const auto& path : o.score_tables) tables.push_back({read_scores(path).records});
    std::vector<SweepPoint> points;
    for (std::size_t i = 0; i < manifests.size(); ++i) {
      points.push_back({&manifests[i], &tables[tables.size() == 1 ? 0 : i]});
    }
    auto rows = budget_sweep_report(points);
    if (!o.out.empty()) write_sweep(rows, o.out);
    text = format_sweep_text(rows);
  }
  std::cout << text;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"d3sel: diversity / difficulty / dependability data selection"};
  app.require_subcommand(1);
  Options o;

  auto* validate = app.add_subcommand("validate", "check pool inputs against every invariant");
  validate->add_option("--pool", o.pool, "pool manifest (JSONL)")->required();
  validate->add_option("--traces", o.traces, "token traces (JSONL)");
  validate->add_option("--embeddings", o.embeddings, "embedding matrix (binary)");
  validate->add_option("--dependability", o.dependability, "dependability logits (JSONL)");
  add_shared_scoring_flags(validate, o);

  auto* score = app.add_subcommand("score", "compute d2, d3 and weights");
  score->add_option("--pool", o.pool, "pool manifest (JSONL)")->required();
  score->add_option("--traces", o.traces, "token traces (JSONL)")->required();
  score->add_option("--dependability", o.dependability, "dependability logits (JSONL)")
      ->required();
  score->add_option("--out", o.out, "score table output (JSONL)")->required();
  add_mode_flag(score, o);
  add_shared_scoring_flags(score, o);
  add_threads_flag(score, o);

  auto* sel = app.add_subcommand("select", "select one round of samples");
  sel->add_option("--pool", o.pool, "pool manifest (JSONL)")->required();
  sel->add_option("--scores", o.scores, "score table (JSONL)");
  sel->add_option("--embeddings", o.embeddings, "embedding matrix (binary)");
  sel->add_option("--traces", o.traces, "token traces (JSONL), for ppl and ifd");
  sel->add_option("--out", o.out, "selection manifest output (JSONL)")->required();
  add_mode_flag(sel, o);
  sel->add_option("--budget,-k", o.budget, "fraction of the pool to select over all rounds")
      ->capture_default_str();
  sel->add_option("--rounds,-R", o.rounds, "number of selection rounds")->capture_default_str();
  sel->add_option("--seed", o.seed, "seed for the first pick and rand mode")
      ->capture_default_str();
  sel->add_option("--exclude", o.exclude, "file of ids that are never selected");
  sel->add_option("--prior", o.prior, "manifests of earlier rounds");
  sel->add_option("--strategy", o.strategy, "coverage update strategy: lazy | dense")
      ->capture_default_str();
  add_shared_scoring_flags(sel, o);
  add_threads_flag(sel, o);

  auto* pipe = app.add_subcommand("pipeline", "run the next round of a multi-round selection");
  pipe->add_option("--config", o.config, "pipeline config (JSON)")->required();
  pipe->add_option("--resume", o.resume, "resume token printed by the previous round");
  pipe->add_option("--strategy", o.strategy, "coverage update strategy: lazy | dense")
      ->capture_default_str();
  add_threads_flag(pipe, o);

  auto* rep = app.add_subcommand("report", "winning score or budget sweep table");
  rep->add_option("--judgments", o.judgments, "judgment records (JSONL)");
  rep->add_option("--manifests", o.manifests, "selection manifests, one per budget");
  rep->add_option("--scores", o.score_tables, "score table(s) for the manifests");
  rep->add_option("--out", o.out, "sweep table output (JSONL)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*validate) return cmd_validate(o);
    if (*score) return cmd_score(o);
    if (*sel) return cmd_select(o);
    if (*pipe) return cmd_pipeline(o);
    if (*rep) return cmd_report(o);
  } catch (const InvalidInputs& e) {
    std::cerr << "error: invalid inputs, " << e.summary << "\n";
    return kExitInvalid;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
