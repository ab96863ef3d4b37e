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

#ifndef D3SEL_REPORT_HPP
#define D3SEL_REPORT_HPP

// Evaluation aggregates: pairwise judge outcomes, the winning score, and the
// budget-sweep bookkeeping table.

#include <array>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "d3sel/core.hpp"
#include "d3sel/io.hpp"

namespace d3sel {

// One judge verdict. order says which response was shown first (1 or 2);
// score_a belongs to the candidate model, score_b to the reference model.
struct JudgmentRecord {
  std::string test_id;
  int order = 1;
  double score_a = 0.0;
  double score_b = 0.0;

  bool operator==(const JudgmentRecord&) const = default;
};

enum class Outcome { kWin, kTie, kLoss };

inline std::string_view to_string(Outcome o) {
  switch (o) {
    case Outcome::kWin: return "win";
    case Outcome::kTie: return "tie";
    case Outcome::kLoss: return "loss";
  }
  return "tie";
}

namespace detail {

inline int local_sign(const JudgmentRecord& r) {
  return (r.score_a > r.score_b) - (r.score_a < r.score_b);
}

}  // namespace detail

// Combines the two ordered verdicts: a win (loss) needs at least one win
// (loss) and no loss (win); everything else is a tie.
inline Outcome classify_outcome(const JudgmentRecord& first, const JudgmentRecord& second) {
  if (first.test_id != second.test_id) {
    throw ValidationError("judgments for different tests: '" + first.test_id + "' vs '" +
                          second.test_id + "'");
  }
  if (first.order == second.order) {
    throw ValidationError("test '" + first.test_id + "' is missing order " +
                          std::to_string(first.order == 1 ? 2 : 1));
  }
  int a = detail::local_sign(first);
  int b = detail::local_sign(second);
  if (a >= 0 && b >= 0 && (a > 0 || b > 0)) return Outcome::kWin;
  if (a <= 0 && b <= 0 && (a < 0 || b < 0)) return Outcome::kLoss;
  return Outcome::kTie;
}

struct TestOutcome {
  std::string test_id;
  Outcome outcome;
};

// Groups records by test_id (first-appearance order) and classifies each
// pair. Every test needs exactly one record per order.
inline std::vector<TestOutcome> classify_all(std::span<const JudgmentRecord> records) {
  std::vector<std::string> order;
  std::unordered_map<std::string, std::array<const JudgmentRecord*, 2>> by_test;
  for (const auto& r : records) {
    if (r.order != 1 && r.order != 2) {
      throw ValidationError("test '" + r.test_id + "' has order " + std::to_string(r.order) +
                            "; expected 1 or 2");
    }
    auto [it, inserted] = by_test.try_emplace(r.test_id);
    if (inserted) {
      it->second = {nullptr, nullptr};
      order.push_back(r.test_id);
    }
    auto& slot = it->second[r.order - 1];
    if (slot) {
      throw ValidationError("test '" + r.test_id + "' has two records for order " +
                            std::to_string(r.order));
    }
    slot = &r;
  }
  std::vector<TestOutcome> out;
  out.reserve(order.size());
  for (const auto& id : order) {
    const auto& pair = by_test.at(id);
    if (!pair[0] || !pair[1]) {
      throw ValidationError("test '" + id + "' is missing order " +
                            std::to_string(pair[0] ? 2 : 1));
    }
    out.push_back({id, classify_outcome(*pair[0], *pair[1])});
  }
  return out;
}

struct OutcomeCounts {
  std::size_t wins = 0;
  std::size_t ties = 0;
  std::size_t losses = 0;
  std::size_t total() const { return wins + ties + losses; }
};

inline OutcomeCounts count_outcomes(std::span<const Outcome> outcomes) {
  OutcomeCounts c;
  for (Outcome o : outcomes) {
    switch (o) {
      case Outcome::kWin: ++c.wins; break;
      case Outcome::kTie: ++c.ties; break;
      case Outcome::kLoss: ++c.losses; break;
    }
  }
  return c;
}

// (wins - losses) / total + 1, in [0, 2].
inline double winning_score(std::span<const Outcome> outcomes) {
  if (outcomes.empty()) throw DomainError("winning score of an empty outcome set");
  auto c = count_outcomes(outcomes);
  const double n = static_cast<double>(c.total());
  return (static_cast<double>(c.wins) - static_cast<double>(c.losses) + n) / n;
}

// --- budget sweep ------------------------------------------------------------

struct SweepPoint {
  const RoundManifest* manifest = nullptr;
  const ScoreTable* scores = nullptr;
};

struct SweepRow {
  double budget_fraction = 0.0;
  std::size_t selected = 0;
  double mean_d2 = 0.0;
  double mean_d3 = 0.0;
  std::optional<double> final_objective;

  bool operator==(const SweepRow&) const = default;
};

inline std::vector<SweepRow> budget_sweep_report(std::span<const SweepPoint> points) {
  if (points.empty()) throw DomainError("budget sweep needs at least one manifest");
  const ScoreTable& reference = *points.front().scores;
  std::vector<SweepRow> rows;
  for (const auto& p : points) {
    const auto& table = *p.scores;
    bool same_pool = table.rows.size() == reference.rows.size();
    for (std::size_t i = 0; same_pool && i < table.rows.size(); ++i) {
      same_pool = table.rows[i].id == reference.rows[i].id;
    }
    if (!same_pool) throw ValidationError("score tables describe different pools");

    std::unordered_map<std::string, const ScoreRow*> by_id;
    for (const auto& r : table.rows) by_id.emplace(r.id, &r);

    SweepRow row;
    row.selected = p.manifest->selected_ids.size();
    row.budget_fraction =
        static_cast<double>(row.selected) / static_cast<double>(table.rows.size());
    for (const auto& id : p.manifest->selected_ids) {
      auto it = by_id.find(id);
      if (it == by_id.end()) {
        throw ValidationError("manifest id '" + id + "' is absent from the score table");
      }
      row.mean_d2 += it->second->d2;
      row.mean_d3 += it->second->d3;
    }
    if (row.selected > 0) {
      row.mean_d2 /= static_cast<double>(row.selected);
      row.mean_d3 /= static_cast<double>(row.selected);
    }
    if (!p.manifest->objective_trace.empty()) {
      row.final_objective = p.manifest->objective_trace.back();
    }
    rows.push_back(row);
  }
  return rows;
}

inline std::string format_sweep_text(std::span<const SweepRow> rows) {
  std::string out = "budget    selected   mean_d2    mean_d3    final_objective\n";
  char buf[160];
  for (const auto& r : rows) {
    char obj[32] = "n/a";
    if (r.final_objective) std::snprintf(obj, sizeof(obj), "%.6f", *r.final_objective);
    std::snprintf(buf, sizeof(buf), "%-9.4f %-10zu %-10.6f %-10.6f %s\n", r.budget_fraction,
                  r.selected, r.mean_d2, r.mean_d3, obj);
    out += buf;
  }
  return out;
}

inline std::string format_winning_score(const OutcomeCounts& c, double score) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "wins = %zu\nties = %zu\nlosses = %zu\nwinning_score = %.3f\n",
                c.wins, c.ties, c.losses, score);
  return buf;
}

// --- files -----------------------------------------------------------------

inline JsonlRecords<JudgmentRecord> read_judgments(const std::filesystem::path& path) {
  auto out = detail::read_jsonl<JudgmentRecord>(path, [](detail::LineContext& c) {
    JudgmentRecord r;
    r.test_id = c.string("test_id");
    r.order = static_cast<int>(c.integer("order"));
    r.score_a = c.number("score_a");
    r.score_b = c.number("score_b");
    if (r.order != 1 && r.order != 2) c.fail("order must be 1 or 2");
    return r;
  });
  detail::reject_duplicate_keys(
      out.records,
      [](const JudgmentRecord& r) { return r.test_id + "#" + std::to_string(r.order); },
      "judgment (test_id#order)");
  return out;
}

inline std::string write_judgments(std::span<const JudgmentRecord> records,
                                   const std::filesystem::path& path) {
  return detail::write_jsonl(records, path, [](const JudgmentRecord& r) {
    detail::require_finite(r.score_a, "score_a");
    detail::require_finite(r.score_b, "score_b");
    detail::ordered_json j;
    j["test_id"] = r.test_id;
    j["order"] = r.order;
    j["score_a"] = r.score_a;
    j["score_b"] = r.score_b;
    return j;
  });
}

inline std::string write_sweep(std::span<const SweepRow> rows, const std::filesystem::path& path) {
  return detail::write_jsonl(rows, path, [](const SweepRow& r) {
    detail::ordered_json j;
    j["budget_fraction"] = r.budget_fraction;
    j["selected"] = r.selected;
    j["mean_d2"] = r.mean_d2;
    j["mean_d3"] = r.mean_d3;
    if (r.final_objective) {
      j["final_objective"] = *r.final_objective;
    } else {
      j["final_objective"] = nullptr;
    }
    return j;
  });
}

}  // namespace d3sel

#endif  // D3SEL_REPORT_HPP
