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

#include <gtest/gtest.h>

#include <numeric>
#include <random>
#include <set>

#include "d3sel/selection.hpp"
#include "test_util.hpp"

namespace d3sel {
namespace {

using testing::make_pool;

TEST(PlanRounds, Examples) {
  EXPECT_EQ(plan_rounds(0.05, 1, 1000), (std::vector<std::size_t>{50}));
  EXPECT_EQ(plan_rounds(0.05, 2, 1000), (std::vector<std::size_t>{25, 25}));
  EXPECT_EQ(plan_rounds(0.05, 4, 1030), (std::vector<std::size_t>{13, 13, 13, 13}));
  EXPECT_EQ(plan_rounds(0.05, 3, 1000), (std::vector<std::size_t>{17, 17, 16}));
  EXPECT_THROW(plan_rounds(0.001, 2, 1000), ConfigError);  // round(1) = 1 < 2
}

TEST(PlanRounds, SumAndBalanceProperty) {
  std::mt19937_64 gen(9);
  for (int i = 0; i < 500; ++i) {
    std::size_t n = 1 + gen() % 100000;
    double k = static_cast<double>(1 + gen() % 1000) / 1000.0;
    int r = 1 + static_cast<int>(gen() % 8);
    std::size_t total = static_cast<std::size_t>(std::floor(k * static_cast<double>(n) + 0.5));
    if (total < static_cast<std::size_t>(r)) {
      EXPECT_THROW(plan_rounds(k, r, n), ConfigError);
      continue;
    }
    auto q = plan_rounds(k, r, n);
    EXPECT_EQ(std::accumulate(q.begin(), q.end(), std::size_t{0}), total);
    EXPECT_LE(q.front() - q.back(), 1u);
    EXPECT_GE(q.back(), 1u);
    EXPECT_TRUE(std::is_sorted(q.rbegin(), q.rend()));
  }
}

struct Fixture {
  std::vector<SampleRecord> pool;
  std::vector<ScoreRow> scores;
  std::vector<TokenTrace> traces;
  EmbeddingMatrix emb;

  explicit Fixture(std::size_t n, std::uint64_t seed = 1) : pool(make_pool(n)) {
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    emb = testing::random_embeddings(n, 6, gen);
    for (const auto& s : pool) {
      double d2 = u(gen), d3 = u(gen);
      scores.push_back({s.id, d2, d3, d2 * d3});
      traces.push_back({s.id, {-3 * u(gen)}, {0.0}, std::vector<double>{-2 * u(gen) - 0.1}});
    }
  }

  SelectionInputs inputs() const {
    SelectionInputs in;
    in.pool = pool;
    in.scores = scores;
    in.embeddings = &emb;
    in.traces = traces;
    return in;
  }
};

TEST(Select, RandIsSeededAndWithoutReplacement) {
  Fixture f(100);
  RoundRequest req;
  req.quota = 30;
  req.seed = 42;
  auto a = select(Mode::kRand, f.inputs(), req);
  auto b = select(Mode::kRand, f.inputs(), req);
  EXPECT_EQ(a.picks, b.picks);
  EXPECT_EQ(std::set<std::size_t>(a.picks.begin(), a.picks.end()).size(), 30u);
  req.seed = 43;
  EXPECT_NE(select(Mode::kRand, f.inputs(), req).picks, a.picks);
  EXPECT_TRUE(a.objective_trace.empty());
}

TEST(Select, PplTakesHighestLoss) {
  auto pool = make_pool(3);
  std::vector<TokenTrace> traces{{"s0", {-2.0}, {0.0}, std::nullopt},
                                 {"s1", {-0.1}, {0.0}, std::nullopt},
                                 {"s2", {-1.0}, {0.0}, std::nullopt}};
  SelectionInputs in;
  in.pool = pool;
  in.traces = traces;
  RoundRequest req;
  req.quota = 2;
  EXPECT_EQ(select(Mode::kPpl, in, req).picks, (std::vector<std::size_t>{0, 2}));
}

TEST(Select, NoDiversityRanksWithIndexTieBreak) {
  auto pool = make_pool(3);
  std::vector<ScoreRow> scores{{"s0", 0.9, 1.0, 0.9}, {"s1", 0.9, 1.0, 0.9},
                               {"s2", 0.1, 1.0, 0.1}};
  SelectionInputs in;
  in.pool = pool;
  in.scores = scores;
  RoundRequest req;
  req.quota = 2;
  EXPECT_EQ(select(Mode::kNoDiversity, in, req).picks, (std::vector<std::size_t>{0, 1}));
}

TEST(Select, IfdRatioExcludesDegenerateResponseOnlyLoss) {
  auto pool = make_pool(4);
  std::vector<TokenTrace> traces{
      {"s0", {-1.0}, {0.0}, std::vector<double>{-2.0}},   // 0.5
      {"s1", {-3.0}, {0.0}, std::vector<double>{-1.0}},   // 3.0
      {"s2", {-1.0}, {0.0}, std::vector<double>{0.0}},    // excluded
      {"s3", {-1.5}, {0.0}, std::vector<double>{-1.0}}};  // 1.5
  SelectionInputs in;
  in.pool = pool;
  in.traces = traces;
  RoundRequest req;
  req.quota = 2;
  auto out = select(Mode::kIfd, in, req);
  EXPECT_EQ(out.picks, (std::vector<std::size_t>{1, 3}));
  EXPECT_EQ(out.ifd_excluded, (std::vector<std::string>{"s2"}));

  traces[3].uncond_logprobs.reset();
  EXPECT_THROW(select(Mode::kIfd, in, req), ConfigError);
}

TEST(Select, CoverageModesUseModeWeights) {
  Fixture f(80);
  RoundRequest req;
  req.quota = 10;
  req.seed = 3;
  for (Mode mode : {Mode::kD3, Mode::kNoDifficulty, Mode::kNoDependability}) {
    std::vector<double> w;
    for (const auto& r : f.scores) {
      w.push_back(mode == Mode::kNoDifficulty     ? r.d3
                  : mode == Mode::kNoDependability ? r.d2
                                                   : r.d2 * r.d3);
    }
    auto got = select(mode, f.inputs(), req);
    auto ref = testing::naive_greedy(f.emb, w, {}, testing::all_indices(80), 10, 3);
    EXPECT_EQ(got.picks, ref.picks) << to_string(mode);
  }
}

TEST(Select, NoDifficultyWithEqualDependabilityIsUnweightedKCenter) {
  Fixture f(120, 5);
  for (auto& r : f.scores) {
    r.d3 = 0.7;
    r.weight = r.d2 * r.d3;
  }
  RoundRequest req;
  req.quota = 25;
  req.seed = 8;
  auto got = select(Mode::kNoDifficulty, f.inputs(), req);
  std::vector<double> ones(120, 1.0);
  auto ref = testing::naive_greedy(f.emb, ones, {}, testing::all_indices(120), 25, 8);
  EXPECT_EQ(got.picks, ref.picks);
}

TEST(Select, PriorAndExcludedNeverPicked) {
  Fixture f(60);
  RoundRequest req;
  req.quota = 20;
  req.prior = {0, 1, 2, 3};
  req.excluded = {10, 11, 12};
  for (Mode mode : {Mode::kD3, Mode::kNoDiversity, Mode::kRand, Mode::kPpl, Mode::kIfd}) {
    auto out = select(mode, f.inputs(), req);
    ASSERT_EQ(out.picks.size(), 20u);
    for (auto p : out.picks) {
      EXPECT_FALSE(p <= 3 || (p >= 10 && p <= 12)) << to_string(mode) << " picked " << p;
    }
  }
  req.quota = 54;
  EXPECT_THROW(select(Mode::kRand, f.inputs(), req), ConfigError);
}

TEST(Select, MissingInputsAreConfigErrors) {
  Fixture f(10);
  auto in = f.inputs();
  in.embeddings = nullptr;
  RoundRequest req;
  req.quota = 2;
  EXPECT_THROW(select(Mode::kD3, in, req), ConfigError);
}

TEST(Manifest, CarriesIdsInPickOrder) {
  auto pool = make_pool(5);
  RoundSelection sel{{4, 1, 2}, {0.5, 0.25, 0.1}, {}};
  auto m = make_manifest(2, pool, sel, "abc");
  EXPECT_EQ(m.round_index, 2);
  EXPECT_EQ(m.selected_ids, (std::vector<std::string>{"s4", "s1", "s2"}));
  EXPECT_EQ(m.first_pick_id, "s4");
  EXPECT_EQ(m.config_fingerprint, "abc");
}

}  // namespace
}  // namespace d3sel
