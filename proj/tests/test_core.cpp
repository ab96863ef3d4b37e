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

#include <cmath>
#include <limits>

#include "d3sel/core.hpp"
#include "test_util.hpp"

namespace d3sel {
namespace {

using testing::make_pool;

struct ConsistentPool {
  std::vector<SampleRecord> pool = make_pool(3, 2);
  std::vector<TokenTrace> traces;
  std::vector<DependabilityLogits> dep;
  EmbeddingMatrix emb{2, 3};
  ScoringConfig config{1.0, 1.0, 4};

  ConsistentPool() {
    for (const auto& s : pool) {
      traces.push_back({s.id, {-0.5, -1.0}, {0.1, 0.2}, std::nullopt});
      dep.push_back({s.id, 1.0, -1.0});
    }
    for (std::size_t i = 0; i < 3; ++i) {
      emb.row(i)[0] = 1.0f + static_cast<float>(i);
      emb.row(i)[1] = 0.5f;
    }
  }

  PoolInputs inputs() const {
    PoolInputs in;
    in.manifest = pool;
    in.traces = std::span<const TokenTrace>(traces);
    in.embeddings = &emb;
    in.dependability = std::span<const DependabilityLogits>(dep);
    return in;
  }
};

TEST(ValidatePool, ConsistentPoolHasEmptyReport) {
  ConsistentPool p;
  EXPECT_TRUE(validate_pool(p.inputs(), p.config).ok());
}

TEST(ValidatePool, EntropyAboveBoundNamesSampleAndToken) {
  ConsistentPool p;
  p.traces[1].entropies[1] = std::log(4.0) * 1.01;
  auto report = validate_pool(p.inputs(), p.config);
  ASSERT_EQ(report.violations.size(), 1u);
  EXPECT_EQ(report.violations[0].sample_id, "s1");
  EXPECT_NE(report.violations[0].message.find("token 1"), std::string::npos);
}

TEST(ValidatePool, EntropyWithinRelativeToleranceIsAccepted) {
  ConsistentPool p;
  p.traces[0].entropies[0] = std::log(4.0) * (1.0 + 5e-7);
  EXPECT_TRUE(validate_pool(p.inputs(), p.config).ok());
}

TEST(ValidatePool, ZeroEmbeddingRow) {
  ConsistentPool p;
  p.emb.row(2)[0] = 0.0f;
  p.emb.row(2)[1] = 0.0f;
  auto report = validate_pool(p.inputs(), p.config);
  ASSERT_EQ(report.violations.size(), 1u);
  EXPECT_EQ(report.violations[0].sample_id, "s2");
  EXPECT_EQ(report.violations[0].message, "zero-norm embedding row");
}

TEST(ValidatePool, ReportsEveryViolationInManifestOrder) {
  ConsistentPool p;
  p.traces[2].gold_logprobs.pop_back();                      // length mismatch
  p.traces[0].gold_logprobs[0] = 0.25;                       // positive
  p.dep[1].logit_pos = std::numeric_limits<double>::quiet_NaN();
  p.emb.row(1)[0] = std::numeric_limits<float>::infinity();
  p.traces.push_back({"ghost", {-1.0}, {0.0}, std::nullopt});
  auto report = validate_pool(p.inputs(), p.config);
  ASSERT_EQ(report.violations.size(), 5u);
  EXPECT_EQ(report.violations[0].sample_id, "s0");
  EXPECT_EQ(report.violations[1].sample_id, "s2");
  EXPECT_EQ(report.violations[2].sample_id, "s1");  // dependability pass
  EXPECT_EQ(report.violations[3].sample_id, "s1");  // embedding pass
  EXPECT_EQ(report.violations[4].sample_id, "ghost");
}

TEST(ValidatePool, MissingRecordsAndBadManifestFields) {
  ConsistentPool p;
  p.pool[0].token_count = 0;
  p.pool[1].response.clear();
  p.traces.pop_back();
  p.dep.erase(p.dep.begin());
  auto report = validate_pool(p.inputs(), p.config);
  std::vector<std::string> msgs;
  for (const auto& v : report.violations) msgs.push_back(v.sample_id + ":" + v.message);
  EXPECT_NE(std::find(msgs.begin(), msgs.end(), "s0:token_count must be >= 1"), msgs.end());
  EXPECT_NE(std::find(msgs.begin(), msgs.end(), "s1:empty response"), msgs.end());
  EXPECT_NE(std::find(msgs.begin(), msgs.end(), "s2:missing trace"), msgs.end());
  EXPECT_NE(std::find(msgs.begin(), msgs.end(), "s0:missing dependability logits"), msgs.end());
}

TEST(ValidatePool, RowCountMismatch) {
  ConsistentPool p;
  p.emb = EmbeddingMatrix(2, std::vector<float>{1, 0, 0, 1});
  auto report = validate_pool(p.inputs(), p.config);
  ASSERT_EQ(report.violations.size(), 1u);
  EXPECT_NE(report.violations[0].message.find("row count 2 != pool size 3"), std::string::npos);
}

TEST(ValidatePool, TotalOnRandomGarbage) {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  const double specials[] = {std::numeric_limits<double>::quiet_NaN(),
                             std::numeric_limits<double>::infinity(), -0.0, 0.0};
  for (int trial = 0; trial < 200; ++trial) {
    ConsistentPool p;
    for (auto& t : p.traces) {
      for (auto& x : t.gold_logprobs) x = gen() % 4 == 0 ? specials[gen() % 4] : u(gen);
      for (auto& x : t.entropies) x = gen() % 4 == 0 ? specials[gen() % 4] : u(gen);
    }
    for (auto& d : p.dep) d.logit_neg = gen() % 3 == 0 ? specials[gen() % 4] : u(gen);
    EXPECT_NO_THROW(validate_pool(p.inputs(), p.config));
  }
}

TEST(Config, ScoringInvariants) {
  EXPECT_NO_THROW((ScoringConfig{1.0, 1.0, 2}.validate()));
  EXPECT_THROW((ScoringConfig{0.0, 1.0, 10}.validate()), ConfigError);
  EXPECT_THROW((ScoringConfig{1.0, -1.0, 10}.validate()), ConfigError);
  EXPECT_THROW((ScoringConfig{1.0, 1.0, 1}.validate()), ConfigError);
}

TEST(Config, SelectionInvariants) {
  SelectionConfig c;
  c.budget = 0.05;
  c.rounds = 4;
  EXPECT_NO_THROW(c.validate(1000));
  EXPECT_THROW(c.validate(50), ConfigError);  // round(2.5) = 3 < 4
  c.budget = 0.0;
  EXPECT_THROW(c.validate(1000), ConfigError);
  c.budget = 1.5;
  EXPECT_THROW(c.validate(1000), ConfigError);
  c.budget = 1.0;
  c.rounds = 0;
  EXPECT_THROW(c.validate(1000), ConfigError);
}

TEST(Config, ModeNamesRoundTrip) {
  for (auto m : {Mode::kD3, Mode::kNoDiversity, Mode::kNoDifficulty, Mode::kNoDependability,
                 Mode::kRand, Mode::kPpl, Mode::kIfd}) {
    EXPECT_EQ(parse_mode(to_string(m)), m);
  }
  EXPECT_THROW(parse_mode("best"), ConfigError);
}

TEST(PoolIndex, AlignReordersAndRejects) {
  auto pool = make_pool(3);
  std::vector<DependabilityLogits> dep{{"s2", 2, 0}, {"s0", 0, 0}, {"s1", 1, 0}};
  auto key = [](const DependabilityLogits& d) -> const std::string& { return d.sample_id; };
  auto aligned = align_to_pool<DependabilityLogits>(pool, dep, key, "logits");
  EXPECT_EQ(aligned[0].sample_id, "s0");
  EXPECT_EQ(aligned[2].logit_pos, 2.0);
  dep.push_back({"s1", 0, 0});
  EXPECT_THROW((align_to_pool<DependabilityLogits>(pool, dep, key, "logits")), ValidationError);
  dep.resize(2);
  EXPECT_THROW((align_to_pool<DependabilityLogits>(pool, dep, key, "logits")), ValidationError);

  pool.push_back(pool.front());
  EXPECT_THROW(PoolIndex{pool}, ValidationError);
}

}  // namespace
}  // namespace d3sel
