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

// d3sel_synth: writes a synthetic pool (manifest, traces, dependability
// logits, embeddings) that passes `d3sel validate`. Useful for smoke tests
// and timing runs; the numbers mean nothing.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "d3sel/d3sel.hpp"

namespace fs = std::filesystem;
using namespace d3sel;

int main(int argc, char** argv) {
  CLI::App app{"d3sel_synth: synthetic pool generator"};
  std::size_t n = 1000;
  std::uint32_t dim = 64;
  int max_tokens = 16;
  std::int64_t vocab = 32000;
  std::uint64_t seed = 1;
  int clusters = 20;
  bool uncond = false;
  std::string out_dir = ".";
  app.add_option("--n", n, "pool size")->capture_default_str();
  app.add_option("--dim", dim, "embedding dimension")->capture_default_str();
  app.add_option("--max-tokens", max_tokens, "maximum response tokens")->capture_default_str();
  app.add_option("--vocab-size", vocab, "vocabulary size")->capture_default_str();
  app.add_option("--seed", seed, "generator seed")->capture_default_str();
  app.add_option("--clusters", clusters, "embedding clusters")->capture_default_str();
  app.add_flag("--uncond", uncond, "also emit response-only log-probabilities");
  app.add_option("--out-dir", out_dir, "output directory")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  try {
    fs::create_directories(out_dir);
    std::mt19937_64 gen(seed);
    std::uniform_int_distribution<int> len(1, std::max(1, max_tokens));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::exponential_distribution<double> loss(1.0);
    std::normal_distribution<float> gauss(0.0f, 1.0f);
    const double max_h = std::log(static_cast<double>(vocab));

    std::vector<SampleRecord> pool(n);
    std::vector<TokenTrace> traces(n);
    std::vector<DependabilityLogits> dep(n);
    for (std::size_t i = 0; i < n; ++i) {
      char id[32];
      std::snprintf(id, sizeof(id), "s%06zu", i);
      int t = len(gen);
      pool[i] = {id, "instruction " + std::to_string(i), "response " + std::to_string(i), t};
      traces[i].sample_id = id;
      for (int k = 0; k < t; ++k) {
        traces[i].gold_logprobs.push_back(-loss(gen));
        traces[i].entropies.push_back(unit(gen) * max_h);
      }
      if (uncond) {
        traces[i].uncond_logprobs.emplace();
        for (int k = 0; k < t; ++k) traces[i].uncond_logprobs->push_back(-loss(gen) - 0.01);
      }
      dep[i] = {id, 4.0 * unit(gen) - 2.0, 4.0 * unit(gen) - 2.0};
    }

    std::vector<float> centers(static_cast<std::size_t>(clusters) * dim);
    for (auto& c : centers) c = gauss(gen);
    EmbeddingMatrix emb(dim, n);
    std::uniform_int_distribution<int> pick(0, clusters - 1);
    for (std::size_t i = 0; i < n; ++i) {
      auto row = emb.row(i);
      const float* c = &centers[static_cast<std::size_t>(pick(gen)) * dim];
      for (std::uint32_t k = 0; k < dim; ++k) row[k] = c[k] + 0.5f * gauss(gen);
    }

    const fs::path dir(out_dir);
    write_pool(pool, dir / "pool.jsonl");
    write_traces(traces, dir / "traces.jsonl");
    write_dependability(dep, dir / "dependability.jsonl");
    write_embeddings(emb, dir / "embeddings.d3em");
    std::fprintf(stderr, "synth: %zu samples, dim %u -> %s\n", n, dim, out_dir.c_str());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
