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

#ifndef D3SEL_IO_HPP
#define D3SEL_IO_HPP

// File formats:
//
//   pool manifest     JSONL {id, instruction, response, token_count}
//   token traces      JSONL {id, gold_logprobs, entropies[, uncond_logprobs]}
//   dependability     JSONL {id, logit_pos, logit_neg}
//   score table       JSONL {id, d2, d3, weight}
//   selection         JSONL, one RoundManifest per line
//   judgments         JSONL {test_id, order, score_a, score_b}
//   embeddings        binary, little-endian:
//                       0  "D3EM"
//                       4  u32 version (1)
//                       8  u32 dim
//                      12  u64 count
//                      20  count*dim float32, row-major, manifest order
//
// Writers emit fields in the order above and never emit unknown fields;
// readers keep unknown fields in `extras`. Every writer returns the SHA-256
// of the exact bytes it wrote.

#include <openssl/evp.h>

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "d3sel/core.hpp"

namespace d3sel {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

// ---------------------------------------------------------------------------
// Digests
// ---------------------------------------------------------------------------

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), &EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) {
      throw Error("cannot initialize SHA-256");
    }
  }

  void update(const void* data, std::size_t size) {
    if (size != 0 && EVP_DigestUpdate(ctx_.get(), data, size) != 1) {
      throw Error("SHA-256 update failed");
    }
  }
  void update(std::string_view s) { update(s.data(), s.size()); }

  std::string hex_digest() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_.get(), md.data(), &len) != 1) {
      throw Error("SHA-256 finalize failed");
    }
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
      out.push_back(kHex[md[i] >> 4]);
      out.push_back(kHex[md[i] & 0xF]);
    }
    return out;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

inline std::string sha256_hex(std::string_view bytes) {
  Sha256 h;
  h.update(bytes);
  return h.hex_digest();
}

inline std::string file_digest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  Sha256 h;
  std::vector<char> buf(1 << 20);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  if (in.bad()) throw IoError("read error on '" + path.string() + "'");
  return h.hex_digest();
}

inline std::string write_bytes(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw IoError("write failed on '" + path.string() + "'");
  return sha256_hex(bytes);
}

inline std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read error on '" + path.string() + "'");
  return data;
}

// ---------------------------------------------------------------------------
// Embeddings
// ---------------------------------------------------------------------------

inline constexpr char kEmbeddingMagic[4] = {'D', '3', 'E', 'M'};
inline constexpr std::uint32_t kEmbeddingVersion = 1;
inline constexpr std::size_t kEmbeddingHeaderBytes = 20;

inline std::string write_embeddings(const EmbeddingMatrix& matrix,
                                    const std::filesystem::path& path) {
  if (matrix.dim() == 0) throw DomainError("embedding dim must be >= 1");
  auto data = matrix.data();
  for (std::size_t k = 0; k < data.size(); ++k) {
    if (!std::isfinite(data[k])) {
      throw DomainError("non-finite embedding value at row " +
                        std::to_string(k / matrix.dim()));
    }
  }
  char header[kEmbeddingHeaderBytes];
  const std::uint32_t version = kEmbeddingVersion;
  const std::uint32_t dim = matrix.dim();
  const std::uint64_t count = matrix.count();
  std::memcpy(header, kEmbeddingMagic, 4);
  std::memcpy(header + 4, &version, 4);
  std::memcpy(header + 8, &dim, 4);
  std::memcpy(header + 12, &count, 8);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  Sha256 h;
  h.update(header, sizeof(header));
  out.write(header, sizeof(header));
  const auto* body = reinterpret_cast<const char*>(data.data());
  const std::size_t body_bytes = data.size() * sizeof(float);
  h.update(body, body_bytes);
  out.write(body, static_cast<std::streamsize>(body_bytes));
  out.flush();
  if (!out) throw IoError("write failed on '" + path.string() + "'");
  return h.hex_digest();
}

inline EmbeddingMatrix read_embeddings(const std::filesystem::path& path) {
  std::error_code ec;
  const std::uint64_t size = std::filesystem::file_size(path, ec);
  if (ec) throw IoError("cannot stat '" + path.string() + "': " + ec.message());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");

  const std::string name = path.string();
  if (size < 4) {
    throw FormatError(name + ": truncated header (" + std::to_string(size) + " bytes)", 0);
  }
  char header[kEmbeddingHeaderBytes] = {};
  in.read(header, static_cast<std::streamsize>(std::min<std::uint64_t>(size, sizeof(header))));
  if (std::memcmp(header, kEmbeddingMagic, 4) != 0) {
    throw FormatError(name + ": bad magic at offset 0 (expected \"D3EM\")", 0);
  }
  if (size < kEmbeddingHeaderBytes) {
    throw FormatError(name + ": truncated header (" + std::to_string(size) +
                          " of 20 bytes)", size);
  }
  std::uint32_t version = 0;
  std::uint32_t dim = 0;
  std::uint64_t count = 0;
  std::memcpy(&version, header + 4, 4);
  std::memcpy(&dim, header + 8, 4);
  std::memcpy(&count, header + 12, 8);
  if (version != kEmbeddingVersion) {
    throw FormatError(name + ": unsupported version " + std::to_string(version) +
                          " at offset 4", 4);
  }
  if (dim == 0) throw FormatError(name + ": dim is 0 at offset 8", 8);
  // Guard the size arithmetic against absurd declared counts.
  if (count > (UINT64_MAX - kEmbeddingHeaderBytes) / 4 / dim) {
    throw FormatError(name + ": declared count overflows at offset 12", 12);
  }
  const std::uint64_t expected = kEmbeddingHeaderBytes + 4ull * dim * count;
  if (size != expected) {
    throw FormatError(name + ": size mismatch, expected " + std::to_string(expected) +
                          " bytes for count " + std::to_string(count) + " x dim " +
                          std::to_string(dim) + ", actual " + std::to_string(size),
                      std::min(size, expected));
  }
  std::vector<float> data(static_cast<std::size_t>(count) * dim);
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!in) throw IoError("read error on '" + name + "'");
  for (std::size_t k = 0; k < data.size(); ++k) {
    if (!std::isfinite(data[k])) {
      throw FormatError(name + ": non-finite value at row " + std::to_string(k / dim) +
                            ", column " + std::to_string(k % dim),
                        kEmbeddingHeaderBytes + 4 * k);
    }
  }
  return EmbeddingMatrix(dim, std::move(data));
}

// ---------------------------------------------------------------------------
// Line-delimited JSON
// ---------------------------------------------------------------------------

template <typename T>
struct JsonlRecords {
  std::vector<T> records;
  std::vector<nlohmann::json> extras;  // unknown fields per record, same order
};

namespace detail {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

class LineContext {
 public:
  LineContext(const json& obj, std::size_t line, std::string_view file)
      : obj_(obj), line_(line), file_(file) {}

  [[noreturn]] void fail(const std::string& msg) const {
    throw FormatError(std::string(file_) + ": line " + std::to_string(line_) + ": " + msg,
                      line_);
  }

  const json& field(const char* key) {
    known_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end()) fail(std::string("missing field '") + key + "'");
    return *it;
  }

  const json* optional_field(const char* key) {
    known_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end() || it->is_null()) return nullptr;
    return &*it;
  }

  std::string string(const char* key) {
    const auto& v = field(key);
    if (!v.is_string()) fail(std::string("field '") + key + "' must be a string");
    return v.get<std::string>();
  }

  double number(const char* key) { return as_number(field(key), key); }

  double as_number(const json& v, const char* key) const {
    if (!v.is_number()) fail(std::string("field '") + key + "' must be a number");
    return v.get<double>();
  }

  std::int64_t integer(const char* key) {
    const auto& v = field(key);
    if (!v.is_number_integer()) fail(std::string("field '") + key + "' must be an integer");
    return v.get<std::int64_t>();
  }

  std::vector<double> numbers(const json& v, const char* key) const {
    if (!v.is_array()) fail(std::string("field '") + key + "' must be an array");
    std::vector<double> out;
    out.reserve(v.size());
    for (const auto& x : v) out.push_back(as_number(x, key));
    return out;
  }

  std::vector<double> numbers(const char* key) { return numbers(field(key), key); }

  json extras() const {
    json out = json::object();
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!known_.count(it.key())) out[it.key()] = it.value();
    }
    return out;
  }

 private:
  const json& obj_;
  std::size_t line_;
  std::string_view file_;
  std::set<std::string> known_;
};

template <typename T, typename ParseFn>
JsonlRecords<T> read_jsonl(const std::filesystem::path& path, ParseFn parse) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  const std::string name = path.string();
  JsonlRecords<T> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError(name + ": line " + std::to_string(line_no) + ": malformed JSON (" +
                            e.what() + ")",
                        line_no);
    }
    if (!obj.is_object()) {
      throw FormatError(name + ": line " + std::to_string(line_no) + ": expected a JSON object",
                        line_no);
    }
    LineContext ctx(obj, line_no, name);
    out.records.push_back(parse(ctx));
    out.extras.push_back(ctx.extras());
  }
  if (in.bad()) throw IoError("read error on '" + name + "'");
  return out;
}

template <typename T, typename KeyFn>
void reject_duplicate_keys(const std::vector<T>& records, KeyFn key, std::string_view what) {
  std::set<std::string> seen;
  for (const auto& r : records) {
    std::string k = key(r);
    if (!seen.insert(k).second) {
      throw ValidationError("duplicate " + std::string(what) + " '" + k + "'");
    }
  }
}

inline void require_finite(double v, std::string_view what) {
  if (!std::isfinite(v)) throw DomainError("cannot write non-finite " + std::string(what));
}

inline void require_finite(const std::vector<double>& v, std::string_view what) {
  for (double x : v) require_finite(x, what);
}

template <typename T, typename ToJson>
std::string write_jsonl(std::span<const T> records, const std::filesystem::path& path,
                        ToJson to_json) {
  std::string bytes;
  for (const auto& r : records) {
    bytes += to_json(r).dump();
    bytes += '\n';
  }
  return write_bytes(path, bytes);
}

}  // namespace detail

// --- pool manifest ---------------------------------------------------------

inline JsonlRecords<SampleRecord> read_pool(const std::filesystem::path& path) {
  auto out = detail::read_jsonl<SampleRecord>(path, [](detail::LineContext& c) {
    SampleRecord s;
    s.id = c.string("id");
    s.instruction = c.string("instruction");
    s.response = c.string("response");
    s.token_count = c.integer("token_count");
    return s;
  });
  detail::reject_duplicate_keys(out.records, [](const SampleRecord& s) { return s.id; },
                                "sample id");
  return out;
}

inline std::string write_pool(std::span<const SampleRecord> pool,
                              const std::filesystem::path& path) {
  return detail::write_jsonl(pool, path, [](const SampleRecord& s) {
    detail::ordered_json j;
    j["id"] = s.id;
    j["instruction"] = s.instruction;
    j["response"] = s.response;
    j["token_count"] = s.token_count;
    return j;
  });
}

// --- token traces ----------------------------------------------------------

inline JsonlRecords<TokenTrace> read_traces(const std::filesystem::path& path) {
  auto out = detail::read_jsonl<TokenTrace>(path, [](detail::LineContext& c) {
    TokenTrace t;
    t.sample_id = c.string("id");
    t.gold_logprobs = c.numbers("gold_logprobs");
    t.entropies = c.numbers("entropies");
    if (const auto* u = c.optional_field("uncond_logprobs")) {
      t.uncond_logprobs = c.numbers(*u, "uncond_logprobs");
    }
    return t;
  });
  detail::reject_duplicate_keys(out.records, [](const TokenTrace& t) { return t.sample_id; },
                                "trace id");
  return out;
}

inline std::string write_traces(std::span<const TokenTrace> traces,
                                const std::filesystem::path& path) {
  return detail::write_jsonl(traces, path, [](const TokenTrace& t) {
    detail::require_finite(t.gold_logprobs, "gold_logprob");
    detail::require_finite(t.entropies, "entropy");
    detail::ordered_json j;
    j["id"] = t.sample_id;
    j["gold_logprobs"] = t.gold_logprobs;
    j["entropies"] = t.entropies;
    if (t.uncond_logprobs) {
      detail::require_finite(*t.uncond_logprobs, "uncond_logprob");
      j["uncond_logprobs"] = *t.uncond_logprobs;
    }
    return j;
  });
}

// --- dependability logits --------------------------------------------------

inline JsonlRecords<DependabilityLogits> read_dependability(const std::filesystem::path& path) {
  auto out = detail::read_jsonl<DependabilityLogits>(path, [](detail::LineContext& c) {
    DependabilityLogits d;
    d.sample_id = c.string("id");
    d.logit_pos = c.number("logit_pos");
    d.logit_neg = c.number("logit_neg");
    return d;
  });
  detail::reject_duplicate_keys(
      out.records, [](const DependabilityLogits& d) { return d.sample_id; }, "dependability id");
  return out;
}

inline std::string write_dependability(std::span<const DependabilityLogits> records,
                                       const std::filesystem::path& path) {
  return detail::write_jsonl(records, path, [](const DependabilityLogits& d) {
    detail::require_finite(d.logit_pos, "logit_pos");
    detail::require_finite(d.logit_neg, "logit_neg");
    detail::ordered_json j;
    j["id"] = d.sample_id;
    j["logit_pos"] = d.logit_pos;
    j["logit_neg"] = d.logit_neg;
    return j;
  });
}

// --- score table -----------------------------------------------------------

inline JsonlRecords<ScoreRow> read_scores(const std::filesystem::path& path) {
  auto out = detail::read_jsonl<ScoreRow>(path, [](detail::LineContext& c) {
    ScoreRow r;
    r.id = c.string("id");
    r.d2 = c.number("d2");
    r.d3 = c.number("d3");
    r.weight = c.number("weight");
    if (!(r.d2 >= 0.0 && r.d2 <= 1.0)) c.fail("d2 outside [0, 1]");
    if (!(r.d3 >= 0.0 && r.d3 <= 1.0)) c.fail("d3 outside [0, 1]");
    if (r.weight != r.d2 * r.d3) c.fail("weight != d2 * d3");
    return r;
  });
  detail::reject_duplicate_keys(out.records, [](const ScoreRow& r) { return r.id; },
                                "score id");
  return out;
}

inline std::string write_scores(const ScoreTable& table, const std::filesystem::path& path) {
  return detail::write_jsonl(std::span<const ScoreRow>(table.rows), path,
                             [](const ScoreRow& r) {
                               detail::ordered_json j;
                               j["id"] = r.id;
                               j["d2"] = r.d2;
                               j["d3"] = r.d3;
                               j["weight"] = r.weight;
                               return j;
                             });
}

// --- selection manifests ---------------------------------------------------

inline JsonlRecords<RoundManifest> read_manifests(const std::filesystem::path& path) {
  auto out = detail::read_jsonl<RoundManifest>(path, [](detail::LineContext& c) {
    RoundManifest m;
    m.round_index = static_cast<int>(c.integer("round_index"));
    const auto& ids = c.field("selected_ids");
    if (!ids.is_array()) c.fail("field 'selected_ids' must be an array");
    for (const auto& id : ids) {
      if (!id.is_string()) c.fail("selected_ids entries must be strings");
      m.selected_ids.push_back(id.get<std::string>());
    }
    m.first_pick_id = c.string("first_pick_id");
    m.objective_trace = c.numbers("objective_trace");
    m.config_fingerprint = c.string("config_fingerprint");
    if (m.round_index < 1) c.fail("round_index must be >= 1");
    return m;
  });
  detail::reject_duplicate_keys(
      out.records, [](const RoundManifest& m) { return std::to_string(m.round_index); },
      "round_index");
  for (const auto& m : out.records) {
    detail::reject_duplicate_keys(m.selected_ids, [](const std::string& s) { return s; },
                                  "selected id");
  }
  return out;
}

inline std::string write_manifests(std::span<const RoundManifest> manifests,
                                   const std::filesystem::path& path) {
  return detail::write_jsonl(manifests, path, [](const RoundManifest& m) {
    detail::require_finite(m.objective_trace, "objective value");
    detail::ordered_json j;
    j["round_index"] = m.round_index;
    j["selected_ids"] = m.selected_ids;
    j["first_pick_id"] = m.first_pick_id;
    j["objective_trace"] = m.objective_trace;
    j["config_fingerprint"] = m.config_fingerprint;
    return j;
  });
}

// ---------------------------------------------------------------------------
// Fingerprint
// ---------------------------------------------------------------------------

// Named input-file digests, in a caller-chosen but stable order.
using InputDigests = std::vector<std::pair<std::string, std::string>>;

inline std::string config_fingerprint(const ScoringConfig& scoring,
                                      const SelectionConfig& selection, int round_index,
                                      const InputDigests& inputs) {
  detail::ordered_json j;
  j["scoring"] = {{"alpha", scoring.alpha},
                  {"beta", scoring.beta},
                  {"vocab_size", scoring.vocab_size}};
  detail::ordered_json sel;
  sel["budget"] = selection.budget;
  sel["rounds"] = selection.rounds;
  sel["seed"] = selection.seed;
  sel["mode"] = std::string(to_string(selection.mode));
  sel["exclude_ids"] = std::vector<std::string>(selection.exclude_ids.begin(),
                                                selection.exclude_ids.end());
  j["selection"] = sel;
  j["round_index"] = round_index;
  detail::ordered_json files = detail::ordered_json::array();
  for (const auto& [name, digest] : inputs) files.push_back({name, digest});
  j["inputs"] = files;
  return sha256_hex(j.dump());
}

// One id per line; blank lines and lines starting with '#' are ignored.
inline std::set<std::string> read_id_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::set<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto b = line.find_first_not_of(" \t");
    if (b == std::string::npos || line[b] == '#') continue;
    auto e = line.find_last_not_of(" \t");
    ids.insert(line.substr(b, e - b + 1));
  }
  return ids;
}

}  // namespace d3sel

#endif  // D3SEL_IO_HPP
