#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include "draftwise/llm_client.hpp"

namespace draftwise {

enum class MockMode { replay, oracle_convergent };
enum class RankingMetric { unigram_overlap, normalized_edit_similarity };

std::string_view to_string(RankingMetric m);
RankingMetric parse_ranking_metric(std::string_view name);

struct ReplayEntry {
  std::string text;
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  /// HTTP status to answer with; non-2xx entries carry no choices.
  int status = 200;
  /// Answer without a usage block (exercises the approximate-count path).
  bool omit_usage = false;
  /// Never consumed: every later call gets this entry again.
  bool sticky = false;
};

struct OracleSettings {
  std::string hidden_reference;
  /// Filler mixed with the reference; pick words absent from the reference to
  /// make overlap exactly the mixed fraction.
  std::string generic_text = "lorem ipsum dolor sit amet consectetur adipiscing elit";
  /// Fraction of the gap to the reference closed per refinement.
  double convergence_step = 0.25;
  RankingMetric ranking_metric = RankingMetric::unigram_overlap;
  /// Amplitude of a deterministic per-(query, iteration, sample) perturbation
  /// of the mixed fraction; 0 disables it.
  double jitter = 0.0;
  std::uint64_t seed = 0;
};

struct MockScript {
  MockMode mode = MockMode::replay;
  std::vector<ReplayEntry> replay;
  OracleSettings oracle;
  /// Query-specific scripts that take precedence over this one.
  std::map<std::string, MockScript> by_query;

  static MockScript from_json(const Json& j);
  static MockScript load(const std::filesystem::path& path);
  Json to_json() const;
};

/// Unigram F1 between lexical token multisets; 1 when both are empty.
double unigram_overlap(std::string_view a, std::string_view b);
/// 1 - Levenshtein(a, b) / max(|a|, |b|) over lexical tokens.
double normalized_edit_similarity(std::string_view a, std::string_view b);
double ranking_metric(RankingMetric metric, std::string_view candidate, std::string_view reference);

/// Fraction of the reference mixed into the draft for refinement `step`
/// (0 = initial draft): clamp(step * convergence_step + jitter * u, 0, 1) with
/// u in [-1, 1] derived from (seed, query_id, step, sample).
double oracle_fraction(const OracleSettings& s, std::string_view query_id, int step, int sample);

/// The first round(f * m) reference words followed by generic words (cycled)
/// at the remaining positions, m = reference word count.
std::string oracle_draft(const OracleSettings& s, double fraction);

/// Candidate texts under "# Review A:", "# Review B:", ... in a selection prompt.
std::vector<std::string> extract_candidates(std::string_view prompt);

/// In-process stand-in for an OpenAI-compatible server. Answers
/// /chat/completions and /embeddings with the same wire shapes, so the
/// LlmClient path is identical to production.
class MockBackend final : public Transport {
 public:
  explicit MockBackend(MockScript script);

  WireResponse post(std::string_view path, const Json& body, const CallContext& ctx) override;

  struct Reply {
    int status = 200;
    std::string text;
    std::int64_t prompt_tokens = 0;
    std::int64_t completion_tokens = 0;
    bool omit_usage = false;
  };
  /// One completion. Throws ScriptExhausted when a replay queue runs dry.
  Reply respond(std::string_view prompt, const CallContext& ctx);

  /// Deterministic hashed bag-of-words vector (dimension 64, unit length).
  static std::vector<double> embed(std::string_view text);

  const MockScript& script() const noexcept { return script_; }

 private:
  Reply respond_replay(const std::string& key);
  Reply respond_oracle(const OracleSettings& s, std::string_view prompt, const CallContext& ctx) const;

  MockScript script_;
  std::mutex mu_;
  std::map<std::string, std::vector<ReplayEntry>> queues_;  // "" = default queue
  std::map<std::string, std::size_t> cursors_;
};

/// mock_complete: one exchange straight from the backend, shaped as the
/// client would record it.
ChatExchange mock_complete(MockBackend& backend, const PromptBundle& prompt, const CallContext& ctx);

}  // namespace draftwise
