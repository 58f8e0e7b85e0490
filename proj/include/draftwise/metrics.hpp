#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "draftwise/llm_client.hpp"
#include "draftwise/prompt_builder.hpp"
#include "draftwise/refine_loop.hpp"

namespace draftwise {

struct MeteorParams {
  /// Fmean = P * R / (alpha * P + (1 - alpha) * R); 0.9 weights recall 9:1.
  double alpha = 0.9;
  double beta = 3.0;
  double gamma = 0.5;
  /// Second matching stage on Porter stems.
  bool use_stem = true;
  /// Alignment search width per hypothesis position.
  std::size_t beam_width = 40;
};

void to_json(Json& j, const MeteorParams& p);
void from_json(const Json& j, MeteorParams& p);

struct MeteorDetail {
  std::size_t hypothesis_length = 0;
  std::size_t reference_length = 0;
  std::size_t matches = 0;
  std::size_t chunks = 0;
  double precision = 0.0;
  double recall = 0.0;
  double fmean = 0.0;
  double penalty = 0.0;
  double score = 0.0;
};

/// Tokens are lowercased alphanumeric runs with punctuation split off.
/// Alignment: exact stage, then stem stage on the words left over; each stage
/// takes the most matches and, among those, the fewest chunks.
MeteorDetail meteor_detail(std::string_view hypothesis, std::string_view reference,
                           const MeteorParams& params = {});
double meteor(std::string_view hypothesis, std::string_view reference,
              const MeteorParams& params = {});

struct GEvalConfig {
  int sample_count = 20;
  double judge_temperature = 1.0;
  int score_min = 0;
  int score_max = 4;

  void validate() const;
};

void to_json(Json& j, const GEvalConfig& c);
void from_json(const Json& j, GEvalConfig& c);

/// Integer "score" from the last JSON block of a judge reply.
std::optional<int> parse_judge_score(std::string_view raw, const GEvalConfig& config = {});

/// Probability-weighted mean of the empirical score distribution divided by
/// score_max. Throws AllSamplesUnparseable on an empty sample set.
double geval_from_samples(const std::vector<int>& samples, const GEvalConfig& config = {});

struct GEvalResult {
  double geval = 0.0;
  std::vector<int> samples;
  /// Replies without a usable score, plus samples whose request failed.
  std::size_t discarded = 0;
  std::vector<ChatExchange> exchanges;
};

/// Renders the judge prompt and samples sample_count judgements.
GEvalResult geval_score(const PromptBuilder& builder, std::string_view instruction,
                        std::string_view reference, std::string_view response,
                        const LlmClient& judge, const GEvalConfig& config,
                        std::string_view query_id = {}, int iteration = 0);

struct MetricScores {
  int iteration = 0;
  double meteor = 0.0;
  std::optional<double> geval;
  std::vector<int> geval_samples;
  std::size_t geval_discarded = 0;
};

void to_json(Json& j, const MetricScores& m);
void from_json(const Json& j, MetricScores& m);

/// Scores of every draft of one trace.
struct QueryEvaluation {
  std::string query_id;
  std::string strategy;
  std::vector<MetricScores> per_iteration;
  std::vector<ChatExchange> judge_exchanges;
};

void to_json(Json& j, const QueryEvaluation& e);
void from_json(const Json& j, QueryEvaluation& e);

/// Judge hook: (instruction, reference, response, iteration) -> result.
using JudgeFn = std::function<GEvalResult(std::string_view, std::string_view, std::string_view, int)>;

QueryEvaluation evaluate_trace(const RunTrace& trace, std::string_view reference,
                               const MeteorParams& params = {}, const JudgeFn& judge = {});

struct IterationRow {
  int t = 0;
  std::size_t query_count = 0;
  double meteor = 0.0;
  /// Mean over queries that have a G-Eval score at t.
  std::optional<double> geval;
  std::size_t geval_count = 0;
  /// Cumulative tokens up to and including iteration t, thousands per query.
  double ktokens_critic = 0.0;
  double ktokens_generator = 0.0;
  double ktokens_topics = 0.0;
  /// Some usage was counted locally instead of reported by the provider.
  bool approximate = false;
};

void to_json(Json& j, const IterationRow& r);

/// Per-iteration means over completed traces. Aborted traces are skipped;
/// traces that stopped early carry their last iteration forward. Throws
/// MissingReference when a trace has no reference. `evaluations` supplies
/// G-Eval scores (and METEOR) by query_id; without it METEOR is computed here.
std::vector<IterationRow> summarize_split(const std::vector<RunTrace>& traces,
                                          const std::map<std::string, std::string>& references,
                                          const std::map<std::string, QueryEvaluation>* evaluations = nullptr,
                                          const MeteorParams& params = {});

}  // namespace draftwise
