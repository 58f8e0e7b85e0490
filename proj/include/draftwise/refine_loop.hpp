#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "draftwise/llm_client.hpp"
#include "draftwise/prompt_builder.hpp"
#include "draftwise/retrieval.hpp"

namespace draftwise {

enum class StrategyVariant { vanilla, knockout, knockout_best_of_n, topic_extraction };

std::string_view to_string(StrategyVariant v);
StrategyVariant parse_strategy_variant(std::string_view name);

struct Strategy {
  StrategyVariant variant = StrategyVariant::vanilla;
  /// Refinement iterations; drafts y_0..y_T.
  int T = 5;
  /// Samples per refinement (knockout_best_of_n only).
  int n = 3;
  /// Extra critic calls when a reply cannot be parsed.
  int parse_retries = 2;
  /// Stop once every feedback criterion reports no further improvement.
  bool early_stop = false;
  /// Seeded coin flip for the knockout A/B order instead of A = previous winner.
  bool randomize_knockout_order = false;
  std::uint64_t seed = 0;

  void validate() const;
  /// Label used in reports: "vanilla", "knockout", "knockout_best_of_n", ...
  std::string label() const { return std::string(to_string(variant)); }
};

void to_json(Json& j, const Strategy& s);
void from_json(const Json& j, Strategy& s);

struct FeedbackReport {
  static constexpr std::array<std::string_view, 4> kCriteria{
      "Tone Consistency", "Vocabulary Match", "Sentence Structure", "Topic Relevance"};

  /// tone_consistency, vocabulary_match, sentence_structure, topic_relevance
  std::array<std::string, 4> criteria;
  std::string raw_text;
  std::array<bool, 4> no_further_improvement{};
  /// Unparseable critic output: raw_text copied into every criterion.
  bool degraded = false;

  const std::string& tone_consistency() const { return criteria[0]; }
  const std::string& vocabulary_match() const { return criteria[1]; }
  const std::string& sentence_structure() const { return criteria[2]; }
  const std::string& topic_relevance() const { return criteria[3]; }
  bool all_done() const;
  /// The feedback text given to the refinement prompt: the four-key JSON.
  std::string render() const;
};

void to_json(Json& j, const FeedbackReport& f);
void from_json(const Json& j, FeedbackReport& f);

/// Four-key critic JSON to a report; nullopt when any criterion is missing.
std::optional<FeedbackReport> parse_feedback(std::string_view raw);

struct Aspect {
  std::string aspect;
  std::string description;
  bool operator==(const Aspect&) const = default;
};

struct TopicSummary {
  /// Tone, vocabulary style, sentence structure.
  std::array<std::string, 3> style;
  std::vector<Aspect> content_aspects;
  bool style_available = false;
  bool content_available = false;
  bool style_degraded = false;
  bool content_degraded = false;

  /// "Tone: ...\nVocabulary style: ...\nSentence structure: ..."
  std::string render_style() const;
  /// "aspect title: ...\naspect detail: ..." blocks separated by blank lines.
  std::string render_aspects() const;
};

void to_json(Json& j, const TopicSummary& t);
void from_json(const Json& j, TopicSummary& t);

std::optional<std::array<std::string, 3>> parse_style(std::string_view raw);
std::optional<std::vector<Aspect>> parse_aspects(std::string_view raw);

/// Letter answer of a selection prompt as an index below `count`.
std::optional<std::size_t> parse_choice(std::string_view raw, std::size_t count);

/// Drops a leading "Review text:" (any case) and surrounding whitespace.
std::string strip_review_prefix(std::string_view text);

struct KnockoutDecision {
  /// Slot of the new draft: 'B' under the fixed order.
  char new_draft_slot = 'B';
  std::optional<char> answer;
  bool winner_was_new = true;
  bool fallback = false;
};

struct IterationTrace {
  int t = 0;
  /// Surviving draft after this iteration.
  std::string draft;
  /// Generator output of this iteration (the knockout challenger); t >= 1.
  std::optional<std::string> new_draft;
  std::vector<std::string> samples;
  std::optional<std::size_t> best_of_n_choice;
  bool best_of_n_fallback = false;
  std::optional<KnockoutDecision> knockout;
  std::optional<FeedbackReport> feedback;
  std::vector<ChatExchange> exchanges;

  std::optional<bool> knockout_winner_was_new() const {
    return knockout ? std::optional<bool>(knockout->winner_was_new) : std::nullopt;
  }
};

void to_json(Json& j, const IterationTrace& it);
void from_json(const Json& j, IterationTrace& it);

enum class RunStatus { completed, aborted };

struct RunTrace {
  std::string query_id;
  std::string user_id;
  Strategy strategy;
  RunStatus status = RunStatus::completed;
  std::string abort_reason;
  bool stopped_early = false;
  std::string query_text;
  RetrievedProfile retrieved;
  std::optional<TopicSummary> topics;
  std::vector<IterationTrace> iterations;
  /// Billed exchanges of an iteration that did not complete.
  std::vector<ChatExchange> partial_exchanges;
  std::string final_draft;
  std::map<Role, TokenUsage> usage_by_role;

  /// Sum over every exchange in the trace.
  std::map<Role, TokenUsage> recompute_usage() const;
  /// Number of exchanges per role.
  std::map<Role, std::size_t> call_counts() const;
};

void to_json(Json& j, const RunTrace& r);
void from_json(const Json& j, RunTrace& r);

struct QuerySpec {
  std::string query_id;
  std::string user_id;
  ItemMeta item;
  double target_rating = 0.0;
};

/// x: the query template for the item and rating.
std::string render_query(const PromptBuilder& builder, const ItemMeta& item, double target_rating);

struct Endpoints {
  const LlmClient* generator = nullptr;
  const LlmClient* critic = nullptr;
  /// Falls back to the critic when null.
  const LlmClient* topic_extractor = nullptr;
};

/// The individual steps of one query's loop. Every method appends the
/// exchanges it makes to `sink`, also when it throws.
class RefineSession {
 public:
  RefineSession(const PromptBuilder& builder, QuerySpec query, const RetrievedProfile& profile,
                Endpoints endpoints, Strategy strategy);

  const std::string& query_text() const noexcept { return query_text_; }
  const Bindings& base_bindings() const noexcept { return base_; }

  std::string generate_initial(std::vector<ChatExchange>& sink) const;
  FeedbackReport critique(const std::string& draft, int t, const TopicSummary* topics,
                          std::vector<ChatExchange>& sink) const;
  std::string refine(const std::string& draft, const FeedbackReport& feedback, int t,
                     std::vector<ChatExchange>& sink) const;
  std::vector<std::string> refine_samples(const std::string& draft, const FeedbackReport& feedback,
                                          int t, int n, std::vector<ChatExchange>& sink) const;
  std::pair<std::string, KnockoutDecision> knockout_select(const std::string& prev_winner,
                                                           const std::string& new_draft, int t,
                                                           std::vector<ChatExchange>& sink) const;
  std::pair<std::string, std::size_t> best_of_n_select(const std::vector<std::string>& candidates,
                                                       int t, bool* fallback,
                                                       std::vector<ChatExchange>& sink) const;
  TopicSummary extract_topics(std::vector<ChatExchange>& sink) const;

 private:
  CallContext context(Role role, CallPurpose purpose, int t) const;
  ChatExchange call(const LlmClient& client, const PromptBundle& prompt, const CallContext& ctx,
                    std::vector<ChatExchange>& sink) const;
  Bindings refinement_bindings(const std::string& draft, const FeedbackReport& feedback) const;
  const LlmClient& topic_client() const;

  const PromptBuilder& builder_;
  QuerySpec query_;
  Endpoints endpoints_;
  Strategy strategy_;
  std::string query_text_;
  Bindings base_;
};

/// Runs the whole loop. Failures do not throw: the trace comes back aborted
/// with the completed iterations and the billed partial exchanges.
RunTrace run_pipeline(const PromptBuilder& builder, const QuerySpec& query,
                      const RetrievedProfile& profile, const Strategy& strategy,
                      const Endpoints& endpoints);

}  // namespace draftwise
