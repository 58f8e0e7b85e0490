#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "draftwise/graph_store.hpp"
#include "draftwise/llm_client.hpp"

namespace draftwise {

enum class ScorerKind { lexical_bm25, embedding_cosine };

std::string_view to_string(ScorerKind kind);
ScorerKind parse_scorer_kind(std::string_view name);

struct RetrievalConfig {
  std::size_t k = 4;
  ScorerKind scorer = ScorerKind::lexical_bm25;
  double bm25_k1 = 1.2;
  double bm25_b = 0.75;
  std::optional<EndpointConfig> embedding_endpoint;
  /// Use BM25 when the embeddings endpoint fails instead of raising.
  bool fallback_to_lexical = false;

  void validate() const;
};

void to_json(Json& j, const RetrievalConfig& c);
void from_json(const Json& j, RetrievalConfig& c);

/// Term statistics over one candidate partition.
struct CorpusStats {
  std::size_t document_count = 0;
  double average_length = 0.0;
  std::unordered_map<std::string, std::size_t> document_frequency;

  static CorpusStats from_documents(std::span<const std::string> documents);
};

/// Okapi BM25 with idf = ln(1 + (N - df + 0.5) / (df + 0.5)). Repeated query
/// tokens contribute once per occurrence.
double score_lexical(std::string_view query, std::string_view document, const CorpusStats& stats,
                     double k1 = 1.2, double b = 0.75);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

struct ScoredEntry {
  ReviewRecord record;
  double score = 0.0;
};

/// R(P_u): at most k entries per partition, by descending score, ties by
/// ascending record_id.
struct RetrievedProfile {
  std::string user_id;
  std::vector<ScoredEntry> user_entries;
  std::vector<ScoredEntry> neighbor_entries;
  std::string query_text;
  ScorerKind scorer_used = ScorerKind::lexical_bm25;
};

void to_json(Json& j, const RetrievedProfile& p);
void from_json(const Json& j, RetrievedProfile& p);

/// Client for an OpenAI-compatible /embeddings endpoint.
class EmbeddingClient {
 public:
  EmbeddingClient(EndpointConfig config, std::shared_ptr<Transport> transport);

  /// One vector per input, in input order. Throws EmbeddingEndpointUnavailable.
  std::vector<std::vector<double>> embed(const std::vector<std::string>& inputs,
                                         std::string_view query_id = {}) const;

 private:
  EndpointConfig config_;
  std::shared_ptr<Transport> transport_;
};

/// Sorts by descending score then ascending record_id and keeps the first k.
std::vector<ScoredEntry> rank_entries(std::vector<ScoredEntry> entries, std::size_t k);

/// The query is used as given (the retrieval query function is the identity).
/// `embedder` is required for the embedding scorer.
RetrievedProfile retrieve(const Profile& profile, std::string_view query,
                          const RetrievalConfig& config, const EmbeddingClient* embedder = nullptr,
                          std::string_view query_id = {});

}  // namespace draftwise
