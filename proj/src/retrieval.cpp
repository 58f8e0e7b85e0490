#include "draftwise/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <thread>
#include <unordered_set>

#include <fmt/format.h>

#include "draftwise/text.hpp"

namespace draftwise {
namespace {

std::vector<std::string> texts_of(const std::vector<ReviewRecord>& records) {
  std::vector<std::string> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.text);
  return out;
}

std::vector<ScoredEntry> score_partition_lexical(const std::vector<ReviewRecord>& records,
                                                 std::string_view query,
                                                 const RetrievalConfig& config) {
  auto docs = texts_of(records);
  auto stats = CorpusStats::from_documents(docs);
  std::vector<ScoredEntry> out;
  out.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i)
    out.push_back({records[i], score_lexical(query, docs[i], stats, config.bm25_k1, config.bm25_b)});
  return out;
}

std::vector<ScoredEntry> score_partition_embedding(const std::vector<ReviewRecord>& records,
                                                   std::string_view query,
                                                   const EmbeddingClient& embedder,
                                                   std::string_view query_id) {
  if (records.empty()) return {};
  std::vector<std::string> inputs{std::string(query)};
  for (const auto& r : records) inputs.push_back(r.text);
  auto vectors = embedder.embed(inputs, query_id);
  std::vector<ScoredEntry> out;
  out.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i)
    out.push_back({records[i], cosine_similarity(vectors[0], vectors[i + 1])});
  return out;
}

Json entries_json(const std::vector<ScoredEntry>& entries) {
  Json arr = Json::array();
  for (const auto& e : entries) {
    Json j = e.record;
    j["score"] = e.score;
    arr.push_back(std::move(j));
  }
  return arr;
}

std::vector<ScoredEntry> entries_from_json(const Json& arr) {
  std::vector<ScoredEntry> out;
  for (const auto& j : arr) out.push_back({j.get<ReviewRecord>(), j.at("score").get<double>()});
  return out;
}

}  // namespace

std::string_view to_string(ScorerKind kind) {
  return kind == ScorerKind::lexical_bm25 ? "lexical_bm25" : "embedding_cosine";
}

ScorerKind parse_scorer_kind(std::string_view name) {
  if (name == "lexical_bm25") return ScorerKind::lexical_bm25;
  if (name == "embedding_cosine") return ScorerKind::embedding_cosine;
  throw ConfigError(fmt::format("unknown scorer '{}'", name));
}

void RetrievalConfig::validate() const {
  if (k < 1) throw ConfigError("retrieval.k must be at least 1");
  if (!(bm25_k1 > 0.0) || !(bm25_b > 0.0)) throw ConfigError("bm25 parameters must be positive");
  if (scorer == ScorerKind::embedding_cosine) {
    if (!embedding_endpoint) throw ConfigError("embedding scorer needs retrieval.embedding_endpoint");
    embedding_endpoint->validate();
  }
}

void to_json(Json& j, const RetrievalConfig& c) {
  j = Json{{"k", c.k},
           {"scorer", to_string(c.scorer)},
           {"bm25_k1", c.bm25_k1},
           {"bm25_b", c.bm25_b},
           {"fallback_to_lexical", c.fallback_to_lexical}};
  if (c.embedding_endpoint) j["embedding_endpoint"] = *c.embedding_endpoint;
}

void from_json(const Json& j, RetrievalConfig& c) {
  c.k = j.value("k", c.k);
  if (auto it = j.find("scorer"); it != j.end()) c.scorer = parse_scorer_kind(it->get<std::string>());
  c.bm25_k1 = j.value("bm25_k1", c.bm25_k1);
  c.bm25_b = j.value("bm25_b", c.bm25_b);
  c.fallback_to_lexical = j.value("fallback_to_lexical", c.fallback_to_lexical);
  if (auto it = j.find("embedding_endpoint"); it != j.end() && !it->is_null()) {
    EndpointConfig e = c.embedding_endpoint.value_or(EndpointConfig{});
    from_json(*it, e);
    c.embedding_endpoint = e;
  }
}

CorpusStats CorpusStats::from_documents(std::span<const std::string> documents) {
  CorpusStats s;
  s.document_count = documents.size();
  std::size_t total = 0;
  for (const auto& d : documents) {
    auto tokens = text::lexical_tokens(d);
    total += tokens.size();
    std::unordered_set<std::string> seen(tokens.begin(), tokens.end());
    for (const auto& t : seen) ++s.document_frequency[t];
  }
  if (s.document_count > 0)
    s.average_length = static_cast<double>(total) / static_cast<double>(s.document_count);
  return s;
}

double score_lexical(std::string_view query, std::string_view document, const CorpusStats& stats,
                     double k1, double b) {
  auto doc_tokens = text::lexical_tokens(document);
  if (doc_tokens.empty() || stats.document_count == 0) return 0.0;
  std::unordered_map<std::string, std::size_t> tf;
  for (const auto& t : doc_tokens) ++tf[t];
  const double n = static_cast<double>(stats.document_count);
  const double dl = static_cast<double>(doc_tokens.size());
  const double avgdl = stats.average_length > 0.0 ? stats.average_length : dl;
  double score = 0.0;
  for (const auto& q : text::lexical_tokens(query)) {
    auto it = tf.find(q);
    if (it == tf.end()) continue;
    auto df_it = stats.document_frequency.find(q);
    double df = df_it == stats.document_frequency.end() ? 0.0 : static_cast<double>(df_it->second);
    double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
    double f = static_cast<double>(it->second);
    score += idf * f * (k1 + 1.0) / (f + k1 * (1.0 - b + b * dl / avgdl));
  }
  return score;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) return 0.0;
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

void to_json(Json& j, const RetrievedProfile& p) {
  j = Json{{"user_id", p.user_id},
           {"scorer", to_string(p.scorer_used)},
           {"query_text", p.query_text},
           {"user_entries", entries_json(p.user_entries)},
           {"neighbor_entries", entries_json(p.neighbor_entries)}};
}

void from_json(const Json& j, RetrievedProfile& p) {
  p.user_id = j.value("user_id", std::string{});
  p.scorer_used = parse_scorer_kind(j.value("scorer", std::string("lexical_bm25")));
  p.query_text = j.value("query_text", std::string{});
  p.user_entries = entries_from_json(j.at("user_entries"));
  p.neighbor_entries = entries_from_json(j.at("neighbor_entries"));
}

EmbeddingClient::EmbeddingClient(EndpointConfig config, std::shared_ptr<Transport> transport)
    : config_(std::move(config)), transport_(std::move(transport)) {}

std::vector<std::vector<double>> EmbeddingClient::embed(const std::vector<std::string>& inputs,
                                                        std::string_view query_id) const {
  Json body{{"model", config_.model_name}, {"input", inputs}};
  CallContext ctx;
  ctx.purpose = CallPurpose::embedding;
  ctx.query_id = std::string(query_id);

  WireResponse resp;
  auto backoff = config_.retry_backoff;
  for (int attempt = 0;; ++attempt) {
    resp = transport_->post("/embeddings", body, ctx);
    bool retryable = resp.status == 0 || resp.status == 408 || resp.status == 429 || resp.status >= 500;
    if (!retryable || attempt >= config_.max_retries) break;
    std::this_thread::sleep_for(backoff);
    backoff *= 2;
  }
  if (resp.status < 200 || resp.status >= 300)
    throw EmbeddingEndpointUnavailable(
        fmt::format("embeddings endpoint answered HTTP {} {}", resp.status, resp.transport_error));

  Json parsed = Json::parse(resp.body, nullptr, false);
  if (parsed.is_discarded() || !parsed.contains("data") || !parsed["data"].is_array() ||
      parsed["data"].size() != inputs.size())
    throw EmbeddingEndpointUnavailable("embeddings response has an unexpected shape");

  std::vector<std::vector<double>> out(inputs.size());
  std::size_t position = 0;
  for (const auto& item : parsed["data"]) {
    std::size_t index = item.value("index", position);
    if (index >= out.size() || !item.contains("embedding"))
      throw EmbeddingEndpointUnavailable("embeddings response has an unexpected shape");
    out[index] = item["embedding"].get<std::vector<double>>();
    ++position;
  }
  return out;
}

std::vector<ScoredEntry> rank_entries(std::vector<ScoredEntry> entries, std::size_t k) {
  std::sort(entries.begin(), entries.end(), [](const ScoredEntry& a, const ScoredEntry& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.record.record_id < b.record.record_id;
  });
  if (entries.size() > k) entries.resize(k);
  return entries;
}

RetrievedProfile retrieve(const Profile& profile, std::string_view query,
                          const RetrievalConfig& config, const EmbeddingClient* embedder,
                          std::string_view query_id) {
  RetrievedProfile out;
  out.user_id = profile.user_id;
  out.query_text = std::string(query);

  std::vector<ScoredEntry> user_scored;
  std::vector<ScoredEntry> neighbor_scored;
  bool lexical = config.scorer == ScorerKind::lexical_bm25;
  if (!lexical) {
    try {
      if (!embedder) throw EmbeddingEndpointUnavailable("no embeddings client configured");
      user_scored = score_partition_embedding(profile.user_entries, query, *embedder, query_id);
      neighbor_scored = score_partition_embedding(profile.neighbor_entries, query, *embedder, query_id);
      out.scorer_used = ScorerKind::embedding_cosine;
    } catch (const EmbeddingEndpointUnavailable&) {
      if (!config.fallback_to_lexical) throw;
      lexical = true;
    }
  }
  if (lexical) {
    user_scored = score_partition_lexical(profile.user_entries, query, config);
    neighbor_scored = score_partition_lexical(profile.neighbor_entries, query, config);
    out.scorer_used = ScorerKind::lexical_bm25;
  }
  out.user_entries = rank_entries(std::move(user_scored), config.k);
  out.neighbor_entries = rank_entries(std::move(neighbor_scored), config.k);
  return out;
}

}  // namespace draftwise
