#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "draftwise/dataset.hpp"
#include "draftwise/llm_client.hpp"
#include "draftwise/mock_backend.hpp"
#include "draftwise/prompt_builder.hpp"
#include "draftwise/refine_loop.hpp"
#include "draftwise/retrieval.hpp"

namespace testing_support {

using draftwise::Json;

inline std::filesystem::path fixture_dir() { return DRAFTWISE_FIXTURE_DIR; }

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << content;
}

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "draftwise-XXXXXX").string();
    path_ = ::mkdtemp(tmpl.data());
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

/// Answers from a fixed queue and records every request.
class ScriptedTransport final : public draftwise::Transport {
 public:
  struct Request {
    std::string path;
    Json body;
    draftwise::CallContext ctx;
  };

  void push(int status, std::string body) { queue_.push_back({status, std::move(body), {}, {}}); }
  void push_fail(std::string why) { queue_.push_back({0, {}, {}, std::move(why)}); }
  void push_chat(const std::string& text, int prompt_tokens = 10, int completion_tokens = 5) {
    push(200, Json{{"choices", {{{"index", 0}, {"message", {{"role", "assistant"}, {"content", text}}}}}},
                   {"usage", {{"prompt_tokens", prompt_tokens}, {"completion_tokens", completion_tokens}}}}
                  .dump());
  }

  draftwise::WireResponse post(std::string_view path, const Json& body, const draftwise::CallContext& ctx) override {
    std::lock_guard lock(mu_);
    requests.push_back({std::string(path), body, ctx});
    if (queue_.empty()) return {500, R"({"error":"queue empty"})", {}, {}};
    auto r = queue_.front();
    queue_.pop_front();
    return r;
  }

  std::vector<Request> requests;

 private:
  std::mutex mu_;
  std::deque<draftwise::WireResponse> queue_;
};

inline draftwise::EndpointConfig fast_endpoint(std::string url = "http://localhost:1") {
  draftwise::EndpointConfig c;
  c.base_url = std::move(url);
  c.model_name = "test-model";
  c.max_retries = 2;
  c.retry_backoff = std::chrono::milliseconds(0);
  return c;
}

inline const std::vector<std::string>& toy_words() {
  static const std::vector<std::string> w{
      "great", "food",  "friendly", "staff",  "slow",  "service", "cozy",   "place",  "tasty",  "pizza",
      "cold",  "fries", "loud",     "music",  "clean", "tables",  "fresh",  "salad",  "rude",   "waiter",
      "cheap", "beer",  "long",     "wait",   "nice",  "patio",   "spicy",  "tacos",  "sweet",  "dessert"};
  return w;
}

/// Random corpus: every user reviews `per_user` distinct items.
inline draftwise::Corpus toy_corpus(std::size_t users, std::size_t items, std::size_t per_user,
                                    std::uint64_t seed, draftwise::DatasetKind kind = draftwise::DatasetKind::yelp) {
  std::mt19937_64 rng(seed);
  draftwise::Corpus c;
  for (std::size_t i = 0; i < items; ++i) {
    draftwise::ItemMeta m;
    m.item_id = "item" + std::to_string(i);
    m.dataset_kind = kind;
    if (kind == draftwise::DatasetKind::yelp) {
      m.fields["city"] = "Tampa";
      m.fields["state"] = "FL";
      m.fields["categories"] = "Pizza, Bars";
    } else {
      m.fields["title"] = "Title " + std::to_string(i);
      m.fields["description"] = "Description of item " + std::to_string(i);
    }
    c.meta.push_back(m);
  }
  const auto& words = toy_words();
  for (std::size_t u = 0; u < users; ++u) {
    std::vector<std::size_t> pool(items);
    for (std::size_t i = 0; i < items; ++i) pool[i] = i;
    std::shuffle(pool.begin(), pool.end(), rng);
    for (std::size_t r = 0; r < per_user && r < items; ++r) {
      draftwise::ReviewRecord rec;
      rec.user_id = "user" + std::to_string(u);
      rec.item_id = "item" + std::to_string(pool[r]);
      rec.rating = static_cast<double>(1 + rng() % 5);
      std::string text;
      std::size_t len = 6 + rng() % 10;
      for (std::size_t k = 0; k < len; ++k) text += (k ? " " : "") + words[rng() % words.size()];
      rec.text = text + " u" + std::to_string(u) + "r" + std::to_string(r);
      rec.record_id = draftwise::derive_record_id(rec.user_id, rec.item_id, rec.text);
      c.records.push_back(rec);
    }
  }
  return c;
}

inline draftwise::PromptBuilder builder_for(draftwise::DatasetKind kind = draftwise::DatasetKind::yelp) {
  return draftwise::PromptBuilder(
      draftwise::TemplateStore::load(draftwise::TemplateStore::default_root(), kind));
}

}  // namespace testing_support

namespace testing_support {

/// Independent Okapi BM25 used as a test oracle.
inline std::vector<std::string> oracle_tokens(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : s) {
    if (std::isalnum(c) || c >= 0x80) {
      cur += static_cast<char>(std::tolower(c));
    } else if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

/// Scores of every document against the query, statistics over `docs` only.
inline std::vector<double> oracle_bm25(const std::string& query, const std::vector<std::string>& docs,
                                       double k1 = 1.2, double b = 0.75) {
  std::vector<std::vector<std::string>> toks;
  double total = 0;
  for (const auto& d : docs) {
    toks.push_back(oracle_tokens(d));
    total += toks.back().size();
  }
  const double n = docs.size();
  const double avg = docs.empty() ? 0 : total / n;
  std::vector<double> scores(docs.size(), 0.0);
  for (const auto& q : oracle_tokens(query)) {
    double df = 0;
    for (const auto& t : toks)
      if (std::find(t.begin(), t.end(), q) != t.end()) ++df;
    const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
    for (std::size_t i = 0; i < docs.size(); ++i) {
      double tf = std::count(toks[i].begin(), toks[i].end(), q);
      if (tf == 0) continue;
      double norm = avg > 0 ? toks[i].size() / avg : 0;
      scores[i] += idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * norm));
    }
  }
  return scores;
}

/// Exhaustive score-and-sort: record ids of the top k.
inline std::vector<std::string> oracle_top_k(const std::string& query, const std::vector<draftwise::ReviewRecord>& part,
                                             std::size_t k) {
  std::vector<std::string> docs;
  for (const auto& r : part) docs.push_back(r.text);
  auto scores = oracle_bm25(query, docs);
  std::vector<std::size_t> idx(part.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return part[a].record_id < part[b].record_id;
  });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < idx.size() && i < k; ++i) out.push_back(part[idx[i]].record_id);
  return out;
}

}  // namespace testing_support

namespace testing_support {

/// One query with separate mock backends per role.
struct PipelineRig {
  draftwise::PromptBuilder builder = builder_for();
  draftwise::QuerySpec query;
  draftwise::RetrievedProfile profile;
  std::shared_ptr<draftwise::MockBackend> gen_backend, critic_backend, topic_backend;
  std::unique_ptr<draftwise::LlmClient> gen, critic, topic;

  PipelineRig(draftwise::MockScript gen_script, draftwise::MockScript critic_script,
              std::optional<draftwise::MockScript> topic_script = std::nullopt,
              std::string query_id = "q1") {
    query.query_id = std::move(query_id);
    query.user_id = "u1";
    query.item.item_id = "biz1";
    query.item.dataset_kind = draftwise::DatasetKind::yelp;
    query.item.fields["city"] = "Tampa";
    query.item.fields["state"] = "FL";
    query.target_rating = 4;
    profile.user_id = "u1";
    auto entry = [](std::string user, std::string item, std::string text) {
      draftwise::ReviewRecord r;
      r.user_id = std::move(user);
      r.item_id = std::move(item);
      r.rating = 4;
      r.text = std::move(text);
      r.record_id = draftwise::derive_record_id(r.user_id, r.item_id, r.text);
      return draftwise::ScoredEntry{r, 1.0};
    };
    profile.user_entries = {entry("u1", "biz2", "Cozy spot with tasty tacos."),
                            entry("u1", "biz3", "Slow service but great beer.")};
    profile.neighbor_entries = {entry("u2", "biz1", "Friendly staff and a nice patio."),
                                entry("u3", "biz1", "The pizza was cold.")};
    gen_backend = std::make_shared<draftwise::MockBackend>(std::move(gen_script));
    critic_backend = std::make_shared<draftwise::MockBackend>(std::move(critic_script));
    gen = std::make_unique<draftwise::LlmClient>(fast_endpoint("mock:gen"), gen_backend);
    critic = std::make_unique<draftwise::LlmClient>(fast_endpoint("mock:critic"), critic_backend);
    if (topic_script) {
      topic_backend = std::make_shared<draftwise::MockBackend>(std::move(*topic_script));
      topic = std::make_unique<draftwise::LlmClient>(fast_endpoint("mock:topics"), topic_backend);
    }
  }

  draftwise::Endpoints endpoints() const { return {gen.get(), critic.get(), topic.get()}; }
  draftwise::RefineSession session(const draftwise::Strategy& s = {}) const {
    return draftwise::RefineSession(builder, query, profile, endpoints(), s);
  }
  draftwise::RunTrace run(const draftwise::Strategy& s) const {
    return draftwise::run_pipeline(builder, query, profile, s, endpoints());
  }
};

inline draftwise::MockScript oracle_script(std::string reference, double step = 0.25, double jitter = 0.0,
                                           std::uint64_t seed = 0) {
  draftwise::MockScript s;
  s.mode = draftwise::MockMode::oracle_convergent;
  s.oracle.hidden_reference = std::move(reference);
  s.oracle.convergence_step = step;
  s.oracle.jitter = jitter;
  s.oracle.seed = seed;
  return s;
}

inline draftwise::MockScript replay_script(std::vector<draftwise::ReplayEntry> entries) {
  draftwise::MockScript s;
  s.replay = std::move(entries);
  return s;
}

inline std::string feedback_json(const std::string& tone, const std::string& vocab = "Use simpler words.",
                                 const std::string& sentence = "Shorter sentences.",
                                 const std::string& topic = "Mention the patio.") {
  return Json{{"Tone Consistency", tone},
              {"Vocabulary Match", vocab},
              {"Sentence Structure", sentence},
              {"Topic Relevance", topic}}
      .dump();
}

}  // namespace testing_support

namespace testing_support {

/// Writes a normalized corpus, a mock script and config.json under `root`;
/// every role reads the same script. Returns the config document.
inline Json write_mock_experiment(const std::filesystem::path& root, const draftwise::Corpus& corpus,
                                  std::size_t split_size, const Json& strategy, const Json& mock_script) {
  draftwise::write_corpus(root / "corpus", corpus);
  write_file(root / "mock.json", mock_script.dump(1));
  Json endpoint = {{"base_url", "mock:mock.json"}, {"model_name", "mock"}, {"max_retries", 1},
                   {"retry_backoff_ms", 0}};
  Json config = {{"dataset", {{"kind", "yelp"}, {"corpus_dir", "corpus"}}},
                 {"split", {{"split_size", split_size}, {"seed", 7}, {"dir", "splits"}}},
                 {"strategy", strategy},
                 {"endpoints", {{"generator", endpoint}, {"critic", endpoint}, {"topic_extractor", endpoint},
                                {"judge", endpoint}}},
                 {"geval", {{"sample_count", 3}}},
                 {"worker_limit", 3},
                 {"output_dir", "run"},
                 {"run_seed", 1}};
  write_file(root / "config.json", config.dump(1));
  return config;
}

}  // namespace testing_support

namespace testing_support {

// Bindings whose rendering is the schematic prompt stored in the golden files.
inline draftwise::Bindings schematic_bindings(draftwise::TemplateKind kind) {
  draftwise::TopicSummary schematic;
  schematic.style = {"...", "...", "..."};
  schematic.style_available = true;
  schematic.content_aspects = {{"...", "..."}, {"...", "..."}};
  schematic.content_available = true;

  draftwise::Bindings b;
  for (const auto& name : draftwise::required_bindings(kind)) {
    if (name == draftwise::placeholder::kUserSamples || name == draftwise::placeholder::kNeighborSamples)
      b[name] = std::vector<std::string>{"[SAMPLE 1 Text]\n...", "[SAMPLE 2 Text]\n..."};
    else if (name == draftwise::placeholder::kWritingStyle)
      b[name] = schematic.render_style();
    else if (name == draftwise::placeholder::kItemCharacteristics)
      b[name] = schematic.render_aspects();
    else if (name != draftwise::placeholder::kGenerationPrompt)
      b[name] = "[" + name + "]";
  }
  return b;
}

}  // namespace testing_support
