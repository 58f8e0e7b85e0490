#include "draftwise/mock_backend.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_map>

#include <fmt/format.h>

#include "draftwise/text.hpp"

namespace draftwise {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string fenced(const Json& j) { return "```json\n" + j.dump(1) + "\n```"; }

std::string between(std::string_view s, std::string_view open, std::string_view close) {
  std::size_t a = s.find(open);
  if (a == std::string_view::npos) return {};
  a += open.size();
  std::size_t b = s.find(close, a);
  return std::string(s.substr(a, b == std::string_view::npos ? std::string_view::npos : b - a));
}

ReplayEntry entry_from_json(const Json& j) {
  ReplayEntry e;
  e.text = j.value("text", std::string{});
  e.prompt_tokens = j.value("prompt_tokens", std::int64_t{0});
  e.completion_tokens = j.value("completion_tokens", std::int64_t{0});
  e.status = j.value("status", 200);
  e.omit_usage = j.value("omit_usage", false);
  e.sticky = j.value("sticky", false);
  return e;
}

}  // namespace

std::string_view to_string(RankingMetric m) {
  return m == RankingMetric::unigram_overlap ? "unigram_overlap" : "normalized_edit_similarity";
}

RankingMetric parse_ranking_metric(std::string_view name) {
  if (name == "unigram_overlap") return RankingMetric::unigram_overlap;
  if (name == "normalized_edit_similarity") return RankingMetric::normalized_edit_similarity;
  throw ConfigError(fmt::format("unknown ranking metric '{}'", name));
}

MockScript MockScript::from_json(const Json& j) {
  MockScript s;
  std::string mode = j.value("mode", std::string("replay"));
  if (mode == "replay")
    s.mode = MockMode::replay;
  else if (mode == "oracle_convergent")
    s.mode = MockMode::oracle_convergent;
  else
    throw ConfigError("unknown mock mode '" + mode + "'");
  if (auto it = j.find("replay"); it != j.end())
    for (const auto& e : *it) s.replay.push_back(entry_from_json(e));
  if (auto it = j.find("oracle"); it != j.end()) {
    const Json& o = *it;
    s.oracle.hidden_reference = o.value("hidden_reference", std::string{});
    s.oracle.generic_text = o.value("generic_text", s.oracle.generic_text);
    s.oracle.convergence_step = o.value("convergence_step", s.oracle.convergence_step);
    s.oracle.ranking_metric =
        parse_ranking_metric(o.value("ranking_metric", std::string("unigram_overlap")));
    s.oracle.jitter = o.value("jitter", 0.0);
    s.oracle.seed = o.value("seed", std::uint64_t{0});
  }
  if (auto it = j.find("by_query"); it != j.end())
    for (const auto& [qid, sub] : it->items()) s.by_query.emplace(qid, from_json(sub));
  return s;
}

MockScript MockScript::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open mock script " + path.string());
  Json j = Json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("mock script is not valid JSON: " + path.string());
  return from_json(j);
}

Json MockScript::to_json() const {
  Json j{{"mode", mode == MockMode::replay ? "replay" : "oracle_convergent"}};
  if (!replay.empty()) {
    Json arr = Json::array();
    for (const auto& e : replay)
      arr.push_back(Json{{"text", e.text},
                         {"prompt_tokens", e.prompt_tokens},
                         {"completion_tokens", e.completion_tokens},
                         {"status", e.status},
                         {"omit_usage", e.omit_usage},
                         {"sticky", e.sticky}});
    j["replay"] = arr;
  }
  if (mode == MockMode::oracle_convergent)
    j["oracle"] = Json{{"hidden_reference", oracle.hidden_reference},
                       {"generic_text", oracle.generic_text},
                       {"convergence_step", oracle.convergence_step},
                       {"ranking_metric", to_string(oracle.ranking_metric)},
                       {"jitter", oracle.jitter},
                       {"seed", oracle.seed}};
  if (!by_query.empty()) {
    Json bq = Json::object();
    for (const auto& [k, v] : by_query) bq[k] = v.to_json();
    j["by_query"] = bq;
  }
  return j;
}

// ---------------------------------------------------------------------------
// metrics used by the oracle critic

double unigram_overlap(std::string_view a, std::string_view b) {
  auto ta = text::lexical_tokens(a);
  auto tb = text::lexical_tokens(b);
  if (ta.empty() && tb.empty()) return 1.0;
  if (ta.empty() || tb.empty()) return 0.0;
  std::unordered_map<std::string, long> counts;
  for (const auto& t : ta) ++counts[t];
  long common = 0;
  for (const auto& t : tb) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  return 2.0 * static_cast<double>(common) / static_cast<double>(ta.size() + tb.size());
}

double normalized_edit_similarity(std::string_view a, std::string_view b) {
  auto ta = text::lexical_tokens(a);
  auto tb = text::lexical_tokens(b);
  if (ta.empty() && tb.empty()) return 1.0;
  std::vector<std::size_t> prev(tb.size() + 1), cur(tb.size() + 1);
  for (std::size_t j = 0; j <= tb.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= ta.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= tb.size(); ++j) {
      std::size_t sub = prev[j - 1] + (ta[i - 1] == tb[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  double d = static_cast<double>(prev[tb.size()]);
  return 1.0 - d / static_cast<double>(std::max(ta.size(), tb.size()));
}

double ranking_metric(RankingMetric metric, std::string_view candidate, std::string_view reference) {
  return metric == RankingMetric::unigram_overlap ? unigram_overlap(candidate, reference)
                                                  : normalized_edit_similarity(candidate, reference);
}

double oracle_fraction(const OracleSettings& s, std::string_view query_id, int step, int sample) {
  double f = static_cast<double>(step) * s.convergence_step;
  if (s.jitter != 0.0) {
    std::uint64_t h = text::fnv1a64(fmt::format("{}|{}|{}|{}", s.seed, query_id, step, sample));
    h = splitmix64(h);
    double u = static_cast<double>(h >> 11) * 0x1.0p-53 * 2.0 - 1.0;
    f += s.jitter * u;
  }
  return std::clamp(f, 0.0, 1.0);
}

std::string oracle_draft(const OracleSettings& s, double fraction) {
  auto ref = text::split_whitespace(s.hidden_reference);
  auto generic = text::split_whitespace(s.generic_text);
  if (generic.empty()) generic.push_back("filler");
  const std::size_t m = ref.size();
  auto q = static_cast<std::size_t>(std::floor(std::clamp(fraction, 0.0, 1.0) * static_cast<double>(m) + 0.5));
  q = std::min(q, m);
  std::vector<std::string> words(ref.begin(), ref.begin() + static_cast<std::ptrdiff_t>(q));
  for (std::size_t i = q; i < m; ++i) words.push_back(generic[i % generic.size()]);
  return text::join(words, " ");
}

std::vector<std::string> extract_candidates(std::string_view prompt) {
  std::vector<std::string> out;
  std::size_t from = 0;
  for (char letter = 'A'; letter <= 'Z'; ++letter) {
    std::string marker = fmt::format("# Review {}:\n", letter);
    std::size_t start = prompt.find(marker, from);
    if (start == std::string_view::npos) break;
    start += marker.size();
    std::size_t end = prompt.find(fmt::format("\n\n# Review {}:\n", static_cast<char>(letter + 1)), start);
    if (end == std::string_view::npos) end = prompt.find("\n\n# Task", start);
    if (end == std::string_view::npos) end = prompt.size();
    out.emplace_back(prompt.substr(start, end - start));
    from = end;
  }
  return out;
}

// ---------------------------------------------------------------------------
// MockBackend

MockBackend::MockBackend(MockScript script) : script_(std::move(script)) {
  queues_[""] = script_.replay;
  for (const auto& [qid, sub] : script_.by_query) queues_[qid] = sub.replay;
}

MockBackend::Reply MockBackend::respond(std::string_view prompt, const CallContext& ctx) {
  auto sub = script_.by_query.find(ctx.query_id);
  const MockScript& s = sub != script_.by_query.end() ? sub->second : script_;
  const std::string key = sub != script_.by_query.end() ? ctx.query_id : std::string();

  if (s.mode == MockMode::oracle_convergent) return respond_oracle(s.oracle, prompt, ctx);
  return respond_replay(key);
}

MockBackend::Reply MockBackend::respond_replay(const std::string& key) {
  std::lock_guard lock(mu_);
  auto& queue = queues_[key];
  auto& cursor = cursors_[key];
  if (cursor >= queue.size())
    throw ScriptExhausted(fmt::format("mock replay script exhausted after {} responses", queue.size()));
  const ReplayEntry& e = queue[cursor];
  if (!e.sticky) ++cursor;
  return Reply{e.status, e.text, e.prompt_tokens, e.completion_tokens, e.omit_usage};
}

MockBackend::Reply MockBackend::respond_oracle(const OracleSettings& s, std::string_view prompt,
                                               const CallContext& ctx) const {
  Reply r;
  switch (ctx.purpose) {
    case CallPurpose::initial_draft:
    case CallPurpose::refinement: {
      int step = ctx.purpose == CallPurpose::initial_draft ? 0 : ctx.iteration;
      double f = oracle_fraction(s, ctx.query_id, step, ctx.sample_index);
      r.text = "Review text: " + oracle_draft(s, f);
      break;
    }
    case CallPurpose::feedback: {
      std::string draft = between(prompt, "#Generated Output:\n", "\n\n#");
      bool done = ranking_metric(s.ranking_metric, draft, s.hidden_reference) >= 1.0;
      std::string note = done ? "No further improvement needed"
                              : "Bring the wording closer to the user's own reviews.";
      r.text = fenced(Json{{"Tone Consistency", note},
                           {"Vocabulary Match", note},
                           {"Sentence Structure", note},
                           {"Topic Relevance", note}});
      break;
    }
    case CallPurpose::knockout:
    case CallPurpose::best_of_n: {
      auto candidates = extract_candidates(prompt);
      std::size_t best = 0;
      double best_score = -1.0;
      for (std::size_t i = 0; i < candidates.size(); ++i) {
        double v = ranking_metric(s.ranking_metric, candidates[i], s.hidden_reference);
        if (v > best_score) {
          best_score = v;
          best = i;
        }
      }
      r.text = fenced(Json{{"answer", std::string(1, static_cast<char>('A' + best))},
                           {"explanation", "closest to the hidden reference"}});
      break;
    }
    case CallPurpose::style_extraction:
      r.text = fenced(Json{{"Tone", "Casual and upbeat."},
                           {"Vocabulary style", "Plain everyday words."},
                           {"Sentence structure", "Short declarative sentences."}});
      break;
    case CallPurpose::content_extraction:
      r.text = fenced(Json::array({Json{{"aspect", "service"}, {"description", "Staff attentiveness."}},
                                   Json{{"aspect", "food"}, {"description", "Taste and portions."}}}));
      break;
    case CallPurpose::judge: {
      std::size_t resp = prompt.rfind("\n-response: ");
      std::size_t ref = prompt.rfind("\n-reference: ", resp);
      int score = 0;
      if (resp != std::string_view::npos && ref != std::string_view::npos) {
        std::string_view reference = prompt.substr(ref + 13, resp - ref - 13);
        std::string_view response = prompt.substr(resp + 12);
        score = static_cast<int>(std::lround(4.0 * ranking_metric(s.ranking_metric, response, reference)));
      }
      r.text = fenced(Json{{"score", score}});
      break;
    }
    case CallPurpose::embedding:
      break;
  }
  r.prompt_tokens = static_cast<std::int64_t>(text::whitespace_token_count(prompt));
  r.completion_tokens = static_cast<std::int64_t>(text::whitespace_token_count(r.text));
  return r;
}

std::vector<double> MockBackend::embed(std::string_view input) {
  std::vector<double> v(64, 0.0);
  for (const auto& tok : text::lexical_tokens(input)) {
    std::uint64_t h = splitmix64(text::fnv1a64(tok));
    v[h % 64] += (h >> 63) ? 1.0 : -1.0;
  }
  double norm = 0.0;
  for (double x : v) norm += x * x;
  if (norm > 0.0)
    for (double& x : v) x /= std::sqrt(norm);
  return v;
}

WireResponse MockBackend::post(std::string_view path, const Json& body, const CallContext& ctx) {
  WireResponse out;
  if (path == "/embeddings") {
    Json data = Json::array();
    std::size_t i = 0;
    for (const auto& input : body.at("input")) {
      data.push_back(Json{{"index", i++}, {"embedding", embed(input.get<std::string>())}});
    }
    out.status = 200;
    out.body = Json{{"object", "list"}, {"data", data}}.dump();
    return out;
  }
  if (path != "/chat/completions") {
    out.status = 404;
    out.body = R"({"error":{"message":"unknown path"}})";
    return out;
  }

  const auto& messages = body.at("messages");
  std::string prompt = messages.empty() ? std::string() : messages.back().at("content").get<std::string>();
  int n = body.value("n", 1);

  Json choices = Json::array();
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  bool omit_usage = false;
  for (int i = 0; i < n; ++i) {
    CallContext c = ctx;
    c.sample_index = ctx.sample_index + i;
    Reply r = respond(prompt, c);
    if (r.status < 200 || r.status >= 300) {
      out.status = r.status;
      out.body = Json{{"error", {{"message", r.text.empty() ? "scripted failure" : r.text}}}}.dump();
      return out;
    }
    choices.push_back(Json{{"index", i},
                           {"message", {{"role", "assistant"}, {"content", r.text}}},
                           {"finish_reason", "stop"}});
    prompt_tokens += r.prompt_tokens;
    completion_tokens += r.completion_tokens;
    omit_usage = omit_usage || r.omit_usage;
  }
  Json resp{{"object", "chat.completion"}, {"choices", choices}};
  if (!omit_usage)
    resp["usage"] = Json{{"prompt_tokens", prompt_tokens},
                         {"completion_tokens", completion_tokens},
                         {"total_tokens", prompt_tokens + completion_tokens}};
  out.status = 200;
  out.body = resp.dump();
  return out;
}

ChatExchange mock_complete(MockBackend& backend, const PromptBundle& prompt, const CallContext& ctx) {
  auto r = backend.respond(prompt.text, ctx);
  if (r.status < 200 || r.status >= 300)
    throw TransportError(r.status, fmt::format("mock answered HTTP {}", r.status));
  ChatExchange e;
  e.role = ctx.role;
  e.purpose = ctx.purpose;
  e.request_text = prompt.text;
  e.response_text = r.text;
  e.attempt_count = 1;
  if (r.omit_usage) {
    e.usage.approximate = true;
    e.usage.prompt_tokens = static_cast<std::int64_t>(text::whitespace_token_count(prompt.text));
    e.usage.completion_tokens = static_cast<std::int64_t>(text::whitespace_token_count(r.text));
  } else {
    e.usage.prompt_tokens = r.prompt_tokens;
    e.usage.completion_tokens = r.completion_tokens;
  }
  return e;
}

}  // namespace draftwise
