#include "draftwise/refine_loop.hpp"

#include <algorithm>
#include <cctype>
#include <regex>

#include <fmt/format.h>

#include "draftwise/text.hpp"

namespace draftwise {
namespace {

constexpr std::string_view kSentinel = "No further improvement needed";
constexpr std::string_view kNotAvailable = "Not available.";

std::string normalize_key(std::string_view key) {
  std::string out;
  for (unsigned char c : key)
    if (std::isalnum(c)) out += static_cast<char>(std::tolower(c));
  return out;
}

std::string value_text(const Json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

const Json* find_key(const Json& obj, std::string_view normalized) {
  for (const auto& [k, v] : obj.items())
    if (normalize_key(k) == normalized) return &v;
  return nullptr;
}

const Json* find_key_prefix(const Json& obj, std::initializer_list<std::string_view> prefixes) {
  for (const auto& [k, v] : obj.items()) {
    std::string nk = normalize_key(k);
    for (auto p : prefixes)
      if (nk.starts_with(p)) return &v;
  }
  return nullptr;
}

/// First fenced block, then the last one that parses.
std::optional<Json> parse_block(std::string_view raw) {
  if (auto b = extract_json_block(raw); b.ok()) return b.value;
  if (auto b = extract_last_json_block(raw); b.ok()) return b.value;
  return std::nullopt;
}

std::optional<std::size_t> letter_index(std::string_view s, std::size_t count) {
  static const std::regex re(R"(^\W*(?:review\s+)?([a-z])\b)", std::regex::icase);
  std::string str(s);
  std::smatch m;
  if (!std::regex_search(str, m, re)) return std::nullopt;
  auto idx = static_cast<std::size_t>(std::toupper(static_cast<unsigned char>(m[1].str()[0])) - 'A');
  if (idx >= count) return std::nullopt;
  return idx;
}

Json usage_json(const TokenUsage& u) {
  return Json{{"prompt_tokens", u.prompt_tokens},
              {"completion_tokens", u.completion_tokens},
              {"total_tokens", u.total()},
              {"approximate", u.approximate}};
}

TokenUsage usage_from_json(const Json& j) {
  TokenUsage u;
  u.prompt_tokens = j.value("prompt_tokens", std::int64_t{0});
  u.completion_tokens = j.value("completion_tokens", std::int64_t{0});
  u.approximate = j.value("approximate", false);
  return u;
}

template <class T>
void put_optional(Json& j, const char* key, const std::optional<T>& v) {
  if (v)
    j[key] = *v;
  else
    j[key] = nullptr;
}

std::vector<ChatExchange> exchanges_from(const Json& arr) {
  std::vector<ChatExchange> out;
  for (const auto& e : arr) out.push_back(e.get<ChatExchange>());
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Strategy

std::string_view to_string(StrategyVariant v) {
  switch (v) {
    case StrategyVariant::vanilla:
      return "vanilla";
    case StrategyVariant::knockout:
      return "knockout";
    case StrategyVariant::knockout_best_of_n:
      return "knockout_best_of_n";
    case StrategyVariant::topic_extraction:
      return "topic_extraction";
  }
  return "vanilla";
}

StrategyVariant parse_strategy_variant(std::string_view name) {
  for (auto v : {StrategyVariant::vanilla, StrategyVariant::knockout,
                 StrategyVariant::knockout_best_of_n, StrategyVariant::topic_extraction})
    if (to_string(v) == name) return v;
  throw ConfigError(fmt::format("unknown strategy '{}'", name));
}

void Strategy::validate() const {
  if (T < 1) throw ConfigError("strategy.T must be at least 1");
  if (variant == StrategyVariant::knockout_best_of_n && (n < 2 || n > 26))
    throw ConfigError("strategy.n must be within 2..26 for knockout_best_of_n");
  if (parse_retries < 0) throw ConfigError("strategy.parse_retries must be non-negative");
}

void to_json(Json& j, const Strategy& s) {
  j = Json{{"variant", to_string(s.variant)},
           {"T", s.T},
           {"n", s.n},
           {"parse_retries", s.parse_retries},
           {"early_stop", s.early_stop},
           {"randomize_knockout_order", s.randomize_knockout_order},
           {"seed", s.seed}};
}

void from_json(const Json& j, Strategy& s) {
  if (auto it = j.find("variant"); it != j.end())
    s.variant = parse_strategy_variant(it->get<std::string>());
  s.T = j.value("T", s.T);
  s.n = j.value("n", s.n);
  s.parse_retries = j.value("parse_retries", s.parse_retries);
  s.early_stop = j.value("early_stop", s.early_stop);
  s.randomize_knockout_order = j.value("randomize_knockout_order", s.randomize_knockout_order);
  s.seed = j.value("seed", s.seed);
}

// ---------------------------------------------------------------------------
// Feedback and topics

bool FeedbackReport::all_done() const {
  return std::all_of(no_further_improvement.begin(), no_further_improvement.end(),
                     [](bool b) { return b; });
}

std::string FeedbackReport::render() const {
  if (degraded) return raw_text;
  Json j = Json::object();
  for (std::size_t i = 0; i < kCriteria.size(); ++i) j[std::string(kCriteria[i])] = criteria[i];
  return j.dump(0);
}

void to_json(Json& j, const FeedbackReport& f) {
  Json flags = Json::object();
  j = Json::object();
  for (std::size_t i = 0; i < FeedbackReport::kCriteria.size(); ++i) {
    j[std::string(FeedbackReport::kCriteria[i])] = f.criteria[i];
    flags[std::string(FeedbackReport::kCriteria[i])] = f.no_further_improvement[i];
  }
  j["no_further_improvement"] = flags;
  j["degraded"] = f.degraded;
  j["raw_text"] = f.raw_text;
}

void from_json(const Json& j, FeedbackReport& f) {
  for (std::size_t i = 0; i < FeedbackReport::kCriteria.size(); ++i) {
    std::string key(FeedbackReport::kCriteria[i]);
    f.criteria[i] = j.value(key, std::string{});
    f.no_further_improvement[i] = j.contains("no_further_improvement")
                                      ? j["no_further_improvement"].value(key, false)
                                      : false;
  }
  f.degraded = j.value("degraded", false);
  f.raw_text = j.value("raw_text", std::string{});
}

std::optional<FeedbackReport> parse_feedback(std::string_view raw) {
  auto value = parse_block(raw);
  if (!value || !value->is_object()) return std::nullopt;
  FeedbackReport r;
  r.raw_text = std::string(raw);
  for (std::size_t i = 0; i < FeedbackReport::kCriteria.size(); ++i) {
    const Json* v = find_key(*value, normalize_key(FeedbackReport::kCriteria[i]));
    if (!v) return std::nullopt;
    r.criteria[i] = value_text(*v);
    r.no_further_improvement[i] = text::contains_icase(r.criteria[i], kSentinel);
  }
  return r;
}

std::string TopicSummary::render_style() const {
  if (!style_available) return std::string(kNotAvailable);
  return fmt::format("Tone: {}\nVocabulary style: {}\nSentence structure: {}", style[0], style[1],
                     style[2]);
}

std::string TopicSummary::render_aspects() const {
  if (!content_available || content_aspects.empty()) return std::string(kNotAvailable);
  std::vector<std::string> blocks;
  for (const auto& a : content_aspects)
    blocks.push_back(fmt::format("aspect title: {}\naspect detail: {}", a.aspect, a.description));
  return text::join(blocks, "\n\n");
}

void to_json(Json& j, const TopicSummary& t) {
  Json aspects = Json::array();
  for (const auto& a : t.content_aspects)
    aspects.push_back(Json{{"aspect", a.aspect}, {"description", a.description}});
  j = Json{{"style",
            {{"tone", t.style[0]}, {"vocabulary_style", t.style[1]}, {"sentence_structure", t.style[2]}}},
           {"content_aspects", aspects},
           {"style_available", t.style_available},
           {"content_available", t.content_available},
           {"style_degraded", t.style_degraded},
           {"content_degraded", t.content_degraded}};
}

void from_json(const Json& j, TopicSummary& t) {
  const Json& s = j.at("style");
  t.style = {s.value("tone", std::string{}), s.value("vocabulary_style", std::string{}),
             s.value("sentence_structure", std::string{})};
  t.content_aspects.clear();
  for (const auto& a : j.at("content_aspects"))
    t.content_aspects.push_back({a.value("aspect", std::string{}), a.value("description", std::string{})});
  t.style_available = j.value("style_available", false);
  t.content_available = j.value("content_available", false);
  t.style_degraded = j.value("style_degraded", false);
  t.content_degraded = j.value("content_degraded", false);
}

std::optional<std::array<std::string, 3>> parse_style(std::string_view raw) {
  auto value = parse_block(raw);
  if (!value || !value->is_object()) return std::nullopt;
  const Json* tone = find_key_prefix(*value, {"tone"});
  const Json* vocab = find_key_prefix(*value, {"vocabulary"});
  const Json* sentence = find_key_prefix(*value, {"sentence"});
  if (!tone || !vocab || !sentence) return std::nullopt;
  return std::array<std::string, 3>{value_text(*tone), value_text(*vocab), value_text(*sentence)};
}

std::optional<std::vector<Aspect>> parse_aspects(std::string_view raw) {
  auto value = parse_block(raw);
  if (!value) return std::nullopt;
  const Json* list = &*value;
  if (list->is_object()) {
    list = nullptr;
    for (const auto& [k, v] : value->items())
      if (v.is_array()) {
        list = &v;
        break;
      }
  }
  if (!list || !list->is_array() || list->empty()) return std::nullopt;
  std::vector<Aspect> out;
  for (const auto& item : *list) {
    if (!item.is_object()) return std::nullopt;
    const Json* a = find_key(item, "aspect");
    if (!a) a = find_key_prefix(item, {"aspecttitle", "title"});
    const Json* d = find_key_prefix(item, {"description", "aspectdetail", "detail"});
    if (!a || !d) return std::nullopt;
    out.push_back({value_text(*a), value_text(*d)});
  }
  return out;
}

std::optional<std::size_t> parse_choice(std::string_view raw, std::size_t count) {
  if (auto value = parse_block(raw); value && value->is_object()) {
    if (const Json* answer = find_key(*value, "answer"); answer && answer->is_string())
      if (auto idx = letter_index(answer->get_ref<const std::string&>(), count)) return idx;
  }
  // The answer format in the selection prompts is not valid JSON, so replies
  // that copy it are read with a pattern.
  static const std::regex re(R"re("?answer"?\s*:\s*"?\s*([A-Za-z])\b)re", std::regex::icase);
  std::string s(raw);
  std::smatch m;
  if (std::regex_search(s, m, re)) {
    auto idx = static_cast<std::size_t>(std::toupper(static_cast<unsigned char>(m[1].str()[0])) - 'A');
    if (idx < count) return idx;
  }
  return std::nullopt;
}

std::string strip_review_prefix(std::string_view draft) {
  std::string t = text::trim(draft);
  constexpr std::string_view kPrefix = "Review text:";
  if (text::starts_with_icase(t, kPrefix)) t = text::trim(std::string_view(t).substr(kPrefix.size()));
  return t;
}

// ---------------------------------------------------------------------------
// Traces

void to_json(Json& j, const IterationTrace& it) {
  j = Json{{"t", it.t}, {"draft", it.draft}};
  put_optional(j, "new_draft", it.new_draft);
  if (!it.samples.empty()) j["samples"] = it.samples;
  put_optional(j, "best_of_n_choice", it.best_of_n_choice);
  if (it.best_of_n_choice) j["best_of_n_fallback"] = it.best_of_n_fallback;
  if (it.knockout) {
    const auto& k = *it.knockout;
    j["knockout"] = Json{{"new_draft_slot", std::string(1, k.new_draft_slot)},
                         {"answer", k.answer ? Json(std::string(1, *k.answer)) : Json(nullptr)},
                         {"winner_was_new", k.winner_was_new},
                         {"fallback", k.fallback}};
  } else {
    j["knockout"] = nullptr;
  }
  put_optional(j, "feedback", it.feedback);
  j["exchanges"] = it.exchanges;
}

void from_json(const Json& j, IterationTrace& it) {
  it.t = j.at("t").get<int>();
  it.draft = j.at("draft").get<std::string>();
  it.new_draft = j.contains("new_draft") && !j["new_draft"].is_null()
                     ? std::optional<std::string>(j["new_draft"].get<std::string>())
                     : std::nullopt;
  it.samples = j.value("samples", std::vector<std::string>{});
  it.best_of_n_choice = j.contains("best_of_n_choice") && !j["best_of_n_choice"].is_null()
                            ? std::optional<std::size_t>(j["best_of_n_choice"].get<std::size_t>())
                            : std::nullopt;
  it.best_of_n_fallback = j.value("best_of_n_fallback", false);
  it.knockout.reset();
  if (j.contains("knockout") && !j["knockout"].is_null()) {
    const Json& k = j["knockout"];
    KnockoutDecision d;
    d.new_draft_slot = k.at("new_draft_slot").get<std::string>().at(0);
    if (!k.at("answer").is_null()) d.answer = k["answer"].get<std::string>().at(0);
    d.winner_was_new = k.at("winner_was_new").get<bool>();
    d.fallback = k.value("fallback", false);
    it.knockout = d;
  }
  it.feedback = j.contains("feedback") && !j["feedback"].is_null()
                    ? std::optional<FeedbackReport>(j["feedback"].get<FeedbackReport>())
                    : std::nullopt;
  it.exchanges = exchanges_from(j.at("exchanges"));
}

std::map<Role, TokenUsage> RunTrace::recompute_usage() const {
  std::map<Role, TokenUsage> out;
  for (const auto& it : iterations)
    for (const auto& e : it.exchanges) out[e.role] += e.usage;
  for (const auto& e : partial_exchanges) out[e.role] += e.usage;
  return out;
}

std::map<Role, std::size_t> RunTrace::call_counts() const {
  std::map<Role, std::size_t> out;
  for (const auto& it : iterations)
    for (const auto& e : it.exchanges) ++out[e.role];
  for (const auto& e : partial_exchanges) ++out[e.role];
  return out;
}

void to_json(Json& j, const RunTrace& r) {
  Json usage = Json::object();
  for (const auto& [role, u] : r.usage_by_role) usage[std::string(to_string(role))] = usage_json(u);
  j = Json{{"query_id", r.query_id},
           {"user_id", r.user_id},
           {"strategy", r.strategy},
           {"status", r.status == RunStatus::completed ? "completed" : "aborted"},
           {"abort_reason", r.abort_reason},
           {"stopped_early", r.stopped_early},
           {"query_text", r.query_text},
           {"retrieved_profile", r.retrieved}};
  put_optional(j, "topics", r.topics);
  j["iterations"] = r.iterations;
  j["partial_exchanges"] = r.partial_exchanges;
  j["final_draft"] = r.final_draft;
  j["usage_by_role"] = usage;
}

void from_json(const Json& j, RunTrace& r) {
  r.query_id = j.at("query_id").get<std::string>();
  r.user_id = j.value("user_id", std::string{});
  r.strategy = j.at("strategy").get<Strategy>();
  std::string status = j.at("status").get<std::string>();
  if (status != "completed" && status != "aborted") throw ConfigError("unknown run status " + status);
  r.status = status == "completed" ? RunStatus::completed : RunStatus::aborted;
  r.abort_reason = j.value("abort_reason", std::string{});
  r.stopped_early = j.value("stopped_early", false);
  r.query_text = j.value("query_text", std::string{});
  r.retrieved = j.at("retrieved_profile").get<RetrievedProfile>();
  r.topics = j.contains("topics") && !j["topics"].is_null()
                 ? std::optional<TopicSummary>(j["topics"].get<TopicSummary>())
                 : std::nullopt;
  r.iterations.clear();
  for (const auto& it : j.at("iterations")) r.iterations.push_back(it.get<IterationTrace>());
  r.partial_exchanges = exchanges_from(j.value("partial_exchanges", Json::array()));
  r.final_draft = j.value("final_draft", std::string{});
  r.usage_by_role.clear();
  for (const auto& [role, u] : j.at("usage_by_role").items()) r.usage_by_role[parse_role(role)] = usage_from_json(u);
}

// ---------------------------------------------------------------------------
// Session

std::string render_query(const PromptBuilder& builder, const ItemMeta& item, double target_rating) {
  std::string details = render_item_details(item);
  if (details.empty()) details = "id: " + item.item_id;
  Bindings b{{std::string(placeholder::kTargetRating), text::format_rating(target_rating)},
             {std::string(placeholder::kItemDetails), details}};
  return builder.build(TemplateKind::query_x, b).text;
}

RefineSession::RefineSession(const PromptBuilder& builder, QuerySpec query,
                             const RetrievedProfile& profile, Endpoints endpoints, Strategy strategy)
    : builder_(builder),
      query_(std::move(query)),
      endpoints_(endpoints),
      strategy_(strategy) {
  if (!endpoints_.generator || !endpoints_.critic)
    throw ConfigError("refine loop needs generator and critic endpoints");
  query_text_ = render_query(builder_, query_.item, query_.target_rating);

  std::string details = render_item_details(query_.item);
  if (details.empty()) details = "id: " + query_.item.item_id;
  std::vector<std::string> user_samples;
  for (const auto& e : profile.user_entries) user_samples.push_back(e.record.text);
  std::vector<std::string> neighbor_samples;
  for (const auto& e : profile.neighbor_entries)
    neighbor_samples.push_back(neighbor_sample(e.record.rating, e.record.text));

  base_.emplace(std::string(placeholder::kTargetRating), text::format_rating(query_.target_rating));
  base_.emplace(std::string(placeholder::kItemDetails), std::move(details));
  base_.emplace(std::string(placeholder::kUserSamples), std::move(user_samples));
  base_.emplace(std::string(placeholder::kNeighborSamples), std::move(neighbor_samples));
  base_.emplace(std::string(placeholder::kQuery), query_text_);
}

CallContext RefineSession::context(Role role, CallPurpose purpose, int t) const {
  CallContext c;
  c.role = role;
  c.purpose = purpose;
  c.query_id = query_.query_id;
  c.iteration = t;
  return c;
}

ChatExchange RefineSession::call(const LlmClient& client, const PromptBundle& prompt,
                                 const CallContext& ctx, std::vector<ChatExchange>& sink) const {
  ChatExchange e = client.complete(prompt, ctx);
  sink.push_back(e);
  return e;
}

const LlmClient& RefineSession::topic_client() const {
  return endpoints_.topic_extractor ? *endpoints_.topic_extractor : *endpoints_.critic;
}

std::string RefineSession::generate_initial(std::vector<ChatExchange>& sink) const {
  auto prompt = builder_.build(TemplateKind::generation, base_);
  auto e = call(*endpoints_.generator, prompt, context(Role::generator, CallPurpose::initial_draft, 0), sink);
  std::string draft = strip_review_prefix(e.response_text);
  if (draft.empty()) throw Error("generator returned an empty initial draft");
  return draft;
}

FeedbackReport RefineSession::critique(const std::string& draft, int t, const TopicSummary* topics,
                                       std::vector<ChatExchange>& sink) const {
  Bindings b = base_;
  b[std::string(placeholder::kDraft)] = draft;
  TemplateKind kind = TemplateKind::critic;
  if (topics) {
    kind = TemplateKind::critic_topics;
    b[std::string(placeholder::kWritingStyle)] = topics->render_style();
    b[std::string(placeholder::kItemCharacteristics)] = topics->render_aspects();
  }
  auto prompt = builder_.build(kind, b);
  auto ctx = context(Role::critic, CallPurpose::feedback, t);

  std::string last_raw;
  for (int attempt = 0; attempt <= strategy_.parse_retries; ++attempt) {
    try {
      last_raw = call(*endpoints_.critic, prompt, ctx, sink).response_text;
    } catch (const Error& e) {
      throw CriticUnavailable(fmt::format("critic feedback at t={}: {}", t, e.what()));
    }
    if (auto report = parse_feedback(last_raw)) return *report;
  }
  FeedbackReport degraded;
  degraded.degraded = true;
  degraded.raw_text = last_raw;
  for (std::size_t i = 0; i < degraded.criteria.size(); ++i) {
    degraded.criteria[i] = last_raw;
    degraded.no_further_improvement[i] = text::contains_icase(last_raw, kSentinel);
  }
  return degraded;
}

Bindings RefineSession::refinement_bindings(const std::string& draft,
                                            const FeedbackReport& feedback) const {
  Bindings b = base_;
  b[std::string(placeholder::kDraft)] = draft;
  b[std::string(placeholder::kFeedback)] = feedback.render();
  return b;
}

std::string RefineSession::refine(const std::string& draft, const FeedbackReport& feedback, int t,
                                  std::vector<ChatExchange>& sink) const {
  auto prompt = builder_.build(TemplateKind::refinement, refinement_bindings(draft, feedback));
  auto e = call(*endpoints_.generator, prompt, context(Role::generator, CallPurpose::refinement, t), sink);
  std::string out = strip_review_prefix(e.response_text);
  if (out.empty()) throw Error(fmt::format("generator returned an empty draft at t={}", t));
  return out;
}

std::vector<std::string> RefineSession::refine_samples(const std::string& draft,
                                                       const FeedbackReport& feedback, int t, int n,
                                                       std::vector<ChatExchange>& sink) const {
  auto prompt = builder_.build(TemplateKind::refinement, refinement_bindings(draft, feedback));
  std::vector<ChatExchange> exchanges;
  try {
    exchanges = endpoints_.generator->sample_n(prompt, n, context(Role::generator, CallPurpose::refinement, t));
  } catch (const SampleError& e) {
    sink.insert(sink.end(), e.completed().begin(), e.completed().end());
    throw;
  }
  std::vector<std::string> out;
  for (auto& e : exchanges) {
    out.push_back(strip_review_prefix(e.response_text));
    sink.push_back(std::move(e));
  }
  for (const auto& s : out)
    if (s.empty()) throw Error(fmt::format("generator returned an empty sample at t={}", t));
  return out;
}

std::pair<std::string, KnockoutDecision> RefineSession::knockout_select(
    const std::string& prev_winner, const std::string& new_draft, int t,
    std::vector<ChatExchange>& sink) const {
  KnockoutDecision d;
  if (strategy_.randomize_knockout_order) {
    auto h = text::fnv1a64(fmt::format("{}|{}|{}", strategy_.seed, query_.query_id, t));
    d.new_draft_slot = (h & 1U) ? 'A' : 'B';
  }
  const std::string& a = d.new_draft_slot == 'B' ? prev_winner : new_draft;
  const std::string& b = d.new_draft_slot == 'B' ? new_draft : prev_winner;
  Bindings bindings = base_;
  bindings[placeholder::candidate(0)] = a;
  bindings[placeholder::candidate(1)] = b;
  auto prompt = builder_.build(TemplateKind::knockout, bindings);
  auto ctx = context(Role::critic, CallPurpose::knockout, t);

  for (int attempt = 0; attempt <= strategy_.parse_retries && !d.answer; ++attempt) {
    std::string raw;
    try {
      raw = call(*endpoints_.critic, prompt, ctx, sink).response_text;
    } catch (const Error& e) {
      throw CriticUnavailable(fmt::format("knockout at t={}: {}", t, e.what()));
    }
    if (auto idx = parse_choice(raw, 2)) d.answer = static_cast<char>('A' + *idx);
  }
  if (!d.answer) {
    d.fallback = true;
    d.winner_was_new = true;
  } else {
    d.winner_was_new = *d.answer == d.new_draft_slot;
  }
  return {d.winner_was_new ? new_draft : prev_winner, d};
}

std::pair<std::string, std::size_t> RefineSession::best_of_n_select(
    const std::vector<std::string>& candidates, int t, bool* fallback,
    std::vector<ChatExchange>& sink) const {
  if (candidates.size() < 2 || candidates.size() > 26)
    throw std::invalid_argument("best-of-N needs 2..26 candidates");
  Bindings bindings = base_;
  for (std::size_t i = 0; i < candidates.size(); ++i) bindings[placeholder::candidate(i)] = candidates[i];
  auto prompt = builder_.build(TemplateKind::best_of_n, bindings);
  auto ctx = context(Role::critic, CallPurpose::best_of_n, t);

  std::optional<std::size_t> choice;
  for (int attempt = 0; attempt <= strategy_.parse_retries && !choice; ++attempt) {
    std::string raw;
    try {
      raw = call(*endpoints_.critic, prompt, ctx, sink).response_text;
    } catch (const Error& e) {
      throw CriticUnavailable(fmt::format("best-of-N selection at t={}: {}", t, e.what()));
    }
    choice = parse_choice(raw, candidates.size());
  }
  if (fallback) *fallback = !choice.has_value();
  std::size_t idx = choice.value_or(0);
  return {candidates[idx], idx};
}

TopicSummary RefineSession::extract_topics(std::vector<ChatExchange>& sink) const {
  TopicSummary out;
  const auto& user = std::get<std::vector<std::string>>(base_.at(std::string(placeholder::kUserSamples)));
  const auto& neighbors = std::get<std::vector<std::string>>(base_.at(std::string(placeholder::kNeighborSamples)));

  auto ask = [&](TemplateKind kind, CallPurpose purpose, auto parse) {
    auto prompt = builder_.build(kind, base_);
    auto ctx = context(Role::topic_extractor, purpose, 0);
    std::string raw;
    for (int attempt = 0; attempt <= strategy_.parse_retries; ++attempt) {
      raw = call(topic_client(), prompt, ctx, sink).response_text;
      if (auto parsed = parse(raw)) return std::make_pair(std::move(parsed), raw);
    }
    return std::make_pair(decltype(parse(raw)){}, raw);
  };

  if (!user.empty()) {
    out.style_available = true;
    auto [style, raw] = ask(TemplateKind::style_extraction, CallPurpose::style_extraction, parse_style);
    if (style) {
      out.style = *style;
    } else {
      out.style_degraded = true;
      out.style = {raw, raw, raw};
    }
  }
  if (!neighbors.empty()) {
    out.content_available = true;
    auto [aspects, raw] = ask(TemplateKind::content_extraction, CallPurpose::content_extraction, parse_aspects);
    if (aspects) {
      out.content_aspects = std::move(*aspects);
    } else {
      out.content_degraded = true;
      out.content_aspects = {{"aspects", raw}};
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pipeline

RunTrace run_pipeline(const PromptBuilder& builder, const QuerySpec& query,
                      const RetrievedProfile& profile, const Strategy& strategy,
                      const Endpoints& endpoints) {
  RunTrace trace;
  trace.query_id = query.query_id;
  trace.user_id = query.user_id;
  trace.strategy = strategy;
  trace.retrieved = profile;

  std::vector<ChatExchange> sink;
  std::string winner;
  try {
    strategy.validate();
    RefineSession session(builder, query, profile, endpoints, strategy);
    trace.query_text = session.query_text();

    IterationTrace first;
    first.t = 0;
    if (strategy.variant == StrategyVariant::topic_extraction) trace.topics = session.extract_topics(sink);
    const TopicSummary* topics = trace.topics ? &*trace.topics : nullptr;
    first.draft = session.generate_initial(sink);
    first.feedback = session.critique(first.draft, 0, topics, sink);
    first.exchanges = std::exchange(sink, {});
    winner = first.draft;
    FeedbackReport feedback = *first.feedback;
    trace.iterations.push_back(std::move(first));

    for (int t = 1; t <= strategy.T; ++t) {
      if (strategy.early_stop && feedback.all_done()) {
        trace.stopped_early = true;
        break;
      }
      IterationTrace it;
      it.t = t;
      switch (strategy.variant) {
        case StrategyVariant::vanilla:
        case StrategyVariant::topic_extraction:
          it.new_draft = session.refine(winner, feedback, t, sink);
          it.draft = *it.new_draft;
          break;
        case StrategyVariant::knockout: {
          it.new_draft = session.refine(winner, feedback, t, sink);
          auto [w, d] = session.knockout_select(winner, *it.new_draft, t, sink);
          it.draft = std::move(w);
          it.knockout = d;
          break;
        }
        case StrategyVariant::knockout_best_of_n: {
          it.samples = session.refine_samples(winner, feedback, t, strategy.n, sink);
          auto [chosen, idx] = session.best_of_n_select(it.samples, t, &it.best_of_n_fallback, sink);
          it.best_of_n_choice = idx;
          it.new_draft = std::move(chosen);
          auto [w, d] = session.knockout_select(winner, *it.new_draft, t, sink);
          it.draft = std::move(w);
          it.knockout = d;
          break;
        }
      }
      it.feedback = session.critique(it.draft, t, topics, sink);
      it.exchanges = std::exchange(sink, {});
      winner = it.draft;
      feedback = *it.feedback;
      trace.iterations.push_back(std::move(it));
    }
    trace.final_draft = winner;
  } catch (const std::exception& e) {
    trace.status = RunStatus::aborted;
    trace.abort_reason = e.what();
    trace.partial_exchanges = std::move(sink);
    trace.final_draft = winner;
  }
  trace.usage_by_role = trace.recompute_usage();
  return trace;
}

}  // namespace draftwise
