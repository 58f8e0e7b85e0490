#include "draftwise/llm_client.hpp"

#include <cmath>
#include <cstdlib>
#include <regex>
#include <semaphore>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>

#include "draftwise/text.hpp"

namespace draftwise {

std::string_view to_string(Role role) {
  switch (role) {
    case Role::generator:
      return "generator";
    case Role::critic:
      return "critic";
    case Role::topic_extractor:
      return "topic_extractor";
    case Role::judge:
      return "judge";
  }
  return "generator";
}

Role parse_role(std::string_view name) {
  for (auto r : {Role::generator, Role::critic, Role::topic_extractor, Role::judge})
    if (to_string(r) == name) return r;
  throw ConfigError(fmt::format("unknown role '{}'", name));
}

std::string_view to_string(CallPurpose purpose) {
  switch (purpose) {
    case CallPurpose::initial_draft:
      return "initial_draft";
    case CallPurpose::refinement:
      return "refinement";
    case CallPurpose::feedback:
      return "feedback";
    case CallPurpose::knockout:
      return "knockout";
    case CallPurpose::best_of_n:
      return "best_of_n";
    case CallPurpose::style_extraction:
      return "style_extraction";
    case CallPurpose::content_extraction:
      return "content_extraction";
    case CallPurpose::judge:
      return "judge";
    case CallPurpose::embedding:
      return "embedding";
  }
  return "initial_draft";
}

CallPurpose parse_call_purpose(std::string_view name) {
  for (auto p : {CallPurpose::initial_draft, CallPurpose::refinement, CallPurpose::feedback,
                 CallPurpose::knockout, CallPurpose::best_of_n, CallPurpose::style_extraction,
                 CallPurpose::content_extraction, CallPurpose::judge, CallPurpose::embedding})
    if (to_string(p) == name) return p;
  throw ConfigError(fmt::format("unknown call purpose '{}'", name));
}

// ---------------------------------------------------------------------------
// EndpointConfig

EndpointConfig EndpointConfig::defaults_for(Role role) {
  EndpointConfig c;
  c.temperature = role == Role::judge ? 1.0 : 0.6;
  c.max_completion_tokens = 512;
  return c;
}

std::optional<std::string> EndpointConfig::api_key() const {
  if (api_key_env.empty()) return std::nullopt;
  const char* v = std::getenv(api_key_env.c_str());
  if (!v || !*v) return std::nullopt;
  return std::string(v);
}

void EndpointConfig::validate() const {
  if (base_url.empty()) throw ConfigError("endpoint base_url is empty");
  if (is_mock()) {
    if (mock_script_path().empty()) throw ConfigError("mock endpoint needs a script path");
  } else if (!base_url.starts_with("http://") && !base_url.starts_with("https://")) {
    throw ConfigError("endpoint base_url must be http(s):// or mock:<script>, got " + base_url);
  }
  if (max_completion_tokens <= 0) throw ConfigError("max_completion_tokens must be positive");
  if (temperature < 0.0) throw ConfigError("temperature must be non-negative");
  if (max_retries < 0) throw ConfigError("max_retries must be non-negative");
  if (max_in_flight <= 0) throw ConfigError("max_in_flight must be positive");
}

void to_json(Json& j, const EndpointConfig& c) {
  j = Json{{"base_url", c.base_url},
           {"model_name", c.model_name},
           {"api_key_env", c.api_key_env},
           {"temperature", c.temperature},
           {"max_completion_tokens", c.max_completion_tokens},
           {"request_timeout_ms", c.request_timeout.count()},
           {"max_retries", c.max_retries},
           {"retry_backoff_ms", c.retry_backoff.count()},
           {"max_in_flight", c.max_in_flight},
           {"batched_sampling", c.batched_sampling}};
}

void from_json(const Json& j, EndpointConfig& c) {
  c.base_url = j.value("base_url", c.base_url);
  c.model_name = j.value("model_name", c.model_name);
  c.api_key_env = j.value("api_key_env", c.api_key_env);
  c.temperature = j.value("temperature", c.temperature);
  c.max_completion_tokens = j.value("max_completion_tokens", c.max_completion_tokens);
  c.request_timeout = std::chrono::milliseconds(j.value("request_timeout_ms", c.request_timeout.count()));
  c.max_retries = j.value("max_retries", c.max_retries);
  c.retry_backoff = std::chrono::milliseconds(j.value("retry_backoff_ms", c.retry_backoff.count()));
  c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
  c.batched_sampling = j.value("batched_sampling", c.batched_sampling);
}

void to_json(Json& j, const ChatExchange& e) {
  j = Json{{"role", to_string(e.role)},
           {"purpose", to_string(e.purpose)},
           {"request", e.request_text},
           {"response", e.response_text},
           {"prompt_tokens", e.usage.prompt_tokens},
           {"completion_tokens", e.usage.completion_tokens},
           {"approximate_usage", e.usage.approximate},
           {"latency_ms", e.latency.count()},
           {"attempts", e.attempt_count}};
}

void from_json(const Json& j, ChatExchange& e) {
  e.role = parse_role(j.at("role").get<std::string>());
  e.purpose = parse_call_purpose(j.at("purpose").get<std::string>());
  e.request_text = j.at("request").get<std::string>();
  e.response_text = j.at("response").get<std::string>();
  e.usage.prompt_tokens = j.at("prompt_tokens").get<std::int64_t>();
  e.usage.completion_tokens = j.at("completion_tokens").get<std::int64_t>();
  e.usage.approximate = j.value("approximate_usage", false);
  e.latency = std::chrono::milliseconds(j.value("latency_ms", std::int64_t{0}));
  e.attempt_count = j.value("attempts", 1);
}

// ---------------------------------------------------------------------------
// HttpTransport

HttpTransport::HttpTransport(EndpointConfig config) : config_(std::move(config)) {
  static const std::regex url(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(config_.base_url, m, url))
    throw ConfigError("cannot parse endpoint URL " + config_.base_url);
  scheme_host_port_ = m[1].str();
  path_prefix_ = m[2].matched ? m[2].str() : "";
  while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
  api_key_ = config_.api_key();
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
  if (scheme_host_port_.starts_with("https://"))
    throw ConfigError("this build has no TLS support; use an http:// endpoint");
#endif
}

WireResponse HttpTransport::post(std::string_view path, const Json& body, const CallContext&) {
  httplib::Client client(scheme_host_port_);
  auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.request_timeout).count();
  client.set_connection_timeout(static_cast<time_t>(std::max<std::int64_t>(1, secs)), 0);
  client.set_read_timeout(static_cast<time_t>(std::max<std::int64_t>(1, secs)), 0);
  client.set_write_timeout(static_cast<time_t>(std::max<std::int64_t>(1, secs)), 0);

  httplib::Headers headers;
  if (api_key_) headers.emplace("Authorization", "Bearer " + *api_key_);

  const auto start = std::chrono::steady_clock::now();
  auto res = client.Post(path_prefix_ + std::string(path), headers, body.dump(), "application/json");
  WireResponse out;
  out.latency = std::chrono::duration_cast<std::chrono::milliseconds>(
      std::chrono::steady_clock::now() - start);
  if (!res) {
    out.transport_error = httplib::to_string(res.error());
    return out;
  }
  out.status = res->status;
  out.body = res->body;
  return out;
}

// ---------------------------------------------------------------------------
// LlmClient

struct LlmClient::Limiter {
  explicit Limiter(int n) : slots(n) {}
  std::counting_semaphore<4096> slots;
};

namespace {

bool retryable(int status) { return status == 0 || status == 408 || status == 429 || status >= 500; }

class SlotGuard {
 public:
  explicit SlotGuard(std::counting_semaphore<4096>& s) : s_(s) { s_.acquire(); }
  ~SlotGuard() { s_.release(); }
  SlotGuard(const SlotGuard&) = delete;
  SlotGuard& operator=(const SlotGuard&) = delete;

 private:
  std::counting_semaphore<4096>& s_;
};

}  // namespace

LlmClient::LlmClient(EndpointConfig config, std::shared_ptr<Transport> transport)
    : config_(std::move(config)),
      transport_(std::move(transport)),
      limiter_(std::make_shared<Limiter>(std::clamp(config_.max_in_flight, 1, 4096))) {}

std::vector<ChatExchange> LlmClient::request(const PromptBundle& prompt, int n,
                                             const CallContext& ctx) const {
  Json body{{"model", config_.model_name},
            {"messages", Json::array({Json{{"role", "user"}, {"content", prompt.text}}})},
            {"temperature", config_.temperature},
            {"max_tokens", config_.max_completion_tokens}};
  if (n > 1) body["n"] = n;

  SlotGuard slot(limiter_->slots);
  std::chrono::milliseconds latency{0};
  WireResponse last;
  int attempts = 0;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0 && config_.retry_backoff.count() > 0)
      std::this_thread::sleep_for(config_.retry_backoff * (1LL << std::min(attempt - 1, 16)));
    ++attempts;
    last = transport_->post("/chat/completions", body, ctx);
    latency += last.latency;
    if (last.status >= 200 && last.status < 300) break;
    if (!retryable(last.status)) throw ProviderError(last.status, last.body);
  }
  if (last.status < 200 || last.status >= 300) {
    std::string why = last.status == 0 ? last.transport_error : "HTTP " + std::to_string(last.status);
    throw TransportError(last.status, fmt::format("{} request failed after {} attempts: {}",
                                                  to_string(ctx.role), attempts, why));
  }

  Json parsed = Json::parse(last.body, nullptr, false);
  if (parsed.is_discarded() || !parsed.contains("choices") || !parsed["choices"].is_array() ||
      parsed["choices"].size() < static_cast<std::size_t>(n))
    throw ProviderError(last.status, last.body);

  std::vector<ChatExchange> out;
  for (int i = 0; i < n; ++i) {
    const Json& choice = parsed["choices"][static_cast<std::size_t>(i)];
    const Json* content = nullptr;
    if (choice.contains("message") && choice["message"].contains("content"))
      content = &choice["message"]["content"];
    if (!content || !(content->is_string() || content->is_null()))
      throw ProviderError(last.status, last.body);
    ChatExchange e;
    e.role = ctx.role;
    e.purpose = ctx.purpose;
    e.request_text = prompt.text;
    e.response_text = content->is_string() ? content->get<std::string>() : "";
    e.attempt_count = attempts;
    e.latency = i == 0 ? latency : std::chrono::milliseconds{0};
    out.push_back(std::move(e));
  }

  // One usage block per request; it is booked on the first exchange.
  TokenUsage usage;
  const Json* u = parsed.contains("usage") && parsed["usage"].is_object() ? &parsed["usage"] : nullptr;
  if (u && u->contains("prompt_tokens") && u->contains("completion_tokens")) {
    usage.prompt_tokens = (*u)["prompt_tokens"].get<std::int64_t>();
    usage.completion_tokens = (*u)["completion_tokens"].get<std::int64_t>();
  } else {
    usage.approximate = true;
    usage.prompt_tokens = static_cast<std::int64_t>(text::whitespace_token_count(prompt.text));
    for (const auto& e : out)
      usage.completion_tokens += static_cast<std::int64_t>(text::whitespace_token_count(e.response_text));
  }
  out.front().usage = usage;
  for (std::size_t i = 1; i < out.size(); ++i) out[i].usage.approximate = usage.approximate;
  return out;
}

ChatExchange LlmClient::complete(const PromptBundle& prompt, const CallContext& ctx) const {
  return std::move(request(prompt, 1, ctx).front());
}

std::vector<ChatExchange> LlmClient::sample_n(const PromptBundle& prompt, int n,
                                              const CallContext& ctx) const {
  if (n < 1) throw std::invalid_argument("sample_n needs n >= 1");
  if (n > 1 && config_.batched_sampling) return request(prompt, n, ctx);

  std::vector<ChatExchange> done;
  std::vector<int> failed;
  std::string first_error;
  for (int i = 0; i < n; ++i) {
    CallContext c = ctx;
    c.sample_index = i;
    try {
      done.push_back(complete(prompt, c));
    } catch (const Error& e) {
      failed.push_back(i + 1);
      if (first_error.empty()) first_error = e.what();
    }
  }
  if (!failed.empty()) {
    std::vector<std::string> idx;
    for (int f : failed) idx.push_back(std::to_string(f));
    throw SampleError(failed, std::move(done),
                      fmt::format("samples {} of {} failed: {}", text::join(idx, ","), n, first_error));
  }
  return done;
}

// ---------------------------------------------------------------------------
// JSON extraction

namespace {

struct Fence {
  std::size_t content_begin;
  std::size_t content_end;
};

std::vector<Fence> find_fences(std::string_view t) {
  std::vector<Fence> out;
  std::size_t pos = 0;
  while (pos < t.size()) {
    std::size_t a = t.find("```", pos);
    std::size_t b = t.find("'''", pos);
    std::size_t open = std::min(a, b);
    if (open == std::string_view::npos) break;
    std::string_view marker = t.substr(open, 3);
    std::size_t begin = open + 3;
    // optional language tag such as "json"
    std::size_t tag_end = begin;
    while (tag_end < t.size() && std::isalpha(static_cast<unsigned char>(t[tag_end]))) ++tag_end;
    begin = tag_end;
    std::size_t close = t.find(marker, begin);
    if (close == std::string_view::npos) {
      out.push_back({begin, t.size()});
      break;
    }
    out.push_back({begin, close});
    pos = close + 3;
  }
  return out;
}

JsonBlock parse_region(std::string_view t, std::size_t begin, std::size_t end) {
  JsonBlock r;
  std::string_view region = t.substr(begin, end - begin);
  try {
    r.value = Json::parse(region);
    r.status = JsonBlock::Status::ok;
  } catch (const nlohmann::json::parse_error& e) {
    r.status = JsonBlock::Status::malformed_json;
    r.offset = begin + (e.byte > 0 ? e.byte - 1 : 0);
  } catch (const std::exception&) {
    r.status = JsonBlock::Status::malformed_json;
    r.offset = begin;
  }
  return r;
}

JsonBlock parse_unfenced(std::string_view t) {
  std::size_t first = t.find_first_of("{[");
  JsonBlock whole = parse_region(t, 0, t.size());
  if (whole.ok()) return whole;
  if (first == std::string_view::npos) return {};
  std::size_t last = t.find_last_of("}]");
  if (last == std::string_view::npos || last < first) {
    whole.status = JsonBlock::Status::malformed_json;
    return whole;
  }
  return parse_region(t, first, last + 1);
}

}  // namespace

JsonBlock extract_json_block(std::string_view text) {
  auto fences = find_fences(text);
  if (!fences.empty()) return parse_region(text, fences.front().content_begin, fences.front().content_end);
  return parse_unfenced(text);
}

JsonBlock extract_last_json_block(std::string_view text) {
  auto fences = find_fences(text);
  if (fences.empty()) {
    JsonBlock whole = parse_unfenced(text);
    if (whole.ok()) return whole;
    // Several bare objects in one reply: try the openings right to left
    // against the final closing brace.
    std::size_t last = text.find_last_of("}]");
    if (last == std::string_view::npos) return whole;
    std::size_t pos = last, tries = 0;
    while (tries++ < 64 && (pos = text.find_last_of("{[", pos)) != std::string_view::npos) {
      JsonBlock r = parse_region(text, pos, last + 1);
      if (r.ok()) return r;
      if (pos-- == 0) break;
    }
    return whole;
  }
  JsonBlock last_attempt;
  for (auto it = fences.rbegin(); it != fences.rend(); ++it) {
    JsonBlock r = parse_region(text, it->content_begin, it->content_end);
    if (r.ok()) return r;
    if (it == fences.rbegin()) last_attempt = r;
  }
  return last_attempt;
}

}  // namespace draftwise
