#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "draftwise/domain.hpp"
#include "draftwise/errors.hpp"
#include "draftwise/prompt_builder.hpp"

namespace draftwise {

enum class Role { generator, critic, topic_extractor, judge };

std::string_view to_string(Role role);
Role parse_role(std::string_view name);

/// What a call is for. Carried alongside the request so the mock backend can
/// answer without parsing prompts; the HTTP transport ignores it.
enum class CallPurpose {
  initial_draft,
  refinement,
  feedback,
  knockout,
  best_of_n,
  style_extraction,
  content_extraction,
  judge,
  embedding,
};

std::string_view to_string(CallPurpose purpose);
CallPurpose parse_call_purpose(std::string_view name);

struct CallContext {
  Role role = Role::generator;
  CallPurpose purpose = CallPurpose::initial_draft;
  std::string query_id;
  /// Iteration the call belongs to (the t of the draft being produced or judged).
  int iteration = 0;
  int sample_index = 0;
};

struct EndpointConfig {
  /// "http(s)://host[:port][/prefix]" (the /chat/completions path is appended)
  /// or "mock:<script-path>".
  std::string base_url;
  std::string model_name;
  /// Name of the environment variable holding the API key, if any.
  std::string api_key_env;
  double temperature = 0.6;
  int max_completion_tokens = 512;
  std::chrono::milliseconds request_timeout{120000};
  int max_retries = 3;
  std::chrono::milliseconds retry_backoff{500};
  /// Upper bound on concurrent requests through one client.
  int max_in_flight = 8;
  /// Best-of-N as one request with the `n` parameter instead of n requests.
  bool batched_sampling = false;

  /// generator/critic/topic_extractor: temperature 0.6; judge: 1.0. 512 tokens.
  static EndpointConfig defaults_for(Role role);

  bool is_mock() const { return base_url.starts_with("mock:"); }
  std::string mock_script_path() const { return base_url.substr(5); }
  std::optional<std::string> api_key() const;
  void validate() const;
};

void to_json(Json& j, const EndpointConfig& c);
/// Missing keys keep the values already in `c`.
void from_json(const Json& j, EndpointConfig& c);

struct TokenUsage {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  /// Counted locally because the provider sent no usage block.
  bool approximate = false;

  std::int64_t total() const { return prompt_tokens + completion_tokens; }
  TokenUsage& operator+=(const TokenUsage& o) {
    prompt_tokens += o.prompt_tokens;
    completion_tokens += o.completion_tokens;
    approximate = approximate || o.approximate;
    return *this;
  }
  bool operator==(const TokenUsage&) const = default;
};

struct ChatExchange {
  Role role = Role::generator;
  CallPurpose purpose = CallPurpose::initial_draft;
  std::string request_text;
  std::string response_text;
  TokenUsage usage;
  std::chrono::milliseconds latency{0};
  int attempt_count = 0;
};

void to_json(Json& j, const ChatExchange& e);
void from_json(const Json& j, ChatExchange& e);

struct WireResponse {
  /// 0 when the request never produced an HTTP response.
  int status = 0;
  std::string body;
  std::chrono::milliseconds latency{0};
  std::string transport_error;
};

/// Posts a JSON body to `path` relative to the endpoint base URL.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual WireResponse post(std::string_view path, const Json& body, const CallContext& ctx) = 0;
};

/// cpp-httplib backed transport for OpenAI-compatible servers.
class HttpTransport final : public Transport {
 public:
  explicit HttpTransport(EndpointConfig config);
  WireResponse post(std::string_view path, const Json& body, const CallContext& ctx) override;

 private:
  EndpointConfig config_;
  std::string scheme_host_port_;
  std::string path_prefix_;
  std::optional<std::string> api_key_;
};

/// Raised by sample_n when some samples failed. Successful exchanges are kept
/// (they were billed) and failed indices are 1-based.
class SampleError : public Error {
 public:
  SampleError(std::vector<int> failed, std::vector<ChatExchange> completed, const std::string& what)
      : Error(what), failed_(std::move(failed)), completed_(std::move(completed)) {}
  const std::vector<int>& failed_indices() const noexcept { return failed_; }
  const std::vector<ChatExchange>& completed() const noexcept { return completed_; }

 private:
  std::vector<int> failed_;
  std::vector<ChatExchange> completed_;
};

/// Chat-completions client: single user message per call, retries with
/// exponential backoff on transport failures, 408, 429 and 5xx. Safe to share
/// between threads; in-flight requests are capped at max_in_flight.
class LlmClient {
 public:
  LlmClient(EndpointConfig config, std::shared_ptr<Transport> transport);

  /// Throws TransportError once retries are exhausted, ProviderError on other
  /// non-2xx responses or unusable 2xx bodies.
  ChatExchange complete(const PromptBundle& prompt, const CallContext& ctx) const;

  /// n completions in sampling order; ctx.sample_index is set per sample.
  std::vector<ChatExchange> sample_n(const PromptBundle& prompt, int n, const CallContext& ctx) const;

  const EndpointConfig& config() const noexcept { return config_; }
  Transport& transport() const noexcept { return *transport_; }

 private:
  struct Limiter;
  std::vector<ChatExchange> request(const PromptBundle& prompt, int n, const CallContext& ctx) const;

  EndpointConfig config_;
  std::shared_ptr<Transport> transport_;
  std::shared_ptr<Limiter> limiter_;
};

struct JsonBlock {
  enum class Status { ok, no_json_found, malformed_json };
  Status status = Status::no_json_found;
  Json value;
  /// Byte offset of the parse error within the input, for malformed_json.
  std::size_t offset = 0;

  bool ok() const { return status == Status::ok; }
};

/// First fenced ```json block (``` or ''' fences, optional language tag);
/// with no fence, the whole text. Never throws.
JsonBlock extract_json_block(std::string_view text);

/// Last fenced block that parses; falls back to extract_json_block rules.
JsonBlock extract_last_json_block(std::string_view text);

}  // namespace draftwise
