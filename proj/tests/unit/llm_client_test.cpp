#include <gtest/gtest.h>

#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "draftwise/errors.hpp"
#include "draftwise/llm_client.hpp"
#include "draftwise/mock_backend.hpp"
#include "support.hpp"

using namespace draftwise;
using testing_support::fast_endpoint;
using testing_support::ScriptedTransport;

namespace {

PromptBundle prompt(std::string text) {
  PromptBundle p;
  p.text = std::move(text);
  return p;
}

CallContext ctx(Role role = Role::generator) {
  CallContext c;
  c.role = role;
  c.query_id = "q1";
  return c;
}

}  // namespace

TEST(EndpointConfig, RoleDefaults) {
  EXPECT_DOUBLE_EQ(EndpointConfig::defaults_for(Role::generator).temperature, 0.6);
  EXPECT_DOUBLE_EQ(EndpointConfig::defaults_for(Role::critic).temperature, 0.6);
  EXPECT_DOUBLE_EQ(EndpointConfig::defaults_for(Role::judge).temperature, 1.0);
  EXPECT_EQ(EndpointConfig::defaults_for(Role::critic).max_completion_tokens, 512);
}

TEST(EndpointConfig, Validation) {
  auto c = fast_endpoint("ftp://x");
  EXPECT_THROW(c.validate(), ConfigError);
  c.base_url = "mock:";
  EXPECT_THROW(c.validate(), ConfigError);
  c.base_url = "mock:script.json";
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.mock_script_path(), "script.json");
  c.max_completion_tokens = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(EndpointConfig, JsonKeepsUnsetFields) {
  auto c = EndpointConfig::defaults_for(Role::judge);
  from_json(Json{{"base_url", "http://h"}, {"model_name", "m"}}, c);
  EXPECT_DOUBLE_EQ(c.temperature, 1.0);
  EXPECT_EQ(c.model_name, "m");
  EndpointConfig back;
  from_json(Json(c), back);
  EXPECT_EQ(back.base_url, "http://h");
  EXPECT_EQ(back.max_retries, c.max_retries);
}

TEST(LlmClient, MockReplayTextAndUsage) {
  MockScript s;
  s.replay.push_back({"scripted reply", 120, 30});
  auto backend = std::make_shared<MockBackend>(s);
  LlmClient client(fast_endpoint("mock:x"), backend);
  auto e = client.complete(prompt("hello"), ctx());
  EXPECT_EQ(e.response_text, "scripted reply");
  EXPECT_EQ(e.usage.prompt_tokens, 120);
  EXPECT_EQ(e.usage.completion_tokens, 30);
  EXPECT_FALSE(e.usage.approximate);
  EXPECT_EQ(e.attempt_count, 1);
  EXPECT_EQ(e.request_text, "hello");
}

TEST(LlmClient, RequestWireShape) {
  auto t = std::make_shared<ScriptedTransport>();
  t->push_chat("ok");
  auto cfg = fast_endpoint();
  cfg.temperature = 0.6;
  cfg.max_completion_tokens = 512;
  LlmClient(cfg, t).complete(prompt("the prompt"), ctx());
  ASSERT_EQ(t->requests.size(), 1u);
  const auto& body = t->requests[0].body;
  EXPECT_EQ(t->requests[0].path, "/chat/completions");
  EXPECT_EQ(body["model"], "test-model");
  EXPECT_EQ(body["messages"].size(), 1u);
  EXPECT_EQ(body["messages"][0]["role"], "user");
  EXPECT_EQ(body["messages"][0]["content"], "the prompt");
  EXPECT_DOUBLE_EQ(body["temperature"].get<double>(), 0.6);
  EXPECT_EQ(body["max_tokens"], 512);
  EXPECT_FALSE(body.contains("n"));
}

TEST(LlmClient, RetriesServerErrorsThenSucceeds) {
  auto t = std::make_shared<ScriptedTransport>();
  t->push(500, "{}");
  t->push(500, "{}");
  t->push_chat("third time", 7, 3);
  auto e = LlmClient(fast_endpoint(), t).complete(prompt("p"), ctx());
  EXPECT_EQ(e.attempt_count, 3);
  EXPECT_EQ(e.response_text, "third time");
  EXPECT_EQ(e.usage.prompt_tokens, 7);
  EXPECT_EQ(e.usage.completion_tokens, 3);
}

TEST(LlmClient, ExhaustedRetriesCarryLastStatus) {
  auto t = std::make_shared<ScriptedTransport>();
  t->push(503, "{}");
  t->push(429, "{}");
  t->push(502, "{}");
  try {
    LlmClient(fast_endpoint(), t).complete(prompt("p"), ctx());
    FAIL();
  } catch (const TransportError& e) {
    EXPECT_EQ(e.last_status(), 502);
  }
  EXPECT_EQ(t->requests.size(), 3u);
}

TEST(LlmClient, ConnectionFailureHasStatusZero) {
  auto t = std::make_shared<ScriptedTransport>();
  for (int i = 0; i < 3; ++i) t->push_fail("Connection refused");
  try {
    LlmClient(fast_endpoint(), t).complete(prompt("p"), ctx());
    FAIL();
  } catch (const TransportError& e) {
    EXPECT_EQ(e.last_status(), 0);
    EXPECT_NE(std::string(e.what()).find("Connection refused"), std::string::npos);
  }
}

TEST(LlmClient, ClientErrorIsNotRetriedAndKeepsBody) {
  auto t = std::make_shared<ScriptedTransport>();
  t->push(400, R"({"error":"bad model"})");
  try {
    LlmClient(fast_endpoint(), t).complete(prompt("p"), ctx());
    FAIL();
  } catch (const ProviderError& e) {
    EXPECT_EQ(e.status(), 400);
    EXPECT_EQ(e.body(), R"({"error":"bad model"})");
  }
  EXPECT_EQ(t->requests.size(), 1u);
}

TEST(LlmClient, UnusableSuccessBodyIsProviderError) {
  auto t = std::make_shared<ScriptedTransport>();
  t->push(200, "not json");
  EXPECT_THROW(LlmClient(fast_endpoint(), t).complete(prompt("p"), ctx()), ProviderError);
  t->push(200, R"({"choices":[]})");
  EXPECT_THROW(LlmClient(fast_endpoint(), t).complete(prompt("p"), ctx()), ProviderError);
}

TEST(LlmClient, MissingUsageIsApproximated) {
  auto t = std::make_shared<ScriptedTransport>();
  t->push(200, R"({"choices":[{"message":{"content":"three word reply"}}]})");
  auto e = LlmClient(fast_endpoint(), t).complete(prompt("a four word prompt"), ctx());
  EXPECT_TRUE(e.usage.approximate);
  EXPECT_EQ(e.usage.prompt_tokens, 4);
  EXPECT_EQ(e.usage.completion_tokens, 3);
}

TEST(LlmClient, SampleNInScriptOrder) {
  MockScript s;
  s.replay = {{"one", 1, 1}, {"two", 2, 2}, {"three", 3, 3}};
  LlmClient client(fast_endpoint("mock:x"), std::make_shared<MockBackend>(s));
  auto out = client.sample_n(prompt("p"), 3, ctx());
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[0].response_text, "one");
  EXPECT_EQ(out[2].response_text, "three");
  EXPECT_EQ(out[1].usage.total(), 4);
}

TEST(LlmClient, SampleOneEqualsComplete) {
  MockScript s;
  s.replay = {{"same", 5, 5, 200, false, true}};
  LlmClient client(fast_endpoint("mock:x"), std::make_shared<MockBackend>(s));
  auto single = client.sample_n(prompt("p"), 1, ctx());
  auto direct = client.complete(prompt("p"), ctx());
  ASSERT_EQ(single.size(), 1u);
  EXPECT_EQ(single[0].response_text, direct.response_text);
  EXPECT_EQ(single[0].usage, direct.usage);
}

TEST(LlmClient, SampleNReportsFailedIndex) {
  auto t = std::make_shared<ScriptedTransport>();
  t->push_chat("first", 4, 2);
  for (int i = 0; i < 3; ++i) t->push(500, "{}");
  t->push_chat("third", 4, 2);
  try {
    LlmClient(fast_endpoint(), t).sample_n(prompt("p"), 3, ctx());
    FAIL();
  } catch (const SampleError& e) {
    EXPECT_EQ(e.failed_indices(), std::vector<int>{2});
    ASSERT_EQ(e.completed().size(), 2u);
    EXPECT_EQ(e.completed()[1].response_text, "third");
  }
}

TEST(LlmClient, BatchedSamplingUsesNParameter) {
  MockScript s;
  s.replay = {{"a", 10, 1}, {"b", 0, 2}};
  auto cfg = fast_endpoint("mock:x");
  cfg.batched_sampling = true;
  LlmClient client(cfg, std::make_shared<MockBackend>(s));
  auto out = client.sample_n(prompt("p"), 2, ctx());
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[1].response_text, "b");
  EXPECT_EQ(out[0].usage.total() + out[1].usage.total(), 13);
}

TEST(LlmClient, ConcurrentUseKeepsAccounting) {
  MockScript s;
  s.replay = {{"x", 3, 2, 200, false, true}};
  LlmClient client(fast_endpoint("mock:x"), std::make_shared<MockBackend>(s));
  std::atomic<long> total{0};
  std::vector<std::jthread> threads;
  for (int w = 0; w < 8; ++w)
    threads.emplace_back([&] {
      for (int i = 0; i < 50; ++i) total += client.complete(prompt("p"), ctx()).usage.total();
    });
  threads.clear();
  EXPECT_EQ(total.load(), 8 * 50 * 5);
}

TEST(JsonBlock, FencedBareAndMissing) {
  auto a = extract_json_block("text\n```json\n{\"answer\": \"A\"}\n```\nmore");
  ASSERT_TRUE(a.ok());
  EXPECT_EQ(a.value["answer"], "A");
  auto b = extract_json_block("{\"score\": 4}");
  ASSERT_TRUE(b.ok());
  EXPECT_EQ(b.value["score"], 4);
  EXPECT_EQ(extract_json_block("no json here").status, JsonBlock::Status::no_json_found);
  auto bad = extract_json_block("```json\n{\"a\": }\n```");
  EXPECT_EQ(bad.status, JsonBlock::Status::malformed_json);
  EXPECT_GT(bad.offset, 0u);
  auto quotes = extract_json_block("'''json\n{\"x\": 1}\n'''");
  ASSERT_TRUE(quotes.ok());
  EXPECT_EQ(quotes.value["x"], 1);
}

TEST(JsonBlock, LastParsableBlock) {
  auto r = extract_last_json_block("```json\n{\"score\": 1}\n```\nthen\n```json\n{\"score\": 3}\n```");
  ASSERT_TRUE(r.ok());
  EXPECT_EQ(r.value["score"], 3);
}

// Arbitrary bytes never throw, and parsing the dump of a result is stable.
TEST(JsonBlockProperty, NeverThrowsAndIdempotent) {
  std::mt19937_64 rng(3);
  const std::string alphabet = "{}[]\":,` \njsonabc0123'\\\xc3\xa9\xff";
  for (int i = 0; i < 3000; ++i) {
    std::string s;
    std::size_t len = rng() % 40;
    for (std::size_t k = 0; k < len; ++k) s += alphabet[rng() % alphabet.size()];
    JsonBlock r;
    ASSERT_NO_THROW(r = extract_json_block(s));
    ASSERT_NO_THROW(extract_last_json_block(s));
    JsonBlock again = extract_json_block(s);
    ASSERT_EQ(r.status, again.status);
    if (r.ok()) {
      auto round = extract_json_block(r.value.dump());
      ASSERT_TRUE(round.ok());
      ASSERT_EQ(round.value, r.value);
    }
  }
}

TEST(HttpTransport, TalksToLocalServer) {
  httplib::Server server;
  std::string seen_auth, seen_path;
  Json seen_body;
  int calls = 0;
  server.Post(R"(/v1/chat/completions)", [&](const httplib::Request& req, httplib::Response& res) {
    ++calls;
    seen_auth = req.get_header_value("Authorization");
    seen_path = req.path;
    seen_body = Json::parse(req.body);
    if (calls == 1) {
      res.status = 503;
      return;
    }
    res.set_content(R"({"choices":[{"message":{"content":"served"}}],"usage":{"prompt_tokens":11,"completion_tokens":2}})",
                    "application/json");
  });
  int port = server.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::jthread runner([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  ::setenv("DRAFTWISE_TEST_KEY", "sk-test", 1);
  auto cfg = fast_endpoint("http://127.0.0.1:" + std::to_string(port) + "/v1/");
  cfg.api_key_env = "DRAFTWISE_TEST_KEY";
  LlmClient client(cfg, std::make_shared<HttpTransport>(cfg));
  auto e = client.complete(prompt("over the wire"), ctx());
  server.stop();

  EXPECT_EQ(e.response_text, "served");
  EXPECT_EQ(e.attempt_count, 2);
  EXPECT_EQ(e.usage.prompt_tokens, 11);
  EXPECT_EQ(seen_path, "/v1/chat/completions");
  EXPECT_EQ(seen_auth, "Bearer sk-test");
  EXPECT_EQ(seen_body["messages"][0]["content"], "over the wire");
}

TEST(HttpTransport, UnreachableHostIsTransportError) {
  auto cfg = fast_endpoint("http://127.0.0.1:1");
  cfg.max_retries = 1;
  cfg.request_timeout = std::chrono::milliseconds(1000);
  LlmClient client(cfg, std::make_shared<HttpTransport>(cfg));
  try {
    client.complete(prompt("p"), ctx());
    FAIL();
  } catch (const TransportError& e) {
    EXPECT_EQ(e.last_status(), 0);
  }
}
