#include <gtest/gtest.h>

#include <cstdlib>

#include "fairmarket/llm_client.hpp"
#include "fairmarket/trainer.hpp"
#include "mock_chat_server.hpp"
#include "support.hpp"

using namespace fairmarket;
using fmtest::MockChatServer;
using fmtest::MockReply;

namespace {

CriticConfig llm_config(const std::string& url) {
  CriticConfig c;
  c.backend = CriticBackend::Llm;
  c.endpoint_url = url;
  c.model_name = "judge-small";
  c.api_key_env_var = "FAIRMARKET_TEST_KEY";
  c.request_timeout = 2.0;
  c.max_retries = 2;
  return c;
}

EpisodeLedger some_ledger(const EnvConfig& cfg) {
  std::mt19937_64 rng(3);
  return finalize_episode(fmtest::random_round(cfg, rng), cfg);
}

}  // namespace

TEST(Endpoint, SplitsBaseAndPath) {
  EXPECT_EQ(split_endpoint("http://h:8080/v1/chat/completions").base, "http://h:8080");
  EXPECT_EQ(split_endpoint("http://h:8080/v1/chat/completions").path, "/v1/chat/completions");
  EXPECT_EQ(split_endpoint("https://h").path, "/");
  EXPECT_THROW(split_endpoint("h:80/x"), ConfigError);
}

TEST(Endpoint, AssistantContentFallsBackToBody) {
  EXPECT_EQ(assistant_content(R"({"choices":[{"message":{"content":"hi"}}]})"), "hi");
  EXPECT_EQ(assistant_content(R"({"ftb":[1],"fbs":1})"), R"({"ftb":[1],"fbs":1})");
  EXPECT_EQ(assistant_content("plain"), "plain");
}

TEST(LlmCritic, ValidReplyIsScoredWithOneRequest) {
  setenv("FAIRMARKET_TEST_KEY", "sk-test", 1);
  MockChatServer server([](long, const nlohmann::json&) { return MockReply{200, R"({"ftb": [0.7], "fbs": 0.4})"}; });
  const EnvConfig env;
  const auto ledger = some_ledger(env);
  LlmCritic critic(llm_config(server.url()));
  const auto v = critic.score(ledger, env);
  ASSERT_TRUE(v.scored());
  EXPECT_EQ(v.scores().ftb, std::vector<double>{0.7});
  EXPECT_EQ(server.requests(), 1);
  const auto body = server.bodies().at(0);
  EXPECT_EQ(body["model"], "judge-small");
  EXPECT_EQ(body["temperature"], 0.0);
  EXPECT_EQ(body["messages"][0]["role"], "user");
  EXPECT_EQ(body["messages"][0]["content"], serialize_prompt(ledger, env));
  EXPECT_EQ(server.auth_headers().at(0), "Bearer sk-test");
  unsetenv("FAIRMARKET_TEST_KEY");
}

TEST(LlmCritic, ProseReplyIsMalformedWithoutRetry) {
  MockChatServer server([](long, const nlohmann::json&) { return MockReply{200, "Both sellers behaved fairly."}; });
  const EnvConfig env;
  LlmCritic critic(llm_config(server.url()));
  const auto v = critic.score(some_ledger(env), env);
  ASSERT_FALSE(v.scored());
  EXPECT_EQ(v.invalid().reason, InvalidReason::MalformedJson);
  EXPECT_EQ(server.requests(), 1);
  EXPECT_TRUE(server.auth_headers().at(0).empty());
}

TEST(LlmCritic, ServerErrorsAreRetried) {
  MockChatServer server([](long i, const nlohmann::json&) {
    return i < 2 ? MockReply{503, "busy"} : MockReply{200, R"({"ftb":[0.1],"fbs":0.2})"};
  });
  const EnvConfig env;
  LlmCritic critic(llm_config(server.url()));
  EXPECT_TRUE(critic.score(some_ledger(env), env).scored());
  EXPECT_EQ(server.requests(), 3);
}

TEST(LlmCritic, UnreachableEndpointMakesThreeAttempts) {
  const EnvConfig env;
  auto cfg = llm_config("http://127.0.0.1:" + std::to_string(fmtest::closed_port()) + "/v1/chat/completions");
  LlmCritic critic(cfg);
  const auto v = critic.score(some_ledger(env), env);
  ASSERT_FALSE(v.scored());
  EXPECT_EQ(v.invalid().reason, InvalidReason::Transport);
  EXPECT_EQ(critic.attempts(), 3);
}

TEST(LlmCritic, SlowServerTimesOut) {
  MockChatServer server([](long, const nlohmann::json&) {
    return MockReply{200, R"({"ftb":[0.1],"fbs":0.2})", std::chrono::milliseconds(1500)};
  });
  const EnvConfig env;
  auto cfg = llm_config(server.url());
  cfg.request_timeout = 0.3;
  cfg.max_retries = 1;
  LlmCritic critic(cfg);
  const auto v = critic.score(some_ledger(env), env);
  ASSERT_FALSE(v.scored());
  EXPECT_EQ(v.invalid().reason, InvalidReason::Timeout);
  EXPECT_EQ(critic.attempts(), 2);
}

TEST(LlmCritic, ConfigValidation) {
  CriticConfig c;
  c.backend = CriticBackend::Llm;
  EXPECT_THROW(LlmCritic{c}, ConfigError);
  c = llm_config("http://127.0.0.1:1/x");
  c.max_retries = -1;
  EXPECT_THROW(LlmCritic{c}, ConfigError);
  EXPECT_THROW(LlmCritic{llm_config("https://127.0.0.1:1/x")}, ConfigError);
}

TEST(LlmCritic, TrainingMakesOneRequestPerEpisode) {
  MockChatServer server([](long i, const nlohmann::json&) {
    return i % 5 == 4 ? MockReply{200, R"({"ftb":[0.5,0.5],"fbs":0.5})"} : MockReply{200, R"({"ftb":[0.5],"fbs":0.5})"};
  });
  TrainingConfig cfg;
  cfg.total_episodes = 150;
  cfg.kpi_window = 150;
  cfg.network.hidden = {8, 8};
  cfg.ppo.batch_episodes = 32;
  cfg.threads = 4;
  cfg.critic = llm_config(server.url());
  LlmCritic critic(cfg.critic);
  const auto rep = run_training(cfg, critic);
  EXPECT_EQ(server.requests(), 150);
  EXPECT_EQ(rep.discarded, 30);
  for (const auto& e : rep.episodes)
    if (e.invalid) EXPECT_EQ(e.invalid->reason, InvalidReason::WrongFtbCount);
}
