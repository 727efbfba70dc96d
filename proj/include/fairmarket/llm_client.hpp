#pragma once

// Chat-completion client for the remote fairness critic. Any service that
// accepts {model, messages, temperature} and answers with
// choices[0].message.content works.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <semaphore>
#include <string>

#include "fairmarket/critic.hpp"
#include "httplib.h"
#include "json.hpp"

namespace fairmarket {

struct EndpointParts {
  std::string base;  // scheme://host[:port]
  std::string path;
};

inline EndpointParts split_endpoint(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("critic.endpoint_url must include a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

/// Builds the JSON request body sent for one episode.
inline nlohmann::json chat_request_body(const std::string& prompt, const CriticConfig& cfg) {
  return {{"model", cfg.model_name},
          {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})},
          {"temperature", cfg.temperature}};
}

/// Pulls the assistant text out of a chat-completion response body. Falls back
/// to the raw body when it is not in that shape, so that a bare JSON answer is
/// still accepted.
inline std::string assistant_content(const std::string& body) {
  auto j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return body;
  if (j.contains("choices") && j["choices"].is_array() && !j["choices"].empty()) {
    const auto& c = j["choices"][0];
    if (c.contains("message") && c["message"].contains("content") && c["message"]["content"].is_string())
      return c["message"]["content"].get<std::string>();
    if (c.contains("text") && c["text"].is_string()) return c["text"].get<std::string>();
  }
  return body;
}

class LlmCritic final : public Critic {
 public:
  explicit LlmCritic(CriticConfig cfg)
      : cfg_((cfg.validate(), std::move(cfg))),
        endpoint_(split_endpoint(cfg_.endpoint_url)),
        in_flight_(std::min(cfg_.max_in_flight, 1024)) {
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
    if (endpoint_.base.rfind("https://", 0) == 0)
      throw ConfigError("critic.endpoint_url: https needs a build with OpenSSL support");
#endif
    if (!cfg_.api_key_env_var.empty()) {
      if (const char* key = std::getenv(cfg_.api_key_env_var.c_str())) api_key_ = key;
    }
  }

  CriticVerdict score(const EpisodeLedger& ledger, const EnvConfig& env) override {
    const std::string body = chat_request_body(serialize_prompt(ledger, env), cfg_).dump();
    in_flight_.acquire();
    struct Release {
      std::counting_semaphore<1024>& s;
      ~Release() { s.release(); }
    } release{in_flight_};

    const auto timeout = std::chrono::duration<double>(cfg_.request_timeout);
    InvalidReason last = InvalidReason::Transport;
    std::string detail;
    for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
      attempts_.fetch_add(1, std::memory_order_relaxed);
      // One client per call keeps the critic shareable across threads.
      httplib::Client cli(endpoint_.base);
      cli.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
      cli.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
      cli.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
      httplib::Headers headers;
      if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

      const auto start = std::chrono::steady_clock::now();
      auto res = cli.Post(endpoint_.path, headers, body, "application/json");
      const auto elapsed = std::chrono::steady_clock::now() - start;
      if (res && res->status >= 200 && res->status < 300) return parse_scores(assistant_content(res->body), env.n_buyers);

      if (res) {
        last = InvalidReason::Transport;
        detail = "HTTP status " + std::to_string(res->status);
      } else {
        const auto err = res.error();
        const bool timed_out = err == httplib::Error::ConnectionTimeout ||
                               (err == httplib::Error::Read && elapsed >= timeout * 0.95);
        last = timed_out ? InvalidReason::Timeout : InvalidReason::Transport;
        detail = httplib::to_string(err);
      }
    }
    return Invalid{last, detail};
  }

  /// Total HTTP attempts issued, including retries.
  long attempts() const { return attempts_.load(); }

 private:
  CriticConfig cfg_;
  EndpointParts endpoint_;
  std::string api_key_;
  std::counting_semaphore<1024> in_flight_;
  std::atomic<long> attempts_{0};
};

}  // namespace fairmarket
