#pragma once

// Local chat-completion endpoint for tests. Every request is recorded; the
// reply body comes from a user-supplied function of the request index.

#include <atomic>
#include <chrono>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include "httplib.h"
#include "json.hpp"

namespace fmtest {

struct MockReply {
  int status = 200;
  std::string content;  // assistant message text
  std::chrono::milliseconds delay{0};
  bool raw = false;  // send `content` as the whole body
};

class MockChatServer {
 public:
  using Responder = std::function<MockReply(long index, const nlohmann::json& request)>;

  explicit MockChatServer(Responder r) : responder_(std::move(r)) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      const long index = requests_.fetch_add(1);
      auto body = nlohmann::json::parse(req.body, nullptr, false);
      {
        std::lock_guard lock(mu_);
        bodies_.push_back(body);
        auth_.push_back(req.get_header_value("Authorization"));
      }
      const MockReply r = responder_(index, body);
      if (r.delay.count() > 0) std::this_thread::sleep_for(r.delay);
      res.status = r.status;
      if (r.raw) {
        res.set_content(r.content, "application/json");
      } else {
        nlohmann::json out = {{"id", "mock"},
                              {"choices", {{{"index", 0}, {"message", {{"role", "assistant"}, {"content", r.content}}}}}}};
        res.set_content(out.dump(), "application/json");
      }
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~MockChatServer() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  MockChatServer(const MockChatServer&) = delete;
  MockChatServer& operator=(const MockChatServer&) = delete;

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions"; }
  long requests() const { return requests_.load(); }
  std::vector<nlohmann::json> bodies() const {
    std::lock_guard lock(mu_);
    return bodies_;
  }
  std::vector<std::string> auth_headers() const {
    std::lock_guard lock(mu_);
    return auth_;
  }

 private:
  Responder responder_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
  std::atomic<long> requests_{0};
  mutable std::mutex mu_;
  std::vector<nlohmann::json> bodies_;
  std::vector<std::string> auth_;
};

/// A port nothing listens on (bound then released).
inline int closed_port() {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = 0;
  ::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr);
  socklen_t len = sizeof addr;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  ::close(fd);
  return ntohs(addr.sin_port);
}

}  // namespace fmtest
