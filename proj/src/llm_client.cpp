// SPDX-License-Identifier: Apache-2.0
#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"

#include <fmt/core.h>

#include <cstdlib>

#include "sdseval/error.hpp"
#include "sdseval/reformat.hpp"

namespace sdseval {

namespace {

using json = nlohmann::json;

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;    // without trailing slash
};

SplitUrl split_url(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) fail(ErrorCode::Config, fmt::format("base_url '{}' has no scheme", url));
  auto path_start = url.find('/', scheme_end + 3);
  SplitUrl s;
  s.origin = url.substr(0, path_start);
  s.path = path_start == std::string::npos ? std::string{} : url.substr(path_start);
  while (!s.path.empty() && s.path.back() == '/') s.path.pop_back();
  return s;
}

class ChatCompletionClient final : public LlmClient {
 public:
  explicit ChatCompletionClient(LlmEndpoint endpoint) : endpoint_(std::move(endpoint)), url_(split_url(endpoint_.base_url)) {
    if (!endpoint_.api_key_env.empty()) {
      const char* key = std::getenv(endpoint_.api_key_env.c_str());
      if (!key || !*key) {
        fail(ErrorCode::Config, fmt::format("environment variable {} is not set", endpoint_.api_key_env));
      }
      api_key_ = key;
    }
  }

  std::string complete(const std::string& prompt) override {
    httplib::Client cli(url_.origin);
    auto secs = std::chrono::duration_cast<std::chrono::seconds>(endpoint_.timeout);
    auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(endpoint_.timeout - secs);
    cli.set_connection_timeout(secs.count(), usecs.count());
    cli.set_read_timeout(secs.count(), usecs.count());
    cli.set_write_timeout(secs.count(), usecs.count());

    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
    json body{{"model", endpoint_.model},
              {"temperature", 0},
              {"messages", json::array({json{{"role", "user"}, {"content", prompt}}})}};

    auto res = cli.Post(url_.path + "/chat/completions", headers, body.dump(), "application/json");
    if (!res) fail(ErrorCode::Client, fmt::format("request failed: {}", httplib::to_string(res.error())));
    if (res->status != 200) fail(ErrorCode::Client, fmt::format("endpoint returned HTTP {}", res->status));
    try {
      auto reply = json::parse(res->body);
      return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
      fail(ErrorCode::Client, fmt::format("unexpected response shape: {}", e.what()));
    }
  }

 private:
  LlmEndpoint endpoint_;
  SplitUrl url_;
  std::string api_key_;
};

}  // namespace

std::unique_ptr<LlmClient> make_chat_client(const LlmEndpoint& endpoint) {
  return std::make_unique<ChatCompletionClient>(endpoint);
}

}  // namespace sdseval
