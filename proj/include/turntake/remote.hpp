#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "turntake/backends.hpp"
#include "turntake/hash.hpp"
#include "turntake/io.hpp"

namespace turntake::backends {

inline constexpr const char* kApiKeyEnv = "TURNTAKE_API_KEY";

// Raw response text keyed by (backend_id, prompt_hash). Stores raw text
// rather than parsed output so parser changes re-apply on the next run.
// Entries live in memory and, with a directory, one file per key written
// atomically.
class ResponseCache {
 public:
  explicit ResponseCache(std::optional<std::filesystem::path> dir = std::nullopt) : dir_(std::move(dir)) {}

  static std::string key(std::string_view backend_id, std::string_view prompt_hash) {
    return content_hash({backend_id, prompt_hash});
  }

  std::optional<std::string> get(const std::string& key) {
    {
      std::lock_guard lock(mu_);
      if (auto it = mem_.find(key); it != mem_.end()) return it->second;
    }
    if (!dir_) return std::nullopt;
    const auto p = path_for(key);
    if (!std::filesystem::exists(p)) return std::nullopt;
    std::string raw = io::read_file(p);
    std::lock_guard lock(mu_);
    mem_[key] = raw;
    return raw;
  }

  void put(const std::string& key, const std::string& raw) {
    if (dir_) io::write_file_atomic(path_for(key), raw);
    std::lock_guard lock(mu_);
    mem_[key] = raw;
  }

  // Serializes work on one key: concurrent misses for the same prompt wait
  // for the first request instead of issuing their own.
  std::mutex& key_lock(const std::string& key) {
    std::lock_guard lock(mu_);
    auto& m = key_locks_[key];
    if (!m) m = std::make_unique<std::mutex>();
    return *m;
  }

 private:
  std::filesystem::path path_for(const std::string& key) const { return *dir_ / (key + ".txt"); }

  std::optional<std::filesystem::path> dir_;
  std::mutex mu_;
  std::map<std::string, std::string> mem_;
  std::map<std::string, std::unique_ptr<std::mutex>> key_locks_;
};

struct ChatMessage {
  std::string role;
  std::string content;
};

inline nlohmann::json chat_request_json(const BackendConfig& cfg, const std::vector<ChatMessage>& messages) {
  nlohmann::json msgs = nlohmann::json::array();
  for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
  return {{"model", cfg.model_name.value_or("")},
          {"messages", msgs},
          {"temperature", cfg.temperature},
          {"max_tokens", cfg.max_tokens}};
}

struct RemoteStats {
  std::atomic<std::size_t> network_requests{0};
  std::atomic<std::size_t> cache_hits{0};
};

struct CallResult {
  std::string raw;
  int attempts = 0;  // 0 on cache hit
  bool cache_hit = false;
};

// Chat-completion client: POST {model, messages, temperature, max_tokens},
// read choices[0].message.content. Transient failures (connection errors,
// 408, 5xx) and 429 are retried up to max_retries with exponential backoff;
// 429 waits at least Retry-After seconds. 401/403 fail immediately.
class ChatClient {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  explicit ChatClient(BackendConfig cfg, std::shared_ptr<ResponseCache> cache = nullptr, Sleeper sleeper = nullptr)
      : cfg_(std::move(cfg)),
        cache_(cache ? std::move(cache)
                     : std::make_shared<ResponseCache>(cfg_.cache_dir ? std::optional<std::filesystem::path>(*cfg_.cache_dir)
                                                                      : std::nullopt)),
        sleep_(sleeper ? std::move(sleeper) : Sleeper([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); })) {
    cfg_.validate();
    if (cfg_.kind != BackendKind::RemoteChat)
      throw Error("SchemaViolation", "ChatClient needs a remote_chat backend config", {{"field", "kind"}});
    const auto& url = *cfg_.endpoint_url;
    const auto scheme_end = url.find("://");
    const auto path_start = url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    base_ = path_start == std::string::npos ? url : url.substr(0, path_start);
    path_ = path_start == std::string::npos ? "/" : url.substr(path_start);
  }

  const BackendConfig& config() const { return cfg_; }
  const RemoteStats& stats() const { return stats_; }

  CallResult complete(const std::vector<ChatMessage>& messages, const std::string& prompt_hash) {
    const std::string key = ResponseCache::key(cfg_.backend_id, prompt_hash);
    std::lock_guard key_guard(cache_->key_lock(key));
    if (auto hit = cache_->get(key)) {
      ++stats_.cache_hits;
      return {*hit, 0, true};
    }
    CallResult r = send(messages);
    cache_->put(key, r.raw);
    return r;
  }

 private:
  CallResult send(const std::vector<ChatMessage>& messages) {
    const std::string body = chat_request_json(cfg_, messages).dump();
    httplib::Headers headers;
    if (const char* key = std::getenv(kApiKeyEnv); key && *key) headers.emplace("Authorization", std::string("Bearer ") + key);

    const int max_attempts = 1 + cfg_.max_retries;
    std::string last_error;
    std::optional<double> last_retry_after;
    for (int attempt = 1; attempt <= max_attempts; ++attempt) {
      httplib::Client cli(base_);
      if (!cli.is_valid())
        throw Error("NetworkError", "cannot create client for " + base_ + " (https needs OpenSSL support)",
                    {{"endpoint", *cfg_.endpoint_url}, {"attempts", attempt}});
      const auto timeout = std::chrono::milliseconds(static_cast<long long>(cfg_.timeout_s * 1000));
      cli.set_connection_timeout(timeout);
      cli.set_read_timeout(timeout);
      cli.set_write_timeout(timeout);
      ++stats_.network_requests;
      auto res = cli.Post(path_, headers, body, "application/json");

      std::chrono::milliseconds wait = backoff(attempt);
      if (!res) {
        last_error = httplib::to_string(res.error());
        last_retry_after.reset();
      } else if (res->status == 200) {
        return {extract_content(res->body), attempt, false};
      } else if (res->status == 401 || res->status == 403) {
        throw Error("AuthError", "endpoint rejected credentials (HTTP " + std::to_string(res->status) + ")",
                    {{"status", res->status}, {"attempts", attempt}});
      } else if (res->status == 429) {
        last_error = "HTTP 429";
        last_retry_after = retry_after_seconds(*res);
        if (last_retry_after)
          wait = std::max(wait, std::chrono::milliseconds(static_cast<long long>(*last_retry_after * 1000)));
      } else if (res->status == 408 || res->status >= 500) {
        last_error = "HTTP " + std::to_string(res->status);
        last_retry_after.reset();
      } else {
        throw Error("NetworkError", "endpoint returned HTTP " + std::to_string(res->status),
                    {{"status", res->status}, {"attempts", attempt}, {"body", res->body.substr(0, 512)}});
      }
      if (attempt < max_attempts) sleep_(wait);
    }
    if (last_error == "HTTP 429") {
      nlohmann::json d{{"attempts", max_attempts}};
      d["retry_after"] = last_retry_after ? nlohmann::json(*last_retry_after) : nlohmann::json(nullptr);
      throw Error("RateLimited", "rate limited after " + std::to_string(max_attempts) + " attempts", d);
    }
    throw Error("NetworkError", "request failed after " + std::to_string(max_attempts) + " attempts: " + last_error,
                {{"attempts", max_attempts}, {"last_error", last_error}});
  }

  std::chrono::milliseconds backoff(int attempt) const {
    const long long base = std::max(0, cfg_.backoff_base_ms);
    const long long d = base << std::min(attempt - 1, 20);
    return std::chrono::milliseconds(std::min<long long>(d, cfg_.backoff_max_ms));
  }

  static std::optional<double> retry_after_seconds(const httplib::Response& res) {
    if (!res.has_header("Retry-After")) return std::nullopt;
    try {
      return std::stod(res.get_header_value("Retry-After"));
    } catch (...) {
      return std::nullopt;
    }
  }

  static std::string extract_content(const std::string& body) {
    try {
      const auto j = nlohmann::json::parse(body);
      const auto& content = j.at("choices").at(0).at("message").at("content");
      if (!content.is_string()) throw Error("MalformedResponse", "message content is not a string");
      return content.get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw Error("MalformedResponse", std::string("unexpected chat-completion response: ") + e.what(),
                  {{"body", body.substr(0, 512)}});
    }
  }

  BackendConfig cfg_;
  std::shared_ptr<ResponseCache> cache_;
  Sleeper sleep_;
  std::string base_;
  std::string path_;
  RemoteStats stats_;
};

inline std::vector<ChatMessage> messages_for(const PromptBundle& bundle) {
  return {{"system", bundle.system_message()}, {"user", bundle.user_message()}};
}

inline ModelOutput decide_remote(const PromptBundle& bundle, ChatClient& client) {
  return prompting::parse_output(client.complete(messages_for(bundle), bundle.prompt_hash()).raw);
}

class RemoteChatBackend final : public Backend {
 public:
  explicit RemoteChatBackend(std::shared_ptr<ChatClient> client) : client_(std::move(client)) {}
  const std::string& id() const override { return client_->config().backend_id; }
  bool deterministic() const override { return false; }
  ModelOutput decide(const DecisionContext& ctx) override { return decide_remote(ctx.bundle, *client_); }
  ChatClient& client() { return *client_; }

 private:
  std::shared_ptr<ChatClient> client_;
};

}  // namespace turntake::backends
