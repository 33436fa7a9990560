#pragma once

// Uniform respondent interface over live LLM HTTP APIs.
//
// Adapters are stateless per request; one retry/backoff policy is shared by
// all of them, and a per-provider token bucket serializes admission.  The
// HTTP layer is a seam (HttpTransport) so tests can script replies without a
// network.

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "conjoint/design.hpp"
#include "conjoint/errors.hpp"
#include "conjoint/prompts.hpp"

namespace conjoint {

struct QueryParams {
  std::string model_name;
  double temperature = 1.0;
  std::optional<long> seed;
  int max_tokens = 16;
  std::chrono::milliseconds timeout{30000};
};

struct RawResponse {
  std::string text;  // completion, byte-exact and untrimmed
  std::chrono::milliseconds latency{0};
  std::string provider;
  std::string transport_meta;  // "retries=N;..." plus request id when available
};

class Respondent {
 public:
  virtual ~Respondent() = default;
  virtual RawResponse respond(const Vignette& vignette, const PromptBundle& prompt, const QueryParams& params,
                              long run_index) = 0;
};

// ---- transport seam -----------------------------------------------------------

struct HttpRequest {
  std::string path;
  std::vector<std::pair<std::string, std::string>> headers;
  std::string body;  // JSON
};

struct HttpReply {
  int status = 0;
  std::string body;
};

class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  // Throws TransportError on connection failure / timeout.
  virtual HttpReply post(const HttpRequest& request) = 0;
};

// ---- retry & rate limiting ------------------------------------------------------

struct RetryPolicy {
  int max_attempts = 5;
  std::chrono::milliseconds initial_backoff{500};
  std::chrono::milliseconds max_backoff{8000};
  // Injectable so tests run without real sleeps.
  std::function<void(std::chrono::milliseconds)> sleeper = [](std::chrono::milliseconds d) {
    std::this_thread::sleep_for(d);
  };

  std::chrono::milliseconds backoff_for(int attempt) const {
    auto d = initial_backoff;
    for (int i = 0; i < attempt && d < max_backoff; ++i) d *= 2;
    return std::min(d, max_backoff);
  }
};

// Token bucket: at most `capacity` immediate requests, refilled at
// `rate_per_second`.  rate_per_second <= 0 disables limiting.
class TokenBucket {
 public:
  using Clock = std::chrono::steady_clock;

  explicit TokenBucket(double rate_per_second, double capacity = 1.0)
      : rate_(rate_per_second), capacity_(std::max(1.0, capacity)), tokens_(capacity_), last_(Clock::now()) {}

  void acquire() {
    if (rate_ <= 0) return;
    std::unique_lock lock(mutex_);
    for (;;) {
      refill();
      if (tokens_ >= 1.0) {
        tokens_ -= 1.0;
        return;
      }
      const double deficit = 1.0 - tokens_;
      const auto wait = std::chrono::duration<double>(deficit / rate_);
      cv_.wait_for(lock, std::chrono::duration_cast<Clock::duration>(wait));
    }
  }

 private:
  void refill() {
    const auto now = Clock::now();
    const double elapsed = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    tokens_ = std::min(capacity_, tokens_ + elapsed * rate_);
  }

  double rate_;
  double capacity_;
  double tokens_;
  Clock::time_point last_;
  std::mutex mutex_;
  std::condition_variable cv_;
};

// ---- wire formats ----------------------------------------------------------------

enum class ProviderKind { OpenAi, Anthropic, Gemini };

inline std::string to_string(ProviderKind kind) {
  switch (kind) {
    case ProviderKind::OpenAi: return "openai";
    case ProviderKind::Anthropic: return "anthropic";
    case ProviderKind::Gemini: return "gemini";
  }
  return "unknown";
}

inline ProviderKind provider_kind_from_string(std::string_view name) {
  if (name == "openai") return ProviderKind::OpenAi;
  if (name == "anthropic") return ProviderKind::Anthropic;
  if (name == "gemini") return ProviderKind::Gemini;
  throw InvalidConfig("unknown provider '" + std::string(name) + "' (expected openai, anthropic or gemini)");
}

inline std::string default_base_url(ProviderKind kind) {
  switch (kind) {
    case ProviderKind::OpenAi: return "https://api.openai.com";
    case ProviderKind::Anthropic: return "https://api.anthropic.com";
    case ProviderKind::Gemini: return "https://generativelanguage.googleapis.com";
  }
  return "";
}

inline std::string api_key_env_var(ProviderKind kind) {
  switch (kind) {
    case ProviderKind::OpenAi: return "OPENAI_API_KEY";
    case ProviderKind::Anthropic: return "ANTHROPIC_API_KEY";
    case ProviderKind::Gemini: return "GEMINI_API_KEY";
  }
  return "";
}

// Seed is forwarded only where the wire format accepts one.
inline bool provider_supports_seed(ProviderKind kind) { return kind == ProviderKind::OpenAi; }

inline HttpRequest build_provider_request(ProviderKind kind, const std::string& api_key,
                                          const PromptBundle& prompt, const QueryParams& params) {
  HttpRequest req;
  nlohmann::json body;
  switch (kind) {
    case ProviderKind::OpenAi: {
      req.path = "/v1/chat/completions";
      req.headers = {{"Authorization", "Bearer " + api_key}};
      body["model"] = params.model_name;
      body["messages"] = nlohmann::json::array({{{"role", "system"}, {"content", prompt.system_text}},
                                                {{"role", "user"}, {"content", prompt.user_text}}});
      body["temperature"] = params.temperature;
      body["max_tokens"] = params.max_tokens;
      if (params.seed) body["seed"] = *params.seed;
      break;
    }
    case ProviderKind::Anthropic: {
      req.path = "/v1/messages";
      req.headers = {{"x-api-key", api_key}, {"anthropic-version", "2023-06-01"}};
      body["model"] = params.model_name;
      body["system"] = prompt.system_text;
      body["messages"] = nlohmann::json::array({{{"role", "user"}, {"content", prompt.user_text}}});
      body["temperature"] = params.temperature;
      body["max_tokens"] = params.max_tokens;
      break;
    }
    case ProviderKind::Gemini: {
      req.path = "/v1beta/models/" + params.model_name + ":generateContent";
      req.headers = {{"x-goog-api-key", api_key}};
      body["systemInstruction"] = {{"parts", nlohmann::json::array({{{"text", prompt.system_text}}})}};
      body["contents"] = nlohmann::json::array(
          {{{"role", "user"}, {"parts", nlohmann::json::array({{{"text", prompt.user_text}}})}}});
      body["generationConfig"] = {{"temperature", params.temperature}, {"maxOutputTokens", params.max_tokens}};
      break;
    }
  }
  req.headers.emplace_back("Content-Type", "application/json");
  req.body = body.dump();
  return req;
}

// Pulls the completion text out of a 200 reply.  Empty or missing content is
// a refusal, not a transport problem.
inline std::string extract_provider_text(ProviderKind kind, const std::string& body,
                                         std::string* request_id = nullptr) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw TransportError(std::string("unparseable provider reply: ") + e.what());
  }
  try {
    if (request_id && j.contains("id") && j["id"].is_string()) *request_id = j["id"].get<std::string>();
    switch (kind) {
      case ProviderKind::OpenAi: {
        const auto& choices = j.at("choices");
        if (choices.empty()) throw ProviderRefusal("no choices in completion");
        const auto& content = choices.at(0).at("message").at("content");
        if (content.is_null() || content.get<std::string>().empty())
          throw ProviderRefusal("empty completion");
        return content.get<std::string>();
      }
      case ProviderKind::Anthropic: {
        for (const auto& block : j.at("content"))
          if (block.value("type", "") == "text") {
            std::string text = block.at("text").get<std::string>();
            if (text.empty()) throw ProviderRefusal("empty completion");
            return text;
          }
        throw ProviderRefusal("no text block in completion");
      }
      case ProviderKind::Gemini: {
        const auto& candidates = j.at("candidates");
        if (candidates.empty()) throw ProviderRefusal("no candidates in completion");
        const auto& parts = candidates.at(0).at("content").at("parts");
        if (parts.empty()) throw ProviderRefusal("no parts in completion");
        std::string text = parts.at(0).at("text").get<std::string>();
        if (text.empty()) throw ProviderRefusal("empty completion");
        return text;
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ProviderRefusal(std::string("malformed completion payload: ") + e.what());
  }
  throw ProviderRefusal("unreachable");
}

// ---- live respondent -------------------------------------------------------------

class LiveProvider : public Respondent {
 public:
  LiveProvider(ProviderKind kind, std::string api_key, std::shared_ptr<HttpTransport> transport,
               RetryPolicy retry = {}, std::shared_ptr<TokenBucket> limiter = nullptr)
      : kind_(kind),
        api_key_(std::move(api_key)),
        transport_(std::move(transport)),
        retry_(std::move(retry)),
        limiter_(std::move(limiter)) {
    if (api_key_.empty()) throw AuthError("missing API key for provider " + to_string(kind_));
  }

  RawResponse respond(const Vignette&, const PromptBundle& prompt, const QueryParams& params,
                      long) override {
    const HttpRequest request = build_provider_request(kind_, api_key_, prompt, params);
    const auto started = std::chrono::steady_clock::now();

    int retries = 0;
    std::optional<int> last_status;
    for (int attempt = 0; attempt < retry_.max_attempts; ++attempt) {
      if (attempt > 0) {
        ++retries;
        retry_.sleeper(retry_.backoff_for(attempt - 1));
      }
      if (limiter_) limiter_->acquire();

      HttpReply reply;
      try {
        reply = transport_->post(request);
      } catch (const TransportError&) {
        last_status.reset();
        continue;  // network-level failure, retry
      }
      last_status = reply.status;

      if (reply.status == 200) {
        std::string request_id;
        std::string text = extract_provider_text(kind_, reply.body, &request_id);
        RawResponse out;
        out.text = std::move(text);
        out.latency = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() -
                                                                            started);
        out.provider = to_string(kind_);
        out.transport_meta = "retries=" + std::to_string(retries);
        if (!request_id.empty()) out.transport_meta += ";request_id=" + request_id;
        if (params.seed && !provider_supports_seed(kind_)) out.transport_meta += ";seed_unsupported";
        return out;
      }
      if (reply.status == 401 || reply.status == 403)
        throw AuthError("provider " + to_string(kind_) + " rejected credentials (HTTP " +
                        std::to_string(reply.status) + ")");
      if (reply.status == 429 || reply.status >= 500) continue;  // transient, retry
      throw TransportError("provider " + to_string(kind_) + " returned HTTP " + std::to_string(reply.status) +
                           ": " + reply.body.substr(0, 200));
    }

    if (last_status && *last_status == 429)
      throw RateLimited("provider " + to_string(kind_) + " still rate limiting after " +
                        std::to_string(retry_.max_attempts) + " attempts");
    throw TransportError("provider " + to_string(kind_) + " unreachable after " +
                         std::to_string(retry_.max_attempts) + " attempts" +
                         (last_status ? " (last HTTP " + std::to_string(*last_status) + ")" : ""));
  }

  ProviderKind kind() const { return kind_; }

 private:
  ProviderKind kind_;
  std::string api_key_;
  std::shared_ptr<HttpTransport> transport_;
  RetryPolicy retry_;
  std::shared_ptr<TokenBucket> limiter_;
};

inline std::string api_key_from_env(ProviderKind kind) {
  const char* value = std::getenv(api_key_env_var(kind).c_str());
  if (!value || !*value)
    throw AuthError("environment variable " + api_key_env_var(kind) + " is not set");
  return value;
}

}  // namespace conjoint
