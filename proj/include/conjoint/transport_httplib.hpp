#pragma once

// cpp-httplib-backed transport.  Kept out of providers.hpp so library users
// who only need the fake-transport seam do not pull in the HTTP stack.
// Define CONJOINT_ENABLE_TLS (and link OpenSSL) to reach https endpoints.

#ifdef CONJOINT_ENABLE_TLS
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#endif

#include <chrono>
#include <memory>
#include <string>

#include <httplib.h>

#include "conjoint/errors.hpp"
#include "conjoint/providers.hpp"

namespace conjoint {

class HttplibTransport : public HttpTransport {
 public:
  explicit HttplibTransport(std::string base_url, std::chrono::milliseconds timeout = std::chrono::milliseconds(30000))
      : base_url_(std::move(base_url)), timeout_(timeout) {
#ifndef CONJOINT_ENABLE_TLS
    if (base_url_.rfind("https://", 0) == 0)
      throw TransportError("this build lacks TLS support; rebuild with OpenSSL to reach " + base_url_);
#endif
  }

  HttpReply post(const HttpRequest& request) override {
    httplib::Client client(base_url_);
    client.set_connection_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout_));
    client.set_read_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout_));
    client.set_write_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout_));

    httplib::Headers headers;
    std::string content_type = "application/json";
    for (const auto& [name, value] : request.headers) {
      if (name == "Content-Type")
        content_type = value;
      else
        headers.emplace(name, value);
    }

    auto result = client.Post(request.path, headers, request.body, content_type);
    if (!result)
      throw TransportError("HTTP POST " + base_url_ + request.path + " failed: " +
                           httplib::to_string(result.error()));
    return HttpReply{result->status, result->body};
  }

  const std::string& base_url() const { return base_url_; }

 private:
  std::string base_url_;
  std::chrono::milliseconds timeout_;
};

// Builds a live respondent for `provider`, reading credentials from the
// provider's environment variable.  Throws AuthError before any network
// activity when the key is absent.
inline std::unique_ptr<LiveProvider> make_live_provider(const std::string& provider_name,
                                                        const std::string& base_url_override,
                                                        std::chrono::milliseconds timeout,
                                                        RetryPolicy retry = {},
                                                        std::shared_ptr<TokenBucket> limiter = nullptr) {
  const ProviderKind kind = provider_kind_from_string(provider_name);
  std::string api_key = api_key_from_env(kind);
  const std::string base_url = base_url_override.empty() ? default_base_url(kind) : base_url_override;
  auto transport = std::make_shared<HttplibTransport>(base_url, timeout);
  return std::make_unique<LiveProvider>(kind, std::move(api_key), std::move(transport), std::move(retry),
                                        std::move(limiter));
}

}  // namespace conjoint
