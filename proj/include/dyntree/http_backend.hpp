#pragma once

// Real-mode transport: an OpenAI-style chat-completions client plus a
// remote embedding provider. Credentials come from DYNTREE_API_KEY and the
// endpoint from DYNTREE_API_BASE (or explicit config). Transport errors
// surface as BackendError; the service layer owns retries.

#include <cstdlib>
#include <memory>
#include <string>
#include <vector>

#include "dyntree/backend.hpp"
#include "dyntree/embedding.hpp"
#include "dyntree/errors.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace dyntree {

struct HttpBackendConfig {
  std::string base_url;  // e.g. http://host:8000/v1 (falls back to DYNTREE_API_BASE)
  std::string api_key;   // falls back to DYNTREE_API_KEY
  std::string model = "meta-llama/Llama-3.3-70B-Instruct-Turbo-Free";
  std::string embedding_model = "sentence-transformers/all-MiniLM-L6-v2";
  int timeout_seconds = 60;
};

namespace detail {

struct ParsedUrl {
  std::string host;  // scheme://host[:port]
  std::string path_prefix;
};

inline ParsedUrl parse_base_url(const std::string& url) {
  std::size_t scheme = url.find("://");
  if (scheme == std::string::npos) {
    throw BackendError("http backend: base url '" + url + "' lacks a scheme");
  }
  std::size_t path = url.find('/', scheme + 3);
  ParsedUrl out;
  if (path == std::string::npos) {
    out.host = url;
  } else {
    out.host = url.substr(0, path);
    out.path_prefix = url.substr(path);
    while (!out.path_prefix.empty() && out.path_prefix.back() == '/') {
      out.path_prefix.pop_back();
    }
  }
  return out;
}

inline std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : fallback;
}

}  // namespace detail

class HttpChatTransport final : public Transport {
 public:
  explicit HttpChatTransport(HttpBackendConfig config = {}) : config_(std::move(config)) {
    if (config_.base_url.empty()) config_.base_url = detail::env_or("DYNTREE_API_BASE", "");
    if (config_.api_key.empty()) config_.api_key = detail::env_or("DYNTREE_API_KEY", "");
    if (config_.base_url.empty()) {
      throw BackendError("http backend: no base url (set DYNTREE_API_BASE)");
    }
    url_ = detail::parse_base_url(config_.base_url);
  }

  std::string model_id() const override { return config_.model; }

  BackendResponse execute(const BackendRequest& request) override {
    nlohmann::json body{
        {"model", config_.model},
        {"messages",
         nlohmann::json::array({{{"role", "user"}, {"content", request.prompt_text}}})},
        {"temperature", request.temperature},
        {"logprobs", true},
    };
    nlohmann::json reply = post_json("/chat/completions", body);
    try {
      const nlohmann::json& choice = reply.at("choices").at(0);
      BackendResponse out;
      out.text = choice.at("message").at("content").get<std::string>();
      if (choice.contains("logprobs") && choice.at("logprobs").is_object() &&
          choice.at("logprobs").contains("content")) {
        for (const auto& tok : choice.at("logprobs").at("content")) {
          if (tok.contains("logprob")) out.token_logprobs.push_back(tok.at("logprob").get<double>());
        }
      }
      return out;
    } catch (const nlohmann::json::exception& e) {
      throw BackendError(std::string("http backend: malformed completion response: ") +
                         e.what());
    }
  }

  nlohmann::json post_json(const std::string& endpoint, const nlohmann::json& body) {
    httplib::Client client(url_.host);
    client.set_connection_timeout(config_.timeout_seconds, 0);
    client.set_read_timeout(config_.timeout_seconds, 0);
    httplib::Headers headers;
    if (!config_.api_key.empty()) {
      headers.emplace("Authorization", "Bearer " + config_.api_key);
    }
    auto result = client.Post(url_.path_prefix + endpoint, headers, body.dump(),
                              "application/json");
    if (!result) {
      throw BackendError("http backend: transport failure (" +
                         httplib::to_string(result.error()) + ")");
    }
    if (result->status < 200 || result->status >= 300) {
      throw BackendError("http backend: HTTP " + std::to_string(result->status) + " from " +
                         endpoint);
    }
    nlohmann::json parsed = nlohmann::json::parse(result->body, nullptr, false);
    if (parsed.is_discarded()) {
      throw BackendError("http backend: response from " + endpoint + " is not JSON");
    }
    return parsed;
  }

 private:
  HttpBackendConfig config_;
  detail::ParsedUrl url_;
};

// Remote sentence embeddings over the same auth/base configuration.
class RemoteEmbedder final : public EmbeddingProvider {
 public:
  explicit RemoteEmbedder(HttpBackendConfig config = {}, int dim = 384)
      : transport_(std::make_unique<HttpChatTransport>(std::move(config))), dim_(dim) {}

  int dim() const override { return dim_; }

  Vector embed(std::string_view text) const override {
    if (text.empty()) return Vector(static_cast<std::size_t>(dim_), 0.0);
    nlohmann::json body{{"model", model_}, {"input", std::string(text)}};
    nlohmann::json reply = transport_->post_json("/embeddings", body);
    try {
      const nlohmann::json& data = reply.at("data").at(0).at("embedding");
      Vector v;
      v.reserve(data.size());
      for (const auto& x : data) v.push_back(x.get<double>());
      if (static_cast<int>(v.size()) != dim_) {
        throw BackendError("remote embedder: expected dim " + std::to_string(dim_) + ", got " +
                           std::to_string(v.size()));
      }
      double norm2 = 0.0;
      for (double x : v) norm2 += x * x;
      if (norm2 > 0.0) {
        double inv = 1.0 / std::sqrt(norm2);
        for (double& x : v) x *= inv;
      }
      return v;
    } catch (const nlohmann::json::exception& e) {
      throw BackendError(std::string("remote embedder: malformed response: ") + e.what());
    }
  }

  void set_model(std::string model) { model_ = std::move(model); }

 private:
  std::unique_ptr<HttpChatTransport> transport_;
  int dim_;
  std::string model_ = "sentence-transformers/all-MiniLM-L6-v2";
};

}  // namespace dyntree
