#include <doctest.h>

#include <atomic>
#include <memory>
#include <thread>

#include "dyntree/http_backend.hpp"

using namespace dyntree;

namespace {

// Local chat-completions endpoint for hermetic client tests.
class LocalServer {
 public:
  LocalServer() {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req,
                                                httplib::Response& res) {
      ++hits_;
      if (fail_remaining_ > 0) {
        --fail_remaining_;
        res.status = 500;
        res.set_content("{\"error\":\"transient\"}", "application/json");
        return;
      }
      last_body_ = req.body;
      last_auth_ = req.get_header_value("Authorization");
      nlohmann::json reply{
          {"choices",
           nlohmann::json::array(
               {{{"message", {{"role", "assistant"}, {"content", "Paris"}}},
                 {"logprobs",
                  {{"content", nlohmann::json::array({{{"token", "Paris"},
                                                       {"logprob", -0.12}}})}}}}})}};
      res.set_content(reply.dump(), "application/json");
    });
    server_.Post("/v1/embeddings", [](const httplib::Request&, httplib::Response& res) {
      nlohmann::json reply{
          {"data", nlohmann::json::array({{{"embedding", {3.0, 0.0, 4.0, 0.0}}}})}};
      res.set_content(reply.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~LocalServer() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }
  void fail_next(int n) { fail_remaining_ = n; }
  int hits() const { return hits_; }
  std::string last_body() const { return last_body_; }
  std::string last_auth() const { return last_auth_; }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<int> fail_remaining_{0};
  std::atomic<int> hits_{0};
  std::string last_body_;
  std::string last_auth_;
};

}  // namespace

TEST_SUITE("http_backend") {

TEST_CASE("chat transport posts the prompt and parses content with logprobs") {
  LocalServer server;
  HttpBackendConfig config;
  config.base_url = server.base_url();
  config.api_key = "test-key";
  config.model = "test-model";
  HttpChatTransport transport(config);

  BackendRequest request;
  request.kind = RequestKind::CLOSED_BOOK;
  request.prompt_text = "Question: capital of France?\nAnswer:";
  request.temperature = 0.0;
  BackendResponse response = transport.execute(request);

  CHECK(response.text == "Paris");
  REQUIRE(response.token_logprobs.size() == 1);
  CHECK(response.token_logprobs[0] == doctest::Approx(-0.12));
  CHECK(server.last_auth() == "Bearer test-key");
  nlohmann::json body = nlohmann::json::parse(server.last_body());
  CHECK(body.at("model") == "test-model");
  CHECK(body.at("temperature") == 0.0);
  CHECK(body.at("logprobs") == true);
  CHECK(body.at("messages")[0].at("content").get<std::string>().find("capital") !=
        std::string::npos);
}

TEST_CASE("service-level retries recover from transient HTTP failures") {
  LocalServer server;
  server.fail_next(2);
  HttpBackendConfig config;
  config.base_url = server.base_url();
  config.api_key = "k";
  ServiceConfig service_config;
  service_config.retry_base_delay_ms = 0;
  KnowledgeService service(std::make_shared<HttpChatTransport>(config), service_config);

  StrategyResult result = service.answer_closed_book("capital of France?");
  CHECK(result.answer_text == "Paris");
  CHECK(result.calls_used == 1);
  CHECK(service.accounting().inference_calls() == 1);  // only the success charges
  CHECK(server.hits() == 3);
}

TEST_CASE("exhausted retries surface a BackendError") {
  LocalServer server;
  server.fail_next(10);
  HttpBackendConfig config;
  config.base_url = server.base_url();
  ServiceConfig service_config;
  service_config.retry_base_delay_ms = 0;
  KnowledgeService service(std::make_shared<HttpChatTransport>(config), service_config);
  CHECK_THROWS_AS(service.answer_closed_book("q"), BackendError);
  CHECK(service.accounting().inference_calls() == 0);
}

TEST_CASE("remote embedder normalizes returned vectors") {
  LocalServer server;
  HttpBackendConfig config;
  config.base_url = server.base_url();
  RemoteEmbedder embedder(config, 4);
  Vector v = embedder.embed("anything");
  REQUIRE(v.size() == 4);
  CHECK(v[0] == doctest::Approx(0.6));
  CHECK(v[2] == doctest::Approx(0.8));
  CHECK(embedder.embed("").size() == 4);
}

TEST_CASE("base-url parsing requires a scheme and splits the path prefix") {
  CHECK_THROWS_AS(HttpChatTransport(HttpBackendConfig{"no-scheme", "k"}), BackendError);
  HttpBackendConfig config;
  config.base_url = "http://127.0.0.1:9/v2/";
  config.api_key = "k";
  HttpChatTransport transport(config);  // parse only; no request issued
  CHECK(transport.model_id() == config.model);
}

}  // TEST_SUITE
