#pragma once

// Uniform contract over answer-producing services. A Transport turns one
// BackendRequest into one BackendResponse (simulated oracle or hosted chat
// API); KnowledgeService layers prompts, caching, retries, call accounting,
// and the answer judge on top.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dyntree/errors.hpp"
#include "dyntree/text.hpp"
#include "dyntree/tree.hpp"

#include <nlohmann/json.hpp>

namespace dyntree {

enum class RequestKind : int {
  CLOSED_BOOK = 0,
  OPEN_BOOK = 1,
  DECOMPOSE = 2,
  REFORMULATE = 3,
  AGGREGATE = 4,
  JUDGE = 5,
};

inline const char* request_kind_name(RequestKind k) {
  switch (k) {
    case RequestKind::CLOSED_BOOK: return "CLOSED_BOOK";
    case RequestKind::OPEN_BOOK: return "OPEN_BOOK";
    case RequestKind::DECOMPOSE: return "DECOMPOSE";
    case RequestKind::REFORMULATE: return "REFORMULATE";
    case RequestKind::AGGREGATE: return "AGGREGATE";
    case RequestKind::JUDGE: return "JUDGE";
  }
  return "?";
}

struct BackendRequest {
  RequestKind kind = RequestKind::CLOSED_BOOK;
  std::string prompt_text;                     // fully rendered prompt
  std::vector<std::string> context_passages;   // open-book only
  double temperature = 0.0;
  bool cache_allowed = true;

  // Structured view of the prompt, for transports that answer from a
  // knowledge model rather than free text.
  std::string question;
  std::vector<std::pair<std::string, std::string>> qa_pairs;  // aggregate only
};

struct BackendResponse {
  std::string text;
  std::vector<double> token_logprobs;
  int calls_charged = 1;
};

// Inference calls are the cost term c; judge calls are evaluation overhead
// and tracked separately.
class CallAccounting {
 public:
  std::uint64_t inference_calls() const { return inference_.load(std::memory_order_relaxed); }
  std::uint64_t judge_calls() const { return judge_.load(std::memory_order_relaxed); }

  void charge_inference(int n) { inference_.fetch_add(static_cast<std::uint64_t>(n)); }
  void charge_judge(int n) { judge_.fetch_add(static_cast<std::uint64_t>(n)); }

 private:
  std::atomic<std::uint64_t> inference_{0};
  std::atomic<std::uint64_t> judge_{0};
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual BackendResponse execute(const BackendRequest& request) = 0;
  virtual std::string model_id() const { return "simulated"; }
};

// Key: (kind, prompt hash, temperature, model id).
class ResponseCache {
 public:
  virtual ~ResponseCache() = default;
  virtual std::optional<BackendResponse> get(const std::string& key) = 0;
  virtual void put(const std::string& key, const BackendResponse& response) = 0;
};

class MemoryCache final : public ResponseCache {
 public:
  std::optional<BackendResponse> get(const std::string& key) override {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = map_.find(key);
    if (it == map_.end()) return std::nullopt;
    return it->second;
  }
  void put(const std::string& key, const BackendResponse& response) override {
    std::lock_guard<std::mutex> lock(mu_);
    map_[key] = response;
  }

 private:
  std::mutex mu_;
  std::unordered_map<std::string, BackendResponse> map_;
};

// Content-addressed files, one JSON file per key. I/O failures degrade to
// cache misses.
class FileCache final : public ResponseCache {
 public:
  explicit FileCache(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
  }

  std::optional<BackendResponse> get(const std::string& key) override {
    std::lock_guard<std::mutex> lock(mu_);
    std::ifstream in(path_for(key));
    if (!in) return std::nullopt;
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.contains("text")) return std::nullopt;
    BackendResponse r;
    r.text = j.at("text").get<std::string>();
    r.token_logprobs = j.value("token_logprobs", std::vector<double>{});
    r.calls_charged = 1;
    return r;
  }

  void put(const std::string& key, const BackendResponse& response) override {
    std::lock_guard<std::mutex> lock(mu_);
    std::ofstream out(path_for(key));
    if (!out) return;
    nlohmann::json j{{"text", response.text}, {"token_logprobs", response.token_logprobs}};
    out << j.dump();
  }

 private:
  std::filesystem::path path_for(const std::string& key) const {
    return dir_ / (key + ".json");
  }
  std::filesystem::path dir_;
  std::mutex mu_;
};

struct PromptTemplates {
  std::string closed_book =
      "Answer the question with a short factual answer.\nQuestion: {question}\nAnswer:";
  std::string open_book =
      "Use the passages to answer the question with a short factual answer.\n"
      "Passages:\n{passages}\nQuestion: {question}\nAnswer:";
  std::string decompose =
      "Decompose the question into a numbered list of simpler sub-questions. "
      "Use #k to reference the answer of sub-question k.\n"
      "Question: {question}\nSub-questions:";
  std::string reformulate =
      "Rewrite the question so it is clear and unambiguous. Reply with the "
      "rewritten question only.\nQuestion: {question}\nRewritten:";
  std::string aggregate =
      "Sub-questions and their answers:\n{pairs}\n"
      "Using them, answer the original question with a short factual answer.\n"
      "Question: {question}\nAnswer:";
  std::string judge =
      "Question: {question}\nGold answer: {gold}\nPredicted answer: {predicted}\n"
      "Is the predicted answer correct? Reply with 1 or 0 only.\nReply:";
};

namespace detail {

inline std::string replace_all(std::string text, std::string_view what, std::string_view with) {
  std::size_t pos = 0;
  while ((pos = text.find(what, pos)) != std::string::npos) {
    text.replace(pos, what.size(), with);
    pos += with.size();
  }
  return text;
}

}  // namespace detail

// Parses a decomposition response: numbered list first, JSON array second.
inline std::vector<std::string> parse_decomposition(const std::string& text) {
  std::vector<std::string> items;
  std::istringstream in(text);
  std::string line;
  static const std::regex numbered(R"(^\s*\d+\s*[.)]\s*(.+?)\s*$)");
  while (std::getline(in, line)) {
    std::smatch m;
    if (std::regex_match(line, m, numbered)) items.push_back(m[1].str());
  }
  if (!items.empty()) return items;

  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (!j.is_discarded() && j.is_array()) {
    for (const auto& e : j) {
      if (e.is_string()) {
        std::string s = trim(e.get<std::string>());
        if (!s.empty()) items.push_back(s);
      }
    }
    if (!items.empty()) return items;
  }
  throw DecompositionError("parse_decomposition: no numbered list or JSON array in response");
}

struct ServiceConfig {
  PromptTemplates prompts;
  int max_children = 5;
  double judge_f1_threshold = 0.6;  // desk-mode correctness gate
  bool desk_judge = true;           // false routes judging through the backend
  int max_attempts = 3;
  int retry_base_delay_ms = 250;
  bool charge_cache_hits = false;   // strict counting mode
};

// High-level operations over a transport. Confidence and calls_used follow
// the StrategyResult contract; every charged call lands in the accounting
// counters exactly once.
class KnowledgeService {
 public:
  KnowledgeService(std::shared_ptr<Transport> transport, ServiceConfig config = {},
                   std::shared_ptr<ResponseCache> cache = nullptr)
      : transport_(std::move(transport)), config_(std::move(config)), cache_(std::move(cache)) {
    if (!transport_) throw std::invalid_argument("KnowledgeService: transport required");
  }

  CallAccounting& accounting() { return accounting_; }
  const ServiceConfig& config() const { return config_; }

  // Executes a request, consulting the cache when the request allows it.
  // Returns the response with calls_charged already applied to accounting:
  // cache hits charge 0 unless charge_cache_hits is set.
  BackendResponse cached(const BackendRequest& request) {
    std::string key = cache_key(request);
    if (cache_ && request.cache_allowed) {
      if (auto hit = cache_->get(key)) {
        BackendResponse r = *hit;
        r.calls_charged = config_.charge_cache_hits ? 1 : 0;
        charge(request.kind, r.calls_charged);
        return r;
      }
    }
    BackendResponse r = execute_with_retries(request);
    charge(request.kind, r.calls_charged);
    if (cache_ && request.cache_allowed) cache_->put(key, r);
    return r;
  }

  StrategyResult answer_closed_book(const std::string& question) {
    require_nonempty(question, "answer_closed_book");
    BackendRequest req;
    req.kind = RequestKind::CLOSED_BOOK;
    req.question = question;
    req.prompt_text = detail::replace_all(config_.prompts.closed_book, "{question}", question);
    BackendResponse resp = cached(req);
    return StrategyResult::from_answer(trim(resp.text), resp.token_logprobs, resp.calls_charged);
  }

  StrategyResult answer_open_book(const std::string& question,
                                  const std::vector<std::string>& passages,
                                  std::vector<std::string> passage_ids = {}) {
    require_nonempty(question, "answer_open_book");
    if (passages.empty()) {
      throw std::invalid_argument("answer_open_book: passages must be nonempty");
    }
    BackendRequest req;
    req.kind = RequestKind::OPEN_BOOK;
    req.question = question;
    req.context_passages = passages;
    std::string joined = join(passages, "\n");
    req.prompt_text = detail::replace_all(
        detail::replace_all(config_.prompts.open_book, "{passages}", joined), "{question}",
        question);
    BackendResponse resp = cached(req);
    StrategyResult result =
        StrategyResult::from_answer(trim(resp.text), resp.token_logprobs, resp.calls_charged);
    if (!passage_ids.empty()) result.retrieved_ids = std::move(passage_ids);
    return result;
  }

  // One decomposition layer. Results are clipped to max_children; an
  // unparseable response raises DecompositionError.
  std::vector<std::string> decompose(const std::string& question, double temperature = 0.0) {
    require_nonempty(question, "decompose");
    BackendRequest req;
    req.kind = RequestKind::DECOMPOSE;
    req.question = question;
    req.temperature = temperature;
    req.cache_allowed = temperature == 0.0;
    req.prompt_text = detail::replace_all(config_.prompts.decompose, "{question}", question);
    BackendResponse resp = cached(req);
    std::vector<std::string> subs = parse_decomposition(resp.text);
    if (static_cast<int>(subs.size()) > config_.max_children) {
      subs.resize(static_cast<std::size_t>(config_.max_children));
    }
    return subs;
  }

  // Paraphrase at temperature 0.7 with caching bypassed; empty responses
  // fall back to the input question.
  std::string reformulate(const std::string& question) {
    require_nonempty(question, "reformulate");
    BackendRequest req;
    req.kind = RequestKind::REFORMULATE;
    req.question = question;
    req.temperature = 0.7;
    req.cache_allowed = false;
    req.prompt_text = detail::replace_all(config_.prompts.reformulate, "{question}", question);
    BackendResponse resp = cached(req);
    std::string text = trim(resp.text);
    return text.empty() ? question : text;
  }

  StrategyResult aggregate_children(
      const std::string& question,
      const std::vector<std::pair<std::string, std::string>>& child_qa_pairs) {
    require_nonempty(question, "aggregate_children");
    if (child_qa_pairs.empty()) {
      throw std::invalid_argument("aggregate_children: need at least one child pair");
    }
    for (const auto& [q, a] : child_qa_pairs) {
      if (trim(a).empty()) {
        throw std::invalid_argument("aggregate_children: child answer for '" + q +
                                    "' is empty");
      }
    }
    BackendRequest req;
    req.kind = RequestKind::AGGREGATE;
    req.question = question;
    req.qa_pairs = child_qa_pairs;
    std::string pairs;
    for (std::size_t i = 0; i < child_qa_pairs.size(); ++i) {
      pairs += std::to_string(i + 1) + ". Q: " + child_qa_pairs[i].first +
               " A: " + child_qa_pairs[i].second + "\n";
    }
    req.prompt_text = detail::replace_all(
        detail::replace_all(config_.prompts.aggregate, "{pairs}", pairs), "{question}", question);
    BackendResponse resp = cached(req);
    return StrategyResult::from_answer(trim(resp.text), resp.token_logprobs, resp.calls_charged);
  }

  // Binary correctness. Desk mode: normalized token F1 against the gold
  // answer; real mode: one judge call, tracked outside the cost counter c.
  int judge(const std::string& question, const std::string& predicted, const std::string& gold) {
    if (trim(predicted).empty()) return 0;
    if (config_.desk_judge) {
      return token_f1(predicted, gold) >= config_.judge_f1_threshold ? 1 : 0;
    }
    BackendRequest req;
    req.kind = RequestKind::JUDGE;
    req.question = question;
    req.prompt_text = detail::replace_all(
        detail::replace_all(
            detail::replace_all(config_.prompts.judge, "{question}", question), "{gold}", gold),
        "{predicted}", predicted);
    try {
      BackendResponse resp = execute_with_retries(req);
      accounting_.charge_judge(resp.calls_charged);
      std::string t = trim(resp.text);
      return (!t.empty() && t[0] == '1') ? 1 : 0;
    } catch (const BackendError&) {
      return 0;  // judging degrades, never aborts evaluation
    }
  }

  std::string cache_key(const BackendRequest& request) const {
    std::uint64_t h = fnv1a64(request.prompt_text);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s_%016llx_t%.3f_", request_kind_name(request.kind),
                  static_cast<unsigned long long>(h), request.temperature);
    return std::string(buf) + transport_->model_id();
  }

 private:
  static void require_nonempty(const std::string& question, const char* op) {
    if (trim(question).empty()) {
      throw std::invalid_argument(std::string(op) + ": question must be nonempty");
    }
  }

  void charge(RequestKind kind, int calls) {
    if (calls <= 0) return;
    if (kind == RequestKind::JUDGE) {
      accounting_.charge_judge(calls);
    } else {
      accounting_.charge_inference(calls);
    }
  }

  BackendResponse execute_with_retries(const BackendRequest& request) {
    int attempts = std::max(1, config_.max_attempts);
    for (int attempt = 1;; ++attempt) {
      try {
        BackendResponse r = transport_->execute(request);
        r.calls_charged = 1;  // one completed request, retries never multiply
        return r;
      } catch (const DecompositionError&) {
        throw;
      } catch (const BackendError&) {
        if (attempt >= attempts) throw;
        if (config_.retry_base_delay_ms > 0) {
          std::this_thread::sleep_for(std::chrono::milliseconds(
              config_.retry_base_delay_ms * (1 << (attempt - 1))));
        }
      }
    }
  }

  std::shared_ptr<Transport> transport_;
  ServiceConfig config_;
  std::shared_ptr<ResponseCache> cache_;
  CallAccounting accounting_;
};

}  // namespace dyntree
