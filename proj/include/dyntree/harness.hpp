#pragma once

// Training and evaluation loops, report generation, and the simulated-run
// bundle that wires a synthetic world into a solver environment. All report
// output is CSV, formatted deterministically so seeded runs are
// byte-reproducible.

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "dyntree/agent.hpp"
#include "dyntree/dataset.hpp"
#include "dyntree/solvers.hpp"
#include "dyntree/world.hpp"

namespace dyntree {

namespace detail {

inline std::string fmt_double(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return std::string(buf);
}

inline std::string csv_field(const std::string& value) {
  if (value.find_first_of(",\"\n") == std::string::npos) return value;
  std::string out = "\"";
  for (char c : value) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

}  // namespace detail

// Bundles a synthetic world with its oracle, service, corpus and embedder,
// exposing a ready SolverEnv.
class SimRun {
 public:
  explicit SimRun(std::shared_ptr<const SyntheticWorld> world, RetrievalConfig retrieval = {},
                  ServiceConfig service_config = desk_config(),
                  std::shared_ptr<ResponseCache> cache = nullptr)
      : world_(std::move(world)),
        corpus_(index(world_->corpus_docs.empty()
                          ? std::vector<Document>{{"empty", "", "placeholder"}}
                          : world_->corpus_docs)),
        service_(std::make_unique<KnowledgeService>(std::make_shared<SimulatedOracle>(world_),
                                                    service_config, std::move(cache))) {
    env_.service = service_.get();
    env_.corpus = &corpus_;
    env_.retrieval = retrieval;
    env_.embedder = &embedder_;
  }

  SimRun(const SimRun&) = delete;
  SimRun& operator=(const SimRun&) = delete;

  static ServiceConfig desk_config() {
    ServiceConfig config;
    config.retry_base_delay_ms = 0;
    return config;
  }

  const SyntheticWorld& world() const { return *world_; }
  KnowledgeService& service() { return *service_; }
  const Corpus& corpus() const { return corpus_; }
  const EmbeddingProvider& embedder() const { return embedder_; }
  SolverEnv& env() { return env_; }

 private:
  std::shared_ptr<const SyntheticWorld> world_;
  Corpus corpus_;
  HashedEmbedder embedder_{HashedEmbedder::kDefaultDim};
  std::unique_ptr<KnowledgeService> service_;
  SolverEnv env_;
};

inline std::vector<QARecord> records_for_split(const std::vector<QARecord>& records,
                                               Split split) {
  std::vector<QARecord> out;
  for (const QARecord& r : records) {
    if (r.split == split) out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainSettings {
  AgentVariant variant = AgentVariant::Q_ONLY;
  RewardConfig reward = RewardConfig::balanced();
  int episodes = 1000;
  std::uint64_t seed = 0;
  EpsilonSchedule epsilon;
  std::size_t replay_capacity = 10000;
  std::size_t batch_size = 32;
  std::size_t warmup = 500;  // replay transitions before learning starts
  long target_sync_interval = 250;
  AdamOptimizer::Config adam;
};

struct TrainResult {
  std::unique_ptr<TrainableQNet> net;
  SuccessRates rates;
  std::string log_csv;  // episode,loss,epsilon,reward,calls
  int episodes_failed = 0;
};

inline std::unique_ptr<TrainableQNet> make_variant_net(AgentVariant variant, int embedding_dim,
                                                       std::uint64_t seed) {
  int in = state_dim(variant, embedding_dim);
  int actions = variant_action_count(variant);
  if (variant == AgentVariant::TRANSFORMER) {
    return std::make_unique<TransformerQNet>(in, actions, seed);
  }
  return std::make_unique<MlpQNet>(in, actions, seed);
}

inline TrainResult train(const TrainSettings& settings, const std::vector<QARecord>& records,
                         SolverEnv& env) {
  if (records.empty()) throw std::invalid_argument("train: no training records");
  env.validate();

  TrainResult result;
  result.net = make_variant_net(settings.variant, env.embedder->dim(), settings.seed);
  std::unique_ptr<TrainableQNet> target = result.net->clone();
  ReplayBuffer buffer(settings.replay_capacity, settings.seed + 1);
  AdamOptimizer optimizer(settings.adam);
  Rng rng(settings.seed + 2);
  std::vector<int> full_mask;
  for (int i = 0; i < variant_action_count(settings.variant); ++i) full_mask.push_back(i);

  std::ostringstream log;
  log << "episode,loss,epsilon,reward,calls\n";
  long global_step = 0;

  for (int episode = 0; episode < settings.episodes; ++episode) {
    const QARecord& record = records[rng.uniform_index(records.size())];
    double eps = settings.epsilon.at(episode, settings.episodes);

    RlPolicy policy;
    policy.variant = settings.variant;
    policy.net = result.net.get();
    policy.rates = result.rates;

    RlSolveOptions options;
    options.epsilon = eps;
    options.rng = &rng;
    options.gold = &record.gold_answer;
    options.reward = settings.reward;

    SolveOutcome outcome;
    try {
      outcome = solve_rl(record.question, policy, env, options);
    } catch (const BackendError&) {
      ++result.episodes_failed;
      log << episode << ",nan," << detail::fmt_double(eps) << ",nan,0\n";
      continue;
    }

    double episode_reward = 0.0;
    for (const Transition& t : outcome.transitions) episode_reward += t.reward;

    double loss_sum = 0.0;
    int loss_count = 0;
    for (Transition& t : outcome.transitions) {
      buffer.push(std::move(t));
      if (buffer.size() >= settings.warmup && buffer.size() >= settings.batch_size) {
        loss_sum += train_step(*result.net, *target, buffer, settings.batch_size, optimizer,
                               settings.reward, full_mask);
        ++loss_count;
        ++global_step;
        sync_target(*result.net, *target, global_step, settings.target_sync_interval);
      }
    }

    int correct = env.service->judge(record.question, outcome.final_answer, record.gold_answer);
    for (const DecisionRecord& rec : outcome.decisions) {
      result.rates = update_success_rate(result.rates, rec.action, correct);
    }

    log << episode << ',' << detail::fmt_double(loss_count ? loss_sum / loss_count : 0.0)
        << ',' << detail::fmt_double(eps) << ',' << detail::fmt_double(episode_reward) << ','
        << outcome.total_calls << "\n";
  }
  result.log_csv = log.str();
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct SolverSpec {
  enum class Kind { rl, exhaustive, greedy, random };
  Kind kind = Kind::rl;
  std::string label = "rl";

  // kind == rl
  AgentVariant variant = AgentVariant::Q_ONLY;
  const QNet* net = nullptr;
  SuccessRates rates;

  // kind == exhaustive
  int max_depth = 3;

  // kind == greedy
  const GreedyClassifiers* classifiers = nullptr;
  GreedyOrder order;

  static SolverSpec rl(AgentVariant variant, const QNet* net, SuccessRates rates,
                       std::string label = "rl") {
    SolverSpec s;
    s.kind = Kind::rl;
    s.variant = variant;
    s.net = net;
    s.rates = std::move(rates);
    s.label = std::move(label);
    return s;
  }
  static SolverSpec exhaustive(int max_depth, std::string label = "exhaustive") {
    SolverSpec s;
    s.kind = Kind::exhaustive;
    s.max_depth = max_depth;
    s.label = std::move(label);
    return s;
  }
  static SolverSpec greedy(const GreedyClassifiers* classifiers, GreedyOrder order,
                           std::string label = "greedy") {
    SolverSpec s;
    s.kind = Kind::greedy;
    s.classifiers = classifiers;
    s.order = order;
    s.label = std::move(label);
    return s;
  }
  static SolverSpec random(std::string label = "random") {
    SolverSpec s;
    s.kind = Kind::random;
    s.label = std::move(label);
    return s;
  }
};

struct EvalRow {
  std::string id;
  std::string answer;
  std::string gold;
  int correct = 0;
  long calls = 0;
};

struct EvalReport {
  std::string solver;
  double accuracy = 0.0;
  long total_calls = 0;
  double mean_calls_per_question = 0.0;
  std::map<ActionKind, long> method_usage;
  std::vector<EvalRow> rows;

  std::string per_record_csv() const {
    std::ostringstream out;
    out << "id,correct,calls,answer,gold\n";
    for (const EvalRow& r : rows) {
      out << detail::csv_field(r.id) << ',' << r.correct << ',' << r.calls << ','
          << detail::csv_field(r.answer) << ',' << detail::csv_field(r.gold) << "\n";
    }
    return out.str();
  }

  std::string summary_csv() const {
    std::ostringstream out;
    out << "solver,accuracy,total_calls,mean_calls_per_question\n";
    out << solver << ',' << detail::fmt_double(accuracy) << ',' << total_calls << ','
        << detail::fmt_double(mean_calls_per_question) << "\n";
    return out.str();
  }
};

// Runs the named solver over every record (epsilon = 0 for RL policies),
// judging answers and aggregating call counts. Per-record failures count
// as incorrect with their calls included. The optional sink receives every
// outcome (used for trace emission).
inline EvalReport evaluate(
    const SolverSpec& spec, const std::vector<QARecord>& records, SolverEnv& env,
    std::uint64_t seed,
    const std::function<void(const QARecord&, const SolveOutcome&)>& sink = {}) {
  env.validate();
  EvalReport report;
  report.solver = spec.label;
  Rng rng(seed);
  long correct_count = 0;

  for (const QARecord& record : records) {
    std::uint64_t before = env.service->accounting().inference_calls();
    EvalRow row;
    row.id = record.id;
    row.gold = record.gold_answer;
    try {
      SolveOutcome outcome;
      switch (spec.kind) {
        case SolverSpec::Kind::rl: {
          RlPolicy policy;
          policy.variant = spec.variant;
          policy.net = spec.net;
          policy.rates = spec.rates;
          RlSolveOptions options;  // epsilon 0: greedy policy
          outcome = solve_rl(record.question, policy, env, options);
          break;
        }
        case SolverSpec::Kind::exhaustive:
          outcome = solve_exhaustive(record.question, env, spec.max_depth);
          break;
        case SolverSpec::Kind::greedy:
          if (!spec.classifiers) {
            throw std::invalid_argument("evaluate: greedy spec without classifiers");
          }
          outcome = solve_greedy(record.question, *spec.classifiers, spec.order, env);
          break;
        case SolverSpec::Kind::random:
          outcome = solve_random(record.question, env, rng);
          break;
      }
      std::uint64_t delta = env.service->accounting().inference_calls() - before;
      if (static_cast<long>(delta) != outcome.total_calls) {
        throw std::logic_error("evaluate: outcome total_calls diverges from backend counter");
      }
      row.answer = outcome.final_answer;
      row.calls = outcome.total_calls;
      row.correct = env.service->judge(record.question, outcome.final_answer,
                                       record.gold_answer);
      for (const auto& [action, count] : outcome.method_usage) {
        report.method_usage[action] += count;
      }
      if (sink) sink(record, outcome);
    } catch (const BackendError&) {
      row.calls = static_cast<long>(env.service->accounting().inference_calls() - before);
      row.correct = 0;
      row.answer.clear();
    }
    correct_count += row.correct;
    report.total_calls += row.calls;
    report.rows.push_back(std::move(row));
  }

  if (!records.empty()) {
    report.accuracy = static_cast<double>(correct_count) / static_cast<double>(records.size());
    report.mean_calls_per_question =
        static_cast<double>(report.total_calls) / static_cast<double>(records.size());
  }
  return report;
}

// Accuracy/cost rows for two reports over the same record set.
inline std::string compare(const EvalReport& a, const EvalReport& b) {
  auto ids = [](const EvalReport& r) {
    std::vector<std::string> out;
    for (const EvalRow& row : r.rows) out.push_back(row.id);
    return out;
  };
  if (ids(a) != ids(b)) {
    throw DataError("compare: reports cover different record sets");
  }
  std::ostringstream out;
  out << "solver,accuracy,total_calls\n";
  for (const EvalReport* r : {&a, &b}) {
    out << r->solver << ',' << detail::fmt_double(r->accuracy) << ',' << r->total_calls
        << "\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Greedy classifier training data: per-strategy (features, correct) pairs
// collected by running each strategy over dev records.
// ---------------------------------------------------------------------------

inline GreedyClassifiers build_greedy_classifiers(const std::vector<QARecord>& dev_records,
                                                  SolverEnv& env, std::uint64_t seed) {
  env.validate();
  std::map<ActionKind, std::vector<LabeledFeatures>> data;

  for (const QARecord& record : dev_records) {
    StrategyResult cb = detail::run_cb(env, record.question);
    data[ActionKind::CB].push_back(
        {reliability_features(cb),
         env.service->judge(record.question, cb.answer_text, record.gold_answer)});

    StrategyResult ob = detail::run_ob(env, record.question);
    data[ActionKind::OB].push_back(
        {reliability_features(ob),
         env.service->judge(record.question, ob.answer_text, record.gold_answer)});

    // Child strategy sample: one decomposition layer, children answered by
    // the more confident of CB/OB, then aggregation.
    try {
      std::vector<std::string> subs = env.service->decompose(record.question, 0.0);
      if (subs.size() <= 1) continue;
      std::vector<std::pair<std::string, std::string>> pairs;
      for (const std::string& sub : subs) {
        std::string resolved = sub;
        for (std::size_t k = 0; k < pairs.size(); ++k) {
          std::string placeholder = "#" + std::to_string(k + 1);
          std::size_t pos;
          while ((pos = resolved.find(placeholder)) != std::string::npos) {
            resolved.replace(pos, placeholder.size(), pairs[k].second);
          }
        }
        StrategyResult sub_cb = detail::run_cb(env, resolved);
        StrategyResult sub_ob = detail::run_ob(env, resolved);
        pairs.emplace_back(resolved, sub_ob.confidence > sub_cb.confidence
                                         ? sub_ob.answer_text
                                         : sub_cb.answer_text);
      }
      StrategyResult agg = env.service->aggregate_children(record.question, pairs);
      data[ActionKind::CHILD].push_back(
          {reliability_features(agg),
           env.service->judge(record.question, agg.answer_text, record.gold_answer)});
    } catch (const BackendError&) {
      continue;
    }
  }

  GreedyClassifiers out;
  std::uint64_t salt = 0;
  for (auto& [action, records] : data) {
    if (records.size() >= 20) {
      out.per_strategy[action] = train_reliability(records, seed + salt);
    }
    ++salt;
  }
  return out;
}

// Rebuilds a report from a per-record CSV written by per_record_csv().
inline EvalReport load_report_csv(const std::string& path, std::string label) {
  std::ifstream in(path);
  if (!in) throw DataError("load_report_csv: cannot open '" + path + "'");
  EvalReport report;
  report.solver = std::move(label);
  std::string line;
  bool header = true;
  long correct = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    std::vector<std::string> fields = detail::split_csv_line(line);
    if (fields.size() < 5) {
      throw DataError("load_report_csv: malformed row in '" + path + "'");
    }
    EvalRow row;
    row.id = fields[0];
    row.correct = std::stoi(fields[1]);
    row.calls = std::stol(fields[2]);
    row.answer = fields[3];
    row.gold = fields[4];
    correct += row.correct;
    report.total_calls += row.calls;
    report.rows.push_back(std::move(row));
  }
  if (!report.rows.empty()) {
    report.accuracy = static_cast<double>(correct) / static_cast<double>(report.rows.size());
    report.mean_calls_per_question =
        static_cast<double>(report.total_calls) / static_cast<double>(report.rows.size());
  }
  return report;
}

inline nlohmann::json rates_to_json(const SuccessRates& rates) {
  nlohmann::json j = nlohmann::json::object();
  for (int a = 0; a < kActionKindCount; ++a) {
    ActionKind action = static_cast<ActionKind>(a);
    j[action_name(action)] = {{"rate", rates.rate(action)}, {"count", rates.count(action)}};
  }
  return j;
}

inline SuccessRates rates_from_json(const nlohmann::json& j) {
  SuccessRates rates;
  for (int a = 0; a < kActionKindCount; ++a) {
    ActionKind action = static_cast<ActionKind>(a);
    const char* name = action_name(action);
    if (!j.contains(name)) continue;
    rates.entries[static_cast<std::size_t>(a)].rate = j.at(name).at("rate").get<double>();
    rates.entries[static_cast<std::size_t>(a)].count = j.at(name).at("count").get<int>();
  }
  return rates;
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("write_file: cannot open '" + path + "' for writing");
  out << content;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("read_file: cannot open '" + path + "'");
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

}  // namespace dyntree
