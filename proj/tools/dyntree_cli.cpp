// Command-line front end: world generation, agent training, solver
// evaluation, report comparison, and artifact inspection.
//
// Exit codes: 0 ok, 1 usage, 2 data error, 3 backend error.

#include <filesystem>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dyntree/harness.hpp"
#include "dyntree/http_backend.hpp"

namespace fs = std::filesystem;
using namespace dyntree;

namespace {

const char* variant_name_of(AgentVariant v) { return variant_name(v); }

std::vector<double> parse_mix(const std::string& text) {
  std::vector<double> mix;
  std::string cur;
  for (char c : text + ",") {
    if (c == ',') {
      if (!trim(cur).empty()) mix.push_back(std::stod(trim(cur)));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (mix.empty()) throw CLI::ValidationError("--depth-mix", "expected comma-separated weights");
  return mix;
}

struct DataSource {
  std::string world_path;
  std::string dataset_path;
  std::string dataset_format = "musique_jsonl";
  std::string backend = "sim";
  int k = 5;

  void add_flags(CLI::App* cmd) {
    cmd->add_option("--backend", backend, "Answer backend")
        ->check(CLI::IsMember({"sim", "http"}))
        ->capture_default_str();
    cmd->add_option("--world", world_path, "Synthetic world JSON (sim backend)");
    cmd->add_option("--dataset", dataset_path, "QA dataset path");
    cmd->add_option("--format", dataset_format, "Dataset format")
        ->check(CLI::IsMember({"hotpot_json", "musique_jsonl", "twowiki_json"}))
        ->capture_default_str();
    cmd->add_option("--k", k, "Top-K retrieved passages")
        ->check(CLI::IsMember({3, 5, 7}))
        ->capture_default_str();
  }
};

std::shared_ptr<ResponseCache> make_file_cache() {
  const char* dir = std::getenv("DYNTREE_CACHE_DIR");
  std::string path = dir && *dir ? dir : "dyntree_cache";
  return std::make_shared<FileCache>(path);
}

// Everything a run needs, wired per the requested backend.
struct RunContext {
  std::shared_ptr<const SyntheticWorld> world;  // sim only
  std::unique_ptr<SimRun> sim;
  std::unique_ptr<KnowledgeService> service;    // http only
  std::unique_ptr<Corpus> corpus;               // http only
  std::unique_ptr<HashedEmbedder> embedder;     // http only
  std::vector<QARecord> records;
  SolverEnv env;

  SolverEnv& environment() { return sim ? sim->env() : env; }
};

RunContext make_context(const DataSource& source) {
  RunContext ctx;
  if (source.backend == "sim") {
    if (source.world_path.empty()) {
      throw CLI::ValidationError("--world", "the sim backend needs a world file");
    }
    ctx.world = std::make_shared<const SyntheticWorld>(SyntheticWorld::load(source.world_path));
    RetrievalConfig rc;
    rc.k = source.k;
    ctx.sim = std::make_unique<SimRun>(ctx.world, rc);
    ctx.records = ctx.world->records;
    return ctx;
  }
  if (source.dataset_path.empty()) {
    throw CLI::ValidationError("--dataset", "the http backend needs a dataset");
  }
  ctx.records = load_dataset(source.dataset_path, dataset_format_from_name(source.dataset_format));
  std::vector<Document> docs = corpus_from_records(ctx.records);
  if (docs.empty()) {
    throw DataError("dataset '" + source.dataset_path +
                    "' carries no context paragraphs to build a retrieval corpus");
  }
  ctx.corpus = std::make_unique<Corpus>(index(std::move(docs)));
  ctx.embedder = std::make_unique<HashedEmbedder>(HashedEmbedder::kDefaultDim);
  ctx.service = std::make_unique<KnowledgeService>(std::make_shared<HttpChatTransport>(),
                                                   ServiceConfig{}, make_file_cache());
  ctx.env.service = ctx.service.get();
  ctx.env.corpus = ctx.corpus.get();
  ctx.env.embedder = ctx.embedder.get();
  RetrievalConfig rc;
  rc.k = source.k;
  ctx.env.retrieval = rc;
  return ctx;
}

std::vector<QARecord> select_split(const std::vector<QARecord>& records,
                                   const std::string& split) {
  if (split == "all") return records;
  return records_for_split(records, split_from_name(split));
}

int cmd_generate_world(std::uint64_t seed, int questions, const std::string& mix,
                       double rig_fraction, const std::string& out_dir) {
  WorldParams params;
  params.n_questions = questions;
  params.depth_mix = parse_mix(mix);
  params.rig_fraction = rig_fraction;
  SyntheticWorld world = generate_world(seed, params);
  fs::create_directories(out_dir);
  world.save((fs::path(out_dir) / "world.json").string());
  for (Split split : {Split::train, Split::dev, Split::test}) {
    save_records_jsonl(records_for_split(world.records, split),
                       (fs::path(out_dir) / ("records_" + std::string(split_name(split)) +
                                             ".jsonl")).string());
  }
  std::ofstream corpus_out(fs::path(out_dir) / "corpus.jsonl");
  for (const Document& d : world.corpus_docs) {
    corpus_out << nlohmann::json{{"id", d.id}, {"title", d.title}, {"text", d.text}}.dump()
               << "\n";
  }
  std::cout << "world: " << world.records.size() << " questions, " << world.facts.size()
            << " facts, " << world.corpus_docs.size() << " passages -> " << out_dir << "\n";
  return 0;
}

// Training configuration file: JSON with any of variant, reward, episodes,
// seed, epsilon {start,end,decay_fraction}, batch_size, warmup,
// replay_capacity, target_sync_interval. Explicit flags take precedence.
TrainSettings settings_from_config(const std::string& path) {
  nlohmann::json j = nlohmann::json::parse(read_file(path), nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw DataError("train config '" + path + "' is not a JSON object");
  }
  TrainSettings s;
  if (j.contains("variant")) s.variant = variant_from_name(j.at("variant").get<std::string>());
  if (j.contains("reward")) s.reward = RewardConfig::from_name(j.at("reward").get<std::string>());
  s.episodes = j.value("episodes", s.episodes);
  s.seed = j.value("seed", s.seed);
  if (j.contains("epsilon")) {
    const auto& e = j.at("epsilon");
    s.epsilon.start = e.value("start", s.epsilon.start);
    s.epsilon.end = e.value("end", s.epsilon.end);
    s.epsilon.decay_fraction = e.value("decay_fraction", s.epsilon.decay_fraction);
  }
  s.batch_size = j.value("batch_size", s.batch_size);
  s.warmup = j.value("warmup", s.warmup);
  s.replay_capacity = j.value("replay_capacity", s.replay_capacity);
  s.target_sync_interval = j.value("target_sync_interval", s.target_sync_interval);
  return s;
}

int cmd_train(const DataSource& source, const std::string& config_path,
              const CLI::App* cmd, const std::string& variant_name,
              const std::string& reward_name, int episodes, std::uint64_t seed,
              const std::string& split, const std::string& out_dir) {
  RunContext ctx = make_context(source);
  std::vector<QARecord> records = select_split(ctx.records, split);
  if (records.empty()) throw DataError("train: no records in split '" + split + "'");

  TrainSettings settings =
      config_path.empty() ? TrainSettings{} : settings_from_config(config_path);
  if (config_path.empty() || cmd->count("--variant")) {
    settings.variant = variant_from_name(variant_name);
  }
  if (config_path.empty() || cmd->count("--reward")) {
    settings.reward = RewardConfig::from_name(reward_name);
  }
  if (config_path.empty() || cmd->count("--episodes")) settings.episodes = episodes;
  if (config_path.empty() || cmd->count("--seed")) settings.seed = seed;

  TrainResult result = train(settings, records, ctx.environment());

  fs::create_directories(out_dir);
  save_qnet(*result.net, (fs::path(out_dir) / "model.dtqn").string());
  write_file((fs::path(out_dir) / "train_log.csv").string(), result.log_csv);
  write_file((fs::path(out_dir) / "success_rates.json").string(),
             rates_to_json(result.rates).dump(2) + "\n");
  std::cout << "trained " << variant_name_of(settings.variant) << " ("
            << regime_name(settings.reward.name) << ") for " << settings.episodes
            << " episodes on " << records.size() << " records -> " << out_dir << "\n";
  if (result.episodes_failed > 0) {
    std::cout << "warning: " << result.episodes_failed
              << " episodes aborted on backend errors\n";
  }
  return 0;
}

int cmd_eval(const DataSource& source, const std::string& solver_name,
             const std::string& variant_name, const std::string& model_path,
             const std::string& rates_path, const std::string& split, int max_depth,
             std::uint64_t seed, const std::string& out_dir, bool dump_trees) {
  RunContext ctx = make_context(source);
  std::vector<QARecord> records = select_split(ctx.records, split);
  if (records.empty()) throw DataError("eval: no records in split '" + split + "'");
  SolverEnv& env = ctx.environment();

  std::unique_ptr<TrainableQNet> net;
  SuccessRates rates;
  GreedyClassifiers classifiers;
  SolverSpec spec;
  if (solver_name == "rl") {
    if (model_path.empty()) throw CLI::ValidationError("--model", "rl eval needs a checkpoint");
    AgentVariant variant = variant_from_name(variant_name);
    ArchDescriptor expected{variant == AgentVariant::TRANSFORMER ? ArchKind::transformer
                                                                 : ArchKind::mlp,
                            state_dim(variant, env.embedder->dim()),
                            variant_action_count(variant)};
    net = load_qnet_expect(model_path, expected);
    if (!rates_path.empty()) {
      rates = rates_from_json(nlohmann::json::parse(read_file(rates_path)));
    }
    spec = SolverSpec::rl(variant, net.get(), rates, "rl_" + variant_name);
  } else if (solver_name == "exhaustive") {
    spec = SolverSpec::exhaustive(max_depth);
  } else if (solver_name == "greedy") {
    std::vector<QARecord> dev = select_split(ctx.records, "dev");
    if (dev.empty()) {
      throw DataError("eval: the greedy solver needs a dev split for its classifiers");
    }
    classifiers = build_greedy_classifiers(dev, env, seed);
    spec = SolverSpec::greedy(&classifiers, default_greedy_order(classifiers));
  } else {
    spec = SolverSpec::random();
  }

  fs::create_directories(out_dir);
  std::ofstream trace((fs::path(out_dir) / (spec.label + "_trace.jsonl")).string());
  fs::path tree_dir = fs::path(out_dir) / "trees";
  if (dump_trees) fs::create_directories(tree_dir);
  auto sink = [&](const QARecord& record, const SolveOutcome& outcome) {
    write_decision_trace(outcome, trace);
    if (dump_trees && outcome.tree) {
      std::ofstream tree_out(tree_dir / (record.id + ".json"));
      tree_out << tree_to_json(*outcome.tree).dump(2) << "\n";
    }
  };

  EvalReport report = evaluate(spec, records, env, seed, sink);
  write_file((fs::path(out_dir) / (spec.label + "_records.csv")).string(),
             report.per_record_csv());
  write_file((fs::path(out_dir) / (spec.label + "_summary.csv")).string(),
             report.summary_csv());
  std::cout << report.summary_csv();
  return 0;
}

int cmd_compare(const std::string& a_path, const std::string& b_path,
                const std::string& out_path) {
  auto stem = [](const std::string& p) { return fs::path(p).stem().string(); };
  EvalReport a = load_report_csv(a_path, stem(a_path));
  EvalReport b = load_report_csv(b_path, stem(b_path));
  std::string table = compare(a, b);
  if (!out_path.empty()) {
    write_file(out_path, table);
  }
  std::cout << table;
  return 0;
}

int cmd_inspect(const std::string& path) {
  std::string content = read_file(path);
  nlohmann::json doc = nlohmann::json::parse(content, nullptr, false);
  if (!doc.is_discarded() && doc.is_object() && doc.contains("schema") &&
      doc.contains("nodes")) {
    // Reasoning-tree dump: print an indented outline.
    std::map<int, nlohmann::json> by_id;
    for (const auto& n : doc.at("nodes")) by_id[n.at("id").get<int>()] = n;
    std::function<void(int, int)> show = [&](int id, int indent) {
      const nlohmann::json& n = by_id.at(id);
      std::string pad(static_cast<std::size_t>(indent) * 2, ' ');
      std::cout << pad << "[" << id << "] " << n.at("question").get<std::string>();
      if (!n.at("chosen_action").is_null()) {
        std::cout << "  (" << n.at("chosen_action").get<std::string>() << ")";
      }
      if (!n.at("final_answer").is_null()) {
        std::cout << " -> " << n.at("final_answer").get<std::string>();
      }
      std::cout << "\n";
      for (const auto& c : n.at("children")) show(c.get<int>(), indent + 1);
    };
    show(0, 0);
    return 0;
  }
  // Decision trace: one JSON object per line.
  std::istringstream lines(content);
  std::string line;
  std::size_t count = 0;
  long calls = 0;
  while (std::getline(lines, line)) {
    if (trim(line).empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      throw DataError("inspect: '" + path + "' is neither a tree nor a trace");
    }
    std::cout << "node " << j.value("node", -1) << "  " << j.value("action", std::string{"?"})
              << "  calls=" << j.value("calls_delta", 0)
              << "  confidence=" << j.value("confidence", 0.0)
              << (j.value("forced", false) ? "  [forced]" : "") << "\n";
    calls += j.value("calls_delta", 0);
    ++count;
  }
  std::cout << count << " decisions, " << calls << " calls\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic tree-of-thought question answering"};
  app.require_subcommand(1);

  // generate-world
  auto* gen = app.add_subcommand("generate-world", "Generate a synthetic QA world");
  std::uint64_t gen_seed = 0;
  int gen_questions = 100;
  std::string gen_mix = "0.5,0.35,0.15";
  double gen_rig = 0.0;
  std::string gen_out = "world_out";
  gen->add_option("--seed", gen_seed)->capture_default_str();
  gen->add_option("--questions", gen_questions)->capture_default_str();
  gen->add_option("--depth-mix", gen_mix, "Weights for chain depths 1..3")
      ->capture_default_str();
  gen->add_option("--rig-fraction", gen_rig,
                  "Fraction of composite questions with rigged temperature-0 decompositions")
      ->capture_default_str();
  gen->add_option("--out", gen_out)->capture_default_str();

  // train
  auto* tr = app.add_subcommand("train", "Train a DQN agent variant");
  DataSource tr_source;
  tr_source.add_flags(tr);
  std::string tr_variant = "q_only", tr_reward = "balanced", tr_split = "train",
              tr_out = "train_out", tr_config;
  int tr_episodes = 1000;
  std::uint64_t tr_seed = 0;
  tr->add_option("--config", tr_config, "Training configuration JSON");
  tr->add_option("--variant", tr_variant)
      ->check(CLI::IsMember({"q_only", "transformer", "q_cb_ob", "reform", "resample"}))
      ->capture_default_str();
  tr->add_option("--reward", tr_reward)
      ->check(CLI::IsMember({"high", "balanced", "efficiency"}))
      ->capture_default_str();
  tr->add_option("--episodes", tr_episodes)->capture_default_str();
  tr->add_option("--seed", tr_seed)->capture_default_str();
  tr->add_option("--split", tr_split)->capture_default_str();
  tr->add_option("--out", tr_out)->capture_default_str();

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a solver over records");
  DataSource ev_source;
  ev_source.add_flags(ev);
  std::string ev_solver = "rl", ev_variant = "q_only", ev_model, ev_rates,
              ev_split = "test", ev_out = "eval_out";
  int ev_max_depth = 3;
  std::uint64_t ev_seed = 0;
  bool ev_trees = false;
  ev->add_option("--solver", ev_solver)
      ->check(CLI::IsMember({"rl", "exhaustive", "greedy", "random"}))
      ->capture_default_str();
  ev->add_option("--variant", ev_variant)
      ->check(CLI::IsMember({"q_only", "transformer", "q_cb_ob", "reform", "resample"}))
      ->capture_default_str();
  ev->add_option("--model", ev_model, "DTQN checkpoint (rl solver)");
  ev->add_option("--rates", ev_rates, "success_rates.json from training (rl solver)");
  ev->add_option("--split", ev_split)->capture_default_str();
  ev->add_option("--max-depth", ev_max_depth, "Decomposition depth (exhaustive solver)")
      ->capture_default_str();
  ev->add_option("--seed", ev_seed)->capture_default_str();
  ev->add_option("--out", ev_out)->capture_default_str();
  ev->add_flag("--trees", ev_trees, "Dump per-record reasoning trees");

  // compare
  auto* cp = app.add_subcommand("compare", "Accuracy/cost table from two eval reports");
  std::string cp_a, cp_b, cp_out;
  cp->add_option("--a", cp_a, "First per-record CSV")->required();
  cp->add_option("--b", cp_b, "Second per-record CSV")->required();
  cp->add_option("--out", cp_out, "Write the table here as well");

  // inspect
  auto* in = app.add_subcommand("inspect", "Pretty-print a tree JSON or decision trace");
  std::string in_path;
  in->add_option("path", in_path)->required();

  try {
    app.parse(argc, argv);
    if (gen->parsed()) {
      return cmd_generate_world(gen_seed, gen_questions, gen_mix, gen_rig, gen_out);
    }
    if (tr->parsed()) {
      return cmd_train(tr_source, tr_config, tr, tr_variant, tr_reward, tr_episodes,
                       tr_seed, tr_split, tr_out);
    }
    if (ev->parsed()) {
      return cmd_eval(ev_source, ev_solver, ev_variant, ev_model, ev_rates, ev_split,
                      ev_max_depth, ev_seed, ev_out, ev_trees);
    }
    if (cp->parsed()) return cmd_compare(cp_a, cp_b, cp_out);
    if (in->parsed()) return cmd_inspect(in_path);
    return 1;
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const CLI::Error& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const BackendError& e) {
    std::cerr << "backend error: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
