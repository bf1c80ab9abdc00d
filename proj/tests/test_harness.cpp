#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <memory>

#include "dyntree/harness.hpp"

using namespace dyntree;

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("dyntree_harness_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

std::shared_ptr<const SyntheticWorld> make_world(std::uint64_t seed, WorldParams params) {
  return std::make_shared<const SyntheticWorld>(generate_world(seed, params));
}

class ConstantNet final : public QNet {
 public:
  ConstantNet(AgentVariant variant, std::vector<double> q)
      : variant_(variant), q_(std::move(q)) {}
  int input_dim() const override { return state_dim(variant_, 64); }
  int num_actions() const override { return variant_action_count(variant_); }
  std::vector<double> forward(std::span<const double>) const override { return q_; }

 private:
  AgentVariant variant_;
  std::vector<double> q_;
};

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("load_dataset: hotpot-style JSON arrays") {
  TempDir dir;
  std::string path = dir.file("hotpot.json");
  write_file(path, R"json([
    {"_id":"h1","question":"Who wrote X?","answer":"Ann",
     "context":[["X (book)",["X is a book.","It was written by Ann."]]]},
    {"_id":"h2","question":"Where is Y?","answer":"Z","context":[]}
  ])json");
  auto records = load_dataset(path, DatasetFormat::hotpot_json);
  REQUIRE(records.size() == 2);
  CHECK(records[0].id == "h1");
  CHECK(records[0].question == "Who wrote X?");
  CHECK(records[0].gold_answer == "Ann");
  REQUIRE(records[0].context.size() == 1);
  CHECK(records[0].context[0].first == "X (book)");
  CHECK(records[0].context[0].second == "X is a book.It was written by Ann.");

  auto docs = corpus_from_records(records);
  REQUIRE(docs.size() == 1);
  CHECK(docs[0].id == "h1#0");
}

TEST_CASE("load_dataset: missing answers fail naming the record") {
  TempDir dir;
  std::string path = dir.file("broken.json");
  write_file(path, R"([{"_id":"broken-rec","question":"Who?"}])");
  try {
    load_dataset(path, DatasetFormat::hotpot_json);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("broken-rec") != std::string::npos);
  }
}

TEST_CASE("load_dataset: musique JSON-lines round-trips exactly") {
  TempDir dir;
  std::string path = dir.file("musique.jsonl");
  write_file(path,
             R"({"id":"m1","question":"Q1?","answer":"A1","paragraphs":[{"title":"T","paragraph_text":"P"}]})"
             "\n"
             R"({"id":"m2","question":"Q2?","answer":"A2","paragraphs":[]})"
             "\n");
  auto records = load_dataset(path, DatasetFormat::musique_jsonl);
  REQUIRE(records.size() == 2);
  CHECK(records[1].id == "m2");

  // Re-serialize, reload, compare field by field.
  std::string rt = dir.file("roundtrip.jsonl");
  save_records_jsonl(records, rt);
  auto again = load_dataset(rt, DatasetFormat::musique_jsonl);
  REQUIRE(again.size() == records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(again[i].id == records[i].id);
    CHECK(again[i].question == records[i].question);
    CHECK(again[i].gold_answer == records[i].gold_answer);
    CHECK(again[i].context == records[i].context);
    CHECK(again[i].split == records[i].split);
  }

  // And a second serialization is byte-identical.
  std::string rt2 = dir.file("roundtrip2.jsonl");
  save_records_jsonl(again, rt2);
  CHECK(read_file(rt) == read_file(rt2));
}

TEST_CASE("load_dataset: 2wiki uses the hotpot array shape") {
  TempDir dir;
  std::string path = dir.file("wiki.json");
  write_file(path, R"([{"_id":"w1","question":"Q?","answer":"A",
                        "context":[["Title",["Sentence."]]]}])");
  auto records = load_dataset(path, DatasetFormat::twowiki_json);
  REQUIRE(records.size() == 1);
  CHECK(records[0].id == "w1");
}

TEST_CASE("training on a zero-episode budget returns an untouched log") {
  WorldParams params;
  params.n_questions = 10;
  params.depth_mix = {1.0};
  SimRun run(make_world(4, params));
  TrainSettings settings;
  settings.episodes = 0;
  settings.seed = 1;
  TrainResult result = train(settings, run.world().records, run.env());
  CHECK(result.log_csv == "episode,loss,epsilon,reward,calls\n");
  REQUIRE(result.net != nullptr);
  // Fresh net equals a same-seeded construction (no training happened).
  MlpQNet fresh(state_dim(AgentVariant::Q_ONLY, 64), 3, settings.seed);
  CHECK(result.net->params() == fresh.params());
}

TEST_CASE("training is bit-reproducible under a fixed seed") {
  WorldParams params;
  params.n_questions = 20;
  params.depth_mix = {0.7, 0.3};
  TrainSettings settings;
  settings.episodes = 40;
  settings.seed = 11;
  settings.warmup = 16;
  settings.batch_size = 8;

  SimRun run_a(make_world(6, params));
  TrainResult a = train(settings, run_a.world().records, run_a.env());
  SimRun run_b(make_world(6, params));
  TrainResult b = train(settings, run_b.world().records, run_b.env());

  CHECK(a.log_csv == b.log_csv);
  CHECK(a.net->params() == b.net->params());
  CHECK(a.episodes_failed == 0);
}

TEST_CASE("evaluate: correct-by-construction policy reaches accuracy 1.0") {
  WorldParams params;
  params.n_questions = 20;
  params.depth_mix = {1.0};
  params.p_memorized_only = 1.0;
  params.p_retrievable_only = 0.0;
  SimRun run(make_world(12, params));
  ConstantNet cb_net(AgentVariant::Q_ONLY, {1.0, 0.0, -1.0});
  EvalReport report = evaluate(SolverSpec::rl(AgentVariant::Q_ONLY, &cb_net, {}, "cb_policy"),
                               run.world().records, run.env(), 0);
  CHECK(report.accuracy == doctest::Approx(1.0));
  CHECK(report.rows.size() == 20);
  CHECK(report.total_calls == 20);
  CHECK(report.mean_calls_per_question == doctest::Approx(1.0));

  // Accuracy equals an independent recount over the per-record rows.
  long recount = 0;
  for (const EvalRow& row : report.rows) recount += row.correct;
  CHECK(report.accuracy ==
        doctest::Approx(static_cast<double>(recount) / report.rows.size()));
}

TEST_CASE("evaluate: wrong-by-construction policy scores zero") {
  WorldParams params;
  params.n_questions = 15;
  params.depth_mix = {1.0};
  params.p_memorized_only = 0.0;
  params.p_retrievable_only = 1.0;  // nothing memorized: CB always hallucinates
  SimRun run(make_world(13, params));
  ConstantNet cb_net(AgentVariant::Q_ONLY, {1.0, 0.0, -1.0});
  EvalReport report = evaluate(SolverSpec::rl(AgentVariant::Q_ONLY, &cb_net, {}, "cb_policy"),
                               run.world().records, run.env(), 0);
  CHECK(report.accuracy == doctest::Approx(0.0));
}

TEST_CASE("evaluate emits deterministic CSV bytes") {
  WorldParams params;
  params.n_questions = 25;
  params.depth_mix = {0.6, 0.4};
  SimRun run_a(make_world(21, params));
  SimRun run_b(make_world(21, params));
  EvalReport a = evaluate(SolverSpec::exhaustive(3), run_a.world().records, run_a.env(), 7);
  EvalReport b = evaluate(SolverSpec::exhaustive(3), run_b.world().records, run_b.env(), 7);
  CHECK(a.per_record_csv() == b.per_record_csv());
  CHECK(a.summary_csv() == b.summary_csv());
}

TEST_CASE("greedy beats exhaustive on mean calls at matched records") {
  WorldParams params;
  params.n_questions = 150;
  params.depth_mix = {0.6, 0.4};
  SimRun run(make_world(33, params));
  auto dev = records_for_split(run.world().records, Split::dev);
  auto test = records_for_split(run.world().records, Split::test);
  REQUIRE(dev.size() >= 5);
  REQUIRE(test.size() >= 5);

  GreedyClassifiers classifiers = build_greedy_classifiers(dev, run.env(), 3);
  REQUIRE(classifiers.per_strategy.count(ActionKind::CB));
  GreedyOrder order = default_greedy_order(classifiers);

  EvalReport greedy_report =
      evaluate(SolverSpec::greedy(&classifiers, order), test, run.env(), 0);
  EvalReport exhaustive_report = evaluate(SolverSpec::exhaustive(3), test, run.env(), 0);
  CHECK(greedy_report.mean_calls_per_question < exhaustive_report.mean_calls_per_question);
}

TEST_CASE("compare: identical reports give identical rows, mismatches fail") {
  EvalReport a;
  a.solver = "probtree_style";
  a.accuracy = 0.714;
  a.total_calls = 900;
  a.rows = {{"q1", "x", "x", 1, 9}, {"q2", "y", "z", 0, 9}};
  EvalReport b;
  b.solver = "transformer_style";
  b.accuracy = 0.622;
  b.total_calls = 144;
  b.rows = a.rows;

  std::string table = compare(a, b);
  CHECK(table ==
        "solver,accuracy,total_calls\n"
        "probtree_style,0.714000,900\n"
        "transformer_style,0.622000,144\n");
  CHECK(compare(a, a).find("probtree_style") != std::string::npos);

  EvalReport c = b;
  c.rows[1].id = "q3";
  CHECK_THROWS_AS(compare(a, c), DataError);
}

TEST_CASE("success rates learned during training depart from the prior") {
  WorldParams params;
  params.n_questions = 12;
  params.depth_mix = {1.0};
  params.p_memorized_only = 1.0;
  params.p_retrievable_only = 0.0;
  SimRun run(make_world(14, params));
  TrainSettings settings;
  settings.episodes = 30;
  settings.seed = 2;
  settings.warmup = 1000000;  // learning disabled; rates still update
  TrainResult result = train(settings, run.world().records, run.env());
  bool any_moved = false;
  for (int a = 0; a < kActionKindCount; ++a) {
    if (result.rates.count(static_cast<ActionKind>(a)) > 0) any_moved = true;
  }
  CHECK(any_moved);
}

TEST_CASE("trees built from loaded records keep the question text verbatim") {
  TempDir dir;
  std::string path = dir.file("verbatim.jsonl");
  write_file(path,
             R"({"id":"v1","question":"  Who directed Inception?  ","answer":"Nolan","paragraphs":[]})"
             "\n");
  auto records = load_dataset(path, DatasetFormat::musique_jsonl);
  REQUIRE(records.size() == 1);
  ReasoningTree tree = new_tree(records[0].question);
  CHECK(tree.node(tree.root_id()).question_text == records[0].question);
}

TEST_CASE("every agent variant trains end to end") {
  WorldParams params;
  params.n_questions = 24;
  params.depth_mix = {0.6, 0.4};
  for (AgentVariant variant :
       {AgentVariant::Q_ONLY, AgentVariant::TRANSFORMER, AgentVariant::Q_CB_OB,
        AgentVariant::REFORM, AgentVariant::RESAMPLE}) {
    SimRun run(make_world(19, params));
    TrainSettings settings;
    settings.variant = variant;
    settings.episodes = 12;
    settings.seed = 4;
    settings.warmup = 8;
    settings.batch_size = 8;
    TrainResult result = train(settings, run.world().records, run.env());
    REQUIRE(result.net != nullptr);
    CHECK(result.net->input_dim() == state_dim(variant, 64));
    CHECK(result.net->num_actions() == variant_action_count(variant));
    CHECK(result.episodes_failed == 0);
    // The trained net drives an eval pass without errors.
    EvalReport report = evaluate(
        SolverSpec::rl(variant, result.net.get(), result.rates, variant_name(variant)),
        records_for_split(run.world().records, Split::test), run.env(), 1);
    CHECK(report.rows.size() ==
          records_for_split(run.world().records, Split::test).size());
  }
}

}  // TEST_SUITE
