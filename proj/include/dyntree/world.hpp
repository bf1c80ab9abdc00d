#pragma once

// Deterministic synthetic QA world. Questions are relation chains over a
// generated knowledge graph ("What is the R2 of the R1 of E?"); each leaf
// fact is memorized (closed-book answerable), retrievable (present as a
// corpus passage), both, or neither. The optimal action at every node is
// therefore computable by construction, which is what makes the learning
// claims testable at desk scale.
//
// A world can also be rigged: temperature-0 decompositions of flagged
// questions come back wrong and only a resampled (temperature 0.7)
// decomposition is correct.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dyntree/backend.hpp"
#include "dyntree/embedding.hpp"
#include "dyntree/dataset.hpp"
#include "dyntree/errors.hpp"
#include "dyntree/retrieval.hpp"
#include "dyntree/rng.hpp"
#include "dyntree/text.hpp"
#include "dyntree/tree.hpp"

#include <nlohmann/json.hpp>

namespace dyntree {

struct Fact {
  std::string subject;
  std::string relation;
  std::string object;
  bool memorized = false;
  bool retrievable = false;
};

struct ParsedChain {
  std::vector<std::string> relations;  // outermost first
  std::string entity;

  int depth() const { return static_cast<int>(relations.size()); }
};

struct WorldParams {
  int n_questions = 100;
  std::vector<double> depth_mix{0.5, 0.35, 0.15};  // weights for depths 1..3
  // Mask mix over relations: every fact inherits its relation's class, so
  // whether a question is closed-book answerable is predictable from the
  // question text alone (a policy can generalize to unseen entities).
  double p_memorized_only = 0.5;
  double p_retrievable_only = 0.5;
  double p_both = 0.0;
  double p_neither = 0.0;
  double rig_fraction = 0.0;  // applied to composite questions only
  double train_fraction = 0.6;
  double dev_fraction = 0.2;
};

// Token log-prob levels the oracle emits. Correct answers are confident,
// wrong ones are not; this is the separation Fig.-2-style classifiers and
// the confidence features rely on.
struct OracleLogprobs {
  static constexpr double cb_correct = -0.1;
  static constexpr double cb_wrong = -3.0;
  static constexpr double ob_correct = -0.2;
  static constexpr double ob_wrong = -2.5;
  static constexpr double aggregate_correct = -0.15;
  static constexpr double aggregate_wrong = -2.8;
};

inline const char* kUnknownAnswer = "unknown";

class SyntheticWorld {
 public:
  std::uint64_t seed = 0;
  WorldParams params;
  std::vector<std::string> entities;
  std::vector<std::string> relations;
  std::vector<Fact> facts;
  std::vector<QARecord> records;
  std::vector<Document> corpus_docs;
  std::map<std::string, bool> rigged;  // question text -> rigged flag

  const Fact* find_fact(const std::string& subject, const std::string& relation) const {
    auto it = fact_index_.find(subject + "\x1f" + relation);
    if (it == fact_index_.end()) return nullptr;
    return &facts[it->second];
  }

  void rebuild_index() {
    fact_index_.clear();
    for (std::size_t i = 0; i < facts.size(); ++i) {
      fact_index_[facts[i].subject + "\x1f" + facts[i].relation] = i;
    }
  }

  // Accepts the canonical question form and the reformulation templates.
  static std::optional<ParsedChain> parse_question(const std::string& text) {
    std::string s = to_lower(trim(text));
    while (!s.empty() && (s.back() == '?' || s.back() == '.' || s.back() == '!')) {
      s.pop_back();
    }
    s = trim(s);
    static const char* prefixes[] = {"what is the ", "tell me the ", "which entity is the ",
                                     "name the "};
    bool matched = false;
    for (const char* p : prefixes) {
      if (s.rfind(p, 0) == 0) {
        s = s.substr(std::string(p).size());
        matched = true;
        break;
      }
    }
    if (!matched) return std::nullopt;

    ParsedChain chain;
    const std::string sep = " of the ";
    std::size_t pos = 0;
    while (true) {
      std::size_t next = s.find(sep, pos);
      if (next == std::string::npos) break;
      chain.relations.push_back(s.substr(pos, next - pos));
      pos = next + sep.size();
    }
    std::string last = s.substr(pos);  // "<relation> of <entity>"
    std::size_t of = last.find(" of ");
    if (of == std::string::npos) return std::nullopt;
    chain.relations.push_back(last.substr(0, of));
    chain.entity = trim(last.substr(of + 4));
    if (chain.entity.empty()) return std::nullopt;
    for (const auto& r : chain.relations) {
      if (r.empty() || r.find(' ') != std::string::npos) return std::nullopt;
    }
    return chain;
  }

  static std::string question_text(const ParsedChain& chain) {
    std::string s = "What is the ";
    for (std::size_t i = 0; i < chain.relations.size(); ++i) {
      if (i) s += " of the ";
      s += chain.relations[i];
    }
    s += " of " + chain.entity + "?";
    return s;
  }

  // Follows the chain innermost-first through the knowledge graph.
  std::optional<std::string> resolve_gold(const ParsedChain& chain) const {
    std::string cur = chain.entity;
    for (auto it = chain.relations.rbegin(); it != chain.relations.rend(); ++it) {
      const Fact* f = find_fact(cur, *it);
      if (!f) return std::nullopt;
      cur = f->object;
    }
    return cur;
  }

  std::optional<std::string> gold_for_question(const std::string& text) const {
    auto chain = parse_question(text);
    if (!chain) return std::nullopt;
    return resolve_gold(*chain);
  }

  // The constructed optimal action: CHILD for composites, CB for memorized
  // leaf facts, OB for retrievable-not-memorized ones. nullopt when no
  // action can succeed (unknown or neither-masked facts).
  std::optional<ActionKind> optimal_action(const std::string& text) const {
    auto chain = parse_question(text);
    if (!chain) return std::nullopt;
    if (chain->depth() >= 2) return ActionKind::CHILD;
    const Fact* f = find_fact(chain->entity, chain->relations.front());
    if (!f) return std::nullopt;
    if (f->memorized) return ActionKind::CB;
    if (f->retrievable) return ActionKind::OB;
    return std::nullopt;
  }

  bool is_rigged(const std::string& text) const {
    auto it = rigged.find(text);
    return it != rigged.end() && it->second;
  }

  nlohmann::json to_json() const {
    nlohmann::json jfacts = nlohmann::json::array();
    for (const Fact& f : facts) {
      jfacts.push_back({{"s", f.subject},
                        {"r", f.relation},
                        {"o", f.object},
                        {"mem", f.memorized},
                        {"ret", f.retrievable}});
    }
    nlohmann::json jrecs = nlohmann::json::array();
    for (const QARecord& r : records) {
      jrecs.push_back({{"id", r.id},
                       {"question", r.question},
                       {"answer", r.gold_answer},
                       {"split", split_name(r.split)}});
    }
    nlohmann::json jdocs = nlohmann::json::array();
    for (const Document& d : corpus_docs) {
      jdocs.push_back({{"id", d.id}, {"title", d.title}, {"text", d.text}});
    }
    nlohmann::json jrig = nlohmann::json::object();
    for (const auto& [q, flag] : rigged) jrig[q] = flag;
    return nlohmann::json{{"schema", 1},
                          {"seed", seed},
                          {"entities", entities},
                          {"relations", relations},
                          {"facts", std::move(jfacts)},
                          {"records", std::move(jrecs)},
                          {"corpus", std::move(jdocs)},
                          {"rigged", std::move(jrig)}};
  }

  static SyntheticWorld from_json(const nlohmann::json& j) {
    if (!j.contains("schema") || j.at("schema").get<int>() != 1) {
      throw DataError("SyntheticWorld: unsupported schema");
    }
    SyntheticWorld w;
    w.seed = j.value("seed", std::uint64_t{0});
    w.entities = j.value("entities", std::vector<std::string>{});
    w.relations = j.value("relations", std::vector<std::string>{});
    for (const auto& jf : j.at("facts")) {
      w.facts.push_back(Fact{jf.at("s").get<std::string>(), jf.at("r").get<std::string>(),
                             jf.at("o").get<std::string>(), jf.at("mem").get<bool>(),
                             jf.at("ret").get<bool>()});
    }
    for (const auto& jr : j.at("records")) {
      QARecord r;
      r.id = jr.at("id").get<std::string>();
      r.question = jr.at("question").get<std::string>();
      r.gold_answer = jr.at("answer").get<std::string>();
      r.split = split_from_name(jr.at("split").get<std::string>());
      w.records.push_back(std::move(r));
    }
    for (const auto& jd : j.at("corpus")) {
      w.corpus_docs.push_back(Document{jd.at("id").get<std::string>(),
                                       jd.at("title").get<std::string>(),
                                       jd.at("text").get<std::string>()});
    }
    if (j.contains("rigged")) {
      for (auto it = j.at("rigged").begin(); it != j.at("rigged").end(); ++it) {
        w.rigged[it.key()] = it.value().get<bool>();
      }
    }
    w.rebuild_index();
    return w;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("SyntheticWorld::save: cannot open '" + path + "'");
    out << to_json().dump(2) << "\n";
  }

  static SyntheticWorld load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("SyntheticWorld::load: cannot open '" + path + "'");
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw DataError("SyntheticWorld::load: parse error in '" + path + "'");
    return from_json(j);
  }

 private:
  std::map<std::string, std::size_t> fact_index_;
};

namespace detail {

inline const std::vector<std::string>& relation_pool() {
  static const std::vector<std::string> pool = {
      "capital", "river",  "founder", "color",  "leader", "anthem",   "emblem", "mentor",
      "rival",   "patron", "origin",  "motto",  "mascot", "currency", "flower", "harbor"};
  return pool;
}

// Hash buckets (desk embedding dim) occupied by the fixed question
// vocabulary: relations plus template filler words. Entity names avoid
// these buckets so that an unseen entity never masks the relation signal
// a policy has to generalize from.
inline const std::vector<bool>& reserved_buckets() {
  static const std::vector<bool> reserved = [] {
    std::vector<bool> mask(HashedEmbedder::kDefaultDim, false);
    std::vector<std::string> words = relation_pool();
    for (const char* w : {"what", "is", "the", "of", "tell", "me", "which", "entity", "name"}) {
      words.push_back(w);
    }
    for (const std::string& w : words) {
      mask[fnv1a64(w, HashedEmbedder::kHashSeed) % HashedEmbedder::kDefaultDim] = true;
    }
    return mask;
  }();
  return reserved;
}

inline std::string make_entity_name(Rng& rng) {
  static const char* consonants = "bdfgklmnprstvz";
  static const char* vowels = "aeiou";
  for (;;) {
    std::string name;
    int syllables = 3;
    for (int i = 0; i < syllables; ++i) {
      name += consonants[rng.uniform_index(14)];
      name += vowels[rng.uniform_index(5)];
    }
    std::size_t bucket =
        fnv1a64(name, HashedEmbedder::kHashSeed) % HashedEmbedder::kDefaultDim;
    if (!reserved_buckets()[bucket]) return name;
  }
}

}  // namespace detail

inline SyntheticWorld generate_world(std::uint64_t seed, const WorldParams& params) {
  if (params.n_questions < 1) {
    throw std::invalid_argument("generate_world: n_questions must be >= 1");
  }
  if (params.depth_mix.empty() || params.depth_mix.size() > 3) {
    throw std::invalid_argument("generate_world: depth_mix must cover depths 1..3");
  }
  SyntheticWorld world;
  world.seed = seed;
  world.params = params;
  world.relations = detail::relation_pool();

  Rng rng(seed);
  std::map<std::string, bool> used_names;
  auto fresh_entity = [&]() {
    for (;;) {
      std::string name = detail::make_entity_name(rng);
      if (!used_names.count(name)) {
        used_names[name] = true;
        world.entities.push_back(name);
        return name;
      }
    }
  };

  double mix_total = 0.0;
  for (double w : params.depth_mix) mix_total += w;
  if (mix_total <= 0.0) throw std::invalid_argument("generate_world: depth_mix sums to zero");

  // Relation classes: a seeded shuffle of the pool split by the mask mix.
  enum class MaskClass { memorized, retrievable, both, neither };
  std::vector<std::string> shuffled_relations = world.relations;
  rng.shuffle(shuffled_relations);
  double mask_total = params.p_memorized_only + params.p_retrievable_only + params.p_both +
                      params.p_neither;
  if (mask_total <= 0.0) throw std::invalid_argument("generate_world: mask mix sums to zero");
  std::map<std::string, MaskClass> relation_class;
  {
    std::size_t n = shuffled_relations.size();
    auto share = [&](double p) {
      return static_cast<std::size_t>(std::llround(p / mask_total * static_cast<double>(n)));
    };
    std::size_t n_mem = share(params.p_memorized_only);
    std::size_t n_ret = share(params.p_retrievable_only);
    std::size_t n_both = share(params.p_both);
    // Nonzero shares get at least one relation.
    if (params.p_memorized_only > 0.0 && n_mem == 0) n_mem = 1;
    if (params.p_retrievable_only > 0.0 && n_ret == 0) n_ret = 1;
    if (params.p_both > 0.0 && n_both == 0) n_both = 1;
    while (n_mem + n_ret + n_both > n) {
      if (n_both > 0) --n_both;
      else if (n_ret > 1) --n_ret;
      else --n_mem;
    }
    for (std::size_t i = 0; i < n; ++i) {
      MaskClass c = MaskClass::neither;
      if (i < n_mem) c = MaskClass::memorized;
      else if (i < n_mem + n_ret) c = MaskClass::retrievable;
      else if (i < n_mem + n_ret + n_both) c = MaskClass::both;
      else if (params.p_neither == 0.0) c = i % 2 == 0 ? MaskClass::memorized
                                                       : MaskClass::retrievable;
      relation_class[shuffled_relations[i]] = c;
    }
  }

  for (int qi = 0; qi < params.n_questions; ++qi) {
    // Depth drawn from the mix.
    double u = rng.uniform() * mix_total;
    int depth = 1;
    double acc = 0.0;
    for (std::size_t d = 0; d < params.depth_mix.size(); ++d) {
      acc += params.depth_mix[d];
      if (u < acc) {
        depth = static_cast<int>(d) + 1;
        break;
      }
      depth = static_cast<int>(params.depth_mix.size());
    }

    // Fresh chain of facts for this question.
    std::vector<std::string> chain_relations;  // innermost first
    std::string subject = fresh_entity();
    std::string start = subject;
    for (int h = 0; h < depth; ++h) {
      std::string relation = world.relations[rng.uniform_index(world.relations.size())];
      // One object per (subject, relation); re-draw on collision.
      while (true) {
        bool clash = false;
        for (const Fact& f : world.facts) {
          if (f.subject == subject && f.relation == relation) {
            clash = true;
            break;
          }
        }
        if (!clash) break;
        relation = world.relations[rng.uniform_index(world.relations.size())];
      }
      std::string object = fresh_entity();
      Fact fact;
      fact.subject = subject;
      fact.relation = relation;
      fact.object = object;
      switch (relation_class.at(relation)) {
        case MaskClass::memorized: fact.memorized = true; break;
        case MaskClass::retrievable: fact.retrievable = true; break;
        case MaskClass::both:
          fact.memorized = true;
          fact.retrievable = true;
          break;
        case MaskClass::neither: break;
      }
      world.facts.push_back(fact);
      chain_relations.push_back(relation);
      subject = object;
    }

    ParsedChain chain;
    chain.entity = start;
    chain.relations.assign(chain_relations.rbegin(), chain_relations.rend());

    QARecord record;
    record.id = "q" + std::to_string(qi);
    record.question = SyntheticWorld::question_text(chain);
    record.gold_answer = subject;  // end of the chain
    world.records.push_back(record);

    if (depth >= 2 && rng.uniform() < params.rig_fraction) {
      world.rigged[record.question] = true;
    }
  }

  // Split assignment over a shuffled view, so depths balance across splits.
  std::vector<std::size_t> order(world.records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  std::size_t n = order.size();
  std::size_t n_train = static_cast<std::size_t>(std::floor(params.train_fraction * n));
  std::size_t n_dev = static_cast<std::size_t>(std::floor(params.dev_fraction * n));
  for (std::size_t i = 0; i < n; ++i) {
    Split s = i < n_train ? Split::train : (i < n_train + n_dev ? Split::dev : Split::test);
    world.records[order[i]].split = s;
  }

  // One passage per retrievable fact.
  for (std::size_t i = 0; i < world.facts.size(); ++i) {
    const Fact& f = world.facts[i];
    if (!f.retrievable) continue;
    world.corpus_docs.push_back(Document{
        "f" + std::to_string(i), f.subject + " " + f.relation,
        "The " + f.relation + " of " + f.subject + " is " + f.object + "."});
  }

  world.rebuild_index();
  return world;
}

inline SyntheticWorld generate_world(std::uint64_t seed, int n_questions,
                                     std::vector<double> depth_mix) {
  WorldParams params;
  params.n_questions = n_questions;
  params.depth_mix = std::move(depth_mix);
  return generate_world(seed, params);
}

// Deterministic transport over a SyntheticWorld. Responses are a pure
// function of (request, world, seed): no internal RNG state.
class SimulatedOracle final : public Transport {
 public:
  explicit SimulatedOracle(std::shared_ptr<const SyntheticWorld> world)
      : world_(std::move(world)) {
    if (!world_) throw std::invalid_argument("SimulatedOracle: world required");
  }

  std::string model_id() const override { return "sim-oracle"; }

  BackendResponse execute(const BackendRequest& request) override {
    switch (request.kind) {
      case RequestKind::CLOSED_BOOK: return closed_book(request);
      case RequestKind::OPEN_BOOK: return open_book(request);
      case RequestKind::DECOMPOSE: return decompose(request);
      case RequestKind::REFORMULATE: return reformulate(request);
      case RequestKind::AGGREGATE: return aggregate(request);
      case RequestKind::JUDGE: return judge(request);
    }
    throw BackendError("SimulatedOracle: unsupported request kind");
  }

 private:
  static BackendResponse answer(const std::string& text, double mean_logprob) {
    BackendResponse r;
    r.text = text;
    std::size_t n = std::max<std::size_t>(1, tokenize(text).size());
    r.token_logprobs.assign(n, mean_logprob);
    return r;
  }

  // A deterministic hallucination: some other entity, never the gold one.
  std::string distractor(const std::string& question, const std::string& gold) const {
    if (world_->entities.empty()) return kUnknownAnswer;
    std::uint64_t h = fnv1a64(to_lower(question), world_->seed);
    for (std::size_t probe = 0; probe < world_->entities.size(); ++probe) {
      const std::string& cand =
          world_->entities[(h + probe) % world_->entities.size()];
      if (cand != gold) return cand;
    }
    return kUnknownAnswer;
  }

  BackendResponse closed_book(const BackendRequest& req) const {
    auto chain = SyntheticWorld::parse_question(req.question);
    if (chain && chain->depth() == 1) {
      const Fact* f = world_->find_fact(chain->entity, chain->relations.front());
      if (f && f->memorized) return answer(f->object, OracleLogprobs::cb_correct);
      std::string gold = f ? f->object : std::string{};
      return answer(distractor(req.question, gold), OracleLogprobs::cb_wrong);
    }
    auto gold = chain ? world_->resolve_gold(*chain) : std::nullopt;
    return answer(distractor(req.question, gold.value_or("")), OracleLogprobs::cb_wrong);
  }

  BackendResponse open_book(const BackendRequest& req) const {
    auto chain = SyntheticWorld::parse_question(req.question);
    if (chain && chain->depth() == 1) {
      // Answer from a passage that states the needed fact, if retrieved.
      for (const std::string& passage : req.context_passages) {
        auto parsed = parse_passage(passage);
        if (!parsed) continue;
        const auto& [subject, relation, object] = *parsed;
        if (subject == chain->entity && relation == chain->relations.front()) {
          return answer(object, OracleLogprobs::ob_correct);
        }
      }
      const Fact* f = world_->find_fact(chain->entity, chain->relations.front());
      return answer(distractor(req.question, f ? f->object : ""), OracleLogprobs::ob_wrong);
    }
    auto gold = chain ? world_->resolve_gold(*chain) : std::nullopt;
    return answer(distractor(req.question, gold.value_or("")), OracleLogprobs::ob_wrong);
  }

  BackendResponse decompose(const BackendRequest& req) const {
    auto chain = SyntheticWorld::parse_question(req.question);
    BackendResponse r;
    if (!chain || chain->depth() == 1) {
      r.text = "1. " + req.question;  // atomic: decomposes to itself
      r.token_logprobs = {-0.1};
      return r;
    }
    bool rig = world_->is_rigged(req.question) && req.temperature == 0.0;
    ParsedChain inner;
    inner.entity = chain->entity;
    inner.relations.assign(chain->relations.begin() + 1, chain->relations.end());
    std::string sub1;
    if (rig) {
      // Wrong decomposition: the inner chain is grounded at a phantom
      // entity, so its sub-answers cannot reach the gold answer.
      ParsedChain ghost = inner;
      ghost.entity =
          "phantom" + std::to_string(fnv1a64(req.question, world_->seed) % 997);
      sub1 = SyntheticWorld::question_text(ghost);
    } else {
      sub1 = SyntheticWorld::question_text(inner);
    }
    std::string sub2 = "What is the " + chain->relations.front() + " of #1?";
    r.text = "1. " + sub1 + "\n2. " + sub2;
    r.token_logprobs = {-0.1, -0.1};
    return r;
  }

  BackendResponse reformulate(const BackendRequest& req) const {
    auto chain = SyntheticWorld::parse_question(req.question);
    BackendResponse r;
    if (!chain) {
      r.text = req.question;
      r.token_logprobs = {-0.5};
      return r;
    }
    std::string body = SyntheticWorld::question_text(*chain);
    body = body.substr(std::string("What is the ").size());
    body.pop_back();  // trailing '?'
    std::uint64_t h = fnv1a64(to_lower(req.question), world_->seed ^ 0x5eedULL);
    const std::string forms[3] = {"Tell me the " + body + ".",
                                  "Which entity is the " + body + "?",
                                  "Name the " + body + "."};
    r.text = forms[h % 3];
    r.token_logprobs = {-0.3};
    return r;
  }

  BackendResponse aggregate(const BackendRequest& req) const {
    if (req.qa_pairs.empty()) {
      throw BackendError("SimulatedOracle: aggregate with no child pairs");
    }
    // The final sub-question answers the full question once placeholders
    // are resolved, so aggregation returns the last child's answer.
    std::string result = trim(req.qa_pairs.back().second);
    auto gold = world_->gold_for_question(req.question);
    bool correct = gold && to_lower(result) == to_lower(*gold);
    return answer(result, correct ? OracleLogprobs::aggregate_correct
                                  : OracleLogprobs::aggregate_wrong);
  }

  BackendResponse judge(const BackendRequest& req) const {
    // Extract gold/predicted from the rendered judge prompt.
    std::string gold = extract_line(req.prompt_text, "Gold answer: ");
    std::string predicted = extract_line(req.prompt_text, "Predicted answer: ");
    BackendResponse r;
    r.text = token_f1(predicted, gold) >= 0.6 ? "1" : "0";
    r.token_logprobs = {-0.05};
    return r;
  }

  static std::string extract_line(const std::string& text, const std::string& prefix) {
    std::size_t pos = text.find(prefix);
    if (pos == std::string::npos) return "";
    std::size_t start = pos + prefix.size();
    std::size_t end = text.find('\n', start);
    return trim(text.substr(start, end == std::string::npos ? std::string::npos : end - start));
  }

  static std::optional<std::tuple<std::string, std::string, std::string>> parse_passage(
      const std::string& passage) {
    // Canonical world passages read "The <relation> of <subject> is <object>."
    std::string s = to_lower(trim(passage));
    if (s.rfind("the ", 0) != 0) return std::nullopt;
    s = s.substr(4);
    if (!s.empty() && s.back() == '.') s.pop_back();
    std::size_t of = s.find(" of ");
    std::size_t is = s.find(" is ");
    if (of == std::string::npos || is == std::string::npos || is < of) return std::nullopt;
    std::string relation = s.substr(0, of);
    std::string subject = s.substr(of + 4, is - of - 4);
    std::string object = trim(s.substr(is + 4));
    if (relation.empty() || subject.empty() || object.empty()) return std::nullopt;
    return std::make_tuple(subject, relation, object);
  }

  std::shared_ptr<const SyntheticWorld> world_;
};

}  // namespace dyntree
