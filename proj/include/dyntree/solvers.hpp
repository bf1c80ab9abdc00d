#pragma once

// The four end-to-end answerers over a shared execution core:
//   solve_rl         agent-guided dynamic tree construction (one action per
//                    node decision, no exhaustive evaluation)
//   solve_exhaustive reference solver that evaluates CB, OB and
//                    child-aggregation at every node and keeps the most
//                    confident answer
//   solve_greedy     classifier-driven sequential strategy evaluation with
//                    early stopping
//   solve_random     uniform policy baseline
//
// Decomposed sub-questions may reference earlier siblings' answers as #k;
// the solver resolves those before issuing any request. Every backend call
// is attributed to exactly one decision record, so outcome.total_calls
// always equals the backend counter delta (checked on every episode).

#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "dyntree/agent.hpp"
#include "dyntree/backend.hpp"
#include "dyntree/embedding.hpp"
#include "dyntree/forest.hpp"
#include "dyntree/retrieval.hpp"
#include "dyntree/rng.hpp"
#include "dyntree/state_features.hpp"
#include "dyntree/tree.hpp"

#include <nlohmann/json.hpp>

namespace dyntree {

struct SolverEnv {
  KnowledgeService* service = nullptr;
  const Corpus* corpus = nullptr;
  RetrievalConfig retrieval;
  const EmbeddingProvider* embedder = nullptr;
  TreeConfig tree_config;
  int step_budget = 64;          // decisions per episode
  bool probes_cost_reward = true;  // count probe calls in the reward's c

  void validate() const {
    if (!service || !corpus || !embedder) {
      throw std::invalid_argument("SolverEnv: service, corpus and embedder are required");
    }
  }
};

struct DecisionRecord {
  NodeId node_id = 0;
  ActionKind action = ActionKind::CB;
  int calls_delta = 0;   // backend calls owned by this decision
  int probe_calls = 0;   // subset spent on CB/OB state probes
  double confidence = 0.0;
  bool forced = false;   // decomposition-failure fallback
  int owner_step = -1;   // agent step this record's cost belongs to
};

struct SolveOutcome {
  std::string final_answer;
  long total_calls = 0;
  std::vector<DecisionRecord> decisions;
  std::vector<Transition> transitions;  // RL solver only
  std::map<ActionKind, int> method_usage;
  std::optional<ReasoningTree> tree;
};

// Substitutes #k placeholders with earlier siblings' final answers.
inline std::string effective_question(const ReasoningTree& tree, const QuestionNode& node) {
  std::string text = node.question_text;
  if (!node.parent) return text;
  const QuestionNode& parent = tree.node(*node.parent);
  for (int k = static_cast<int>(parent.children.size()); k >= 1; --k) {
    std::string placeholder = "#" + std::to_string(k);
    if (text.find(placeholder) == std::string::npos) continue;
    const QuestionNode& sibling = tree.node(parent.children[static_cast<std::size_t>(k - 1)]);
    if (!sibling.final_answer) continue;
    std::size_t pos = 0;
    while ((pos = text.find(placeholder, pos)) != std::string::npos) {
      text.replace(pos, placeholder.size(), *sibling.final_answer);
      pos += sibling.final_answer->size();
    }
  }
  return text;
}

namespace detail {

struct Retrieved {
  std::vector<std::string> passages;
  std::vector<std::string> ids;
};

inline Retrieved retrieve(const SolverEnv& env, const std::string& question) {
  Retrieved out;
  for (const ScoredDoc& hit : top_k(*env.corpus, question, env.retrieval)) {
    out.ids.push_back(hit.doc_id);
    out.passages.push_back(env.corpus->documents[env.corpus->index_of(hit.doc_id)].text);
  }
  return out;
}

inline StrategyResult run_cb(const SolverEnv& env, const std::string& question) {
  return env.service->answer_closed_book(question);
}

inline StrategyResult run_ob(const SolverEnv& env, const std::string& question) {
  Retrieved r = retrieve(env, question);
  return env.service->answer_open_book(question, r.passages, r.ids);
}

inline StrategyResult empty_result() {
  StrategyResult r;
  r.answer_text.clear();
  r.confidence = kConfidenceSentinel;
  r.calls_used = 0;
  return r;
}

// Shared decision-loop state for the RL and random solvers.
class EpisodeRunner {
 public:
  EpisodeRunner(const std::string& question, AgentVariant variant, SolverEnv& env)
      : env_(env),
        variant_(variant),
        tree_(new_tree(question, env.tree_config)),
        start_calls_(env.service->accounting().inference_calls()) {
    env_.validate();
  }

  // selector(state, allowed_local_indices) -> chosen local action index.
  using Selector = std::function<int(const StateVector&, const std::vector<int>&)>;

  void set_rates(SuccessRates rates) { rates_ = std::move(rates); }

  SolveOutcome run(const Selector& selector, bool collect_transitions,
                   const std::string* gold, const RewardConfig& reward) {
    int steps = 0;
    while (steps < env_.step_budget) {
      std::optional<NodeId> ready = find_ready();
      if (!ready) break;
      decide_at(*ready, selector);
      sweep();
      ++steps;
    }
    return finish(collect_transitions, gold, reward);
  }

 private:
  // First node in decision order whose children are all answered.
  std::optional<NodeId> find_ready() const {
    for (NodeId id : decision_order(tree_)) {
      const QuestionNode& n = tree_.node(id);
      bool ready = true;
      for (NodeId c : n.children) {
        if (!tree_.node(c).final_answer) {
          ready = false;
          break;
        }
      }
      if (ready) return id;
    }
    return std::nullopt;
  }

  std::vector<int> dynamic_mask(const QuestionNode& node) const {
    const auto& actions = variant_actions(variant_);
    bool has_children = !node.children.empty();
    bool can_deepen = node.depth < env_.tree_config.max_depth;
    std::vector<int> mask;
    for (std::size_t i = 0; i < actions.size(); ++i) {
      bool allowed = false;
      switch (actions[i]) {
        case ActionKind::CB:
        case ActionKind::OB:
        case ActionKind::CB_REFORMULATE:
        case ActionKind::OB_REFORMULATE:
          allowed = true;
          break;
        case ActionKind::CHILD:
          allowed = has_children || can_deepen;  // with children: accept aggregation
          break;
        case ActionKind::CHILD_REFORMULATE:
          allowed = !has_children && can_deepen;
          break;
        case ActionKind::RESAMPLE_CHILDREN:
          allowed = has_children && node.resample_count < env_.tree_config.max_resamples;
          break;
      }
      if (allowed) mask.push_back(static_cast<int>(i));
    }
    return mask;
  }

  void ensure_probes(NodeId id, const std::string& eq, DecisionRecord& rec) {
    if (!variant_has_probe_block(variant_)) return;
    QuestionNode& node = tree_.node(id);
    if (!node.strategy_results.count(ActionKind::CB)) {
      StrategyResult cb = run_cb(env_, eq);
      rec.calls_delta += cb.calls_used;
      rec.probe_calls += cb.calls_used;
      node.strategy_results[ActionKind::CB] = std::move(cb);
    }
    if (!node.strategy_results.count(ActionKind::OB)) {
      StrategyResult ob = run_ob(env_, eq);
      rec.calls_delta += ob.calls_used;
      rec.probe_calls += ob.calls_used;
      node.strategy_results[ActionKind::OB] = std::move(ob);
    }
  }

  StateVector encode_state(NodeId id, const std::string& eq) const {
    const QuestionNode& node = tree_.node(id);
    NodeView view;
    view.node = &node;
    view.effective_question = eq;
    view.sibling_count =
        node.parent ? static_cast<int>(tree_.node(*node.parent).children.size()) : 1;
    auto cb = node.strategy_results.find(ActionKind::CB);
    if (cb != node.strategy_results.end()) view.probe_cb = cb->second;
    auto ob = node.strategy_results.find(ActionKind::OB);
    if (ob != node.strategy_results.end()) view.probe_ob = ob->second;
    if (!node.children.empty()) {
      std::vector<const QuestionNode*> children;
      for (NodeId c : node.children) children.push_back(&tree_.node(c));
      view.child_stats = child_stats_from(children, eq, *env_.embedder);
    }
    EncodeContext ctx;
    ctx.variant = variant_;
    ctx.tree = env_.tree_config;
    ctx.embedder = env_.embedder;
    return encode(view, rates_, ctx);
  }

  void decide_at(NodeId id, const Selector& selector) {
    std::string eq = effective_question(tree_, tree_.node(id));
    std::size_t rec_index = decisions_.size();
    decisions_.push_back(DecisionRecord{});
    DecisionRecord& rec = decisions_[rec_index];
    rec.node_id = id;
    rec.owner_step = static_cast<int>(states_.size());

    ensure_probes(id, eq, rec);
    std::vector<int> mask = dynamic_mask(tree_.node(id));
    StateVector state = encode_state(id, eq);
    int local = selector(state, mask);
    ActionKind action = variant_actions(variant_).at(static_cast<std::size_t>(local));
    rec.action = action;
    states_.push_back(std::move(state));
    actions_.push_back(local);

    execute(id, eq, action, rec_index);
  }

  void execute(NodeId id, const std::string& eq, ActionKind action, std::size_t rec_index) {
    QuestionNode& node = tree_.node(id);
    switch (action) {
      case ActionKind::CB:
      case ActionKind::OB: {
        StrategyResult result;
        auto it = node.strategy_results.find(action);
        if (it != node.strategy_results.end()) {
          result = it->second;  // probe reuse, no new charge
        } else {
          result = action == ActionKind::CB ? run_cb(env_, eq) : run_ob(env_, eq);
          decisions_[rec_index].calls_delta += result.calls_used;
        }
        finalize(id, action, result, rec_index);
        break;
      }
      case ActionKind::CB_REFORMULATE:
      case ActionKind::OB_REFORMULATE: {
        std::string rewritten = env_.service->reformulate(eq);
        decisions_[rec_index].calls_delta += 1;
        node.reformulated_text = rewritten;
        StrategyResult result = action == ActionKind::CB_REFORMULATE
                                    ? run_cb(env_, rewritten)
                                    : run_ob(env_, rewritten);
        decisions_[rec_index].calls_delta += result.calls_used;
        result.calls_used += 1;  // fold the reformulation into the stored result
        finalize(id, action, result, rec_index);
        break;
      }
      case ActionKind::CHILD: {
        if (!node.children.empty()) {
          // Accept the existing aggregation (resampling variant revisit).
          auto it = node.strategy_results.find(ActionKind::CHILD);
          if (it != node.strategy_results.end()) {
            finalize(id, ActionKind::CHILD, it->second, rec_index);
          } else {
            // Children exist without an aggregation yet: let the sweep
            // aggregate them under this decision.
            pending_open_[id] = ActionKind::CHILD;
            subtree_owner_[id] = rec_index;
          }
          break;
        }
        open_subtree(id, eq, ActionKind::CHILD, rec_index, /*temperature=*/0.0, eq);
        break;
      }
      case ActionKind::CHILD_REFORMULATE: {
        std::string rewritten = env_.service->reformulate(eq);
        decisions_[rec_index].calls_delta += 1;
        tree_.node(id).reformulated_text = rewritten;
        open_subtree(id, eq, ActionKind::CHILD_REFORMULATE, rec_index, 0.0, rewritten);
        break;
      }
      case ActionKind::RESAMPLE_CHILDREN: {
        discard_subtree(tree_, id);
        open_subtree(id, eq, ActionKind::CHILD, rec_index, /*temperature=*/0.7, eq);
        break;
      }
    }
  }

  // Decompose and attach children; on failure fall back to the higher-
  // confidence direct answer, recorded as a forced decision.
  void open_subtree(NodeId id, const std::string& eq, ActionKind store_as,
                    std::size_t rec_index, double temperature,
                    const std::string& decompose_text) {
    std::vector<std::string> subs;
    try {
      subs = env_.service->decompose(decompose_text, temperature);
      decisions_[rec_index].calls_delta += 1;
    } catch (const DecompositionError&) {
      decisions_[rec_index].calls_delta += 1;  // the failed call was still charged
      fallback_direct(id, eq, rec_index);
      return;
    }
    attach_children(tree_, id, subs);
    pending_open_[id] = store_as;
    pending_decompose_calls_[id] +=
        (store_as == ActionKind::CHILD_REFORMULATE ? 2 : 1);
    subtree_owner_[id] = rec_index;
  }

  void fallback_direct(NodeId id, const std::string& eq, std::size_t trigger_rec) {
    QuestionNode& node = tree_.node(id);
    int extra = 0;
    if (!node.strategy_results.count(ActionKind::CB)) {
      StrategyResult cb = run_cb(env_, eq);
      extra += cb.calls_used;
      node.strategy_results[ActionKind::CB] = std::move(cb);
    }
    if (!node.strategy_results.count(ActionKind::OB)) {
      StrategyResult ob = run_ob(env_, eq);
      extra += ob.calls_used;
      node.strategy_results[ActionKind::OB] = std::move(ob);
    }
    const StrategyResult& cb = node.strategy_results.at(ActionKind::CB);
    const StrategyResult& ob = node.strategy_results.at(ActionKind::OB);
    ActionKind pick = ob.confidence > cb.confidence ? ActionKind::OB : ActionKind::CB;

    DecisionRecord forced;
    forced.node_id = id;
    forced.action = pick;
    forced.calls_delta = extra;
    forced.forced = true;
    forced.owner_step = decisions_[trigger_rec].owner_step;
    forced.confidence = node.strategy_results.at(pick).confidence;
    decisions_.push_back(forced);

    StrategyResult result = node.strategy_results.at(pick);
    finalize_no_store(id, pick, result);
  }

  void finalize(NodeId id, ActionKind action, const StrategyResult& result,
                std::size_t rec_index) {
    decisions_[rec_index].confidence = result.confidence;
    QuestionNode& node = tree_.node(id);
    node.strategy_results[action] = result;
    node.chosen_action = action;
    node.final_answer = result.answer_text;
  }

  void finalize_no_store(NodeId id, ActionKind action, const StrategyResult& result) {
    QuestionNode& node = tree_.node(id);
    node.chosen_action = action;
    node.final_answer = result.answer_text;
  }

  // Aggregates completed subtrees bottom-up. Non-resampling variants
  // finalize immediately; the resampling variant leaves the node open for
  // one more decision while it still has resample budget.
  void sweep() {
    bool progressed = true;
    while (progressed) {
      progressed = false;
      for (NodeId id : tree_.all_ids()) {
        QuestionNode& node = tree_.node(id);
        if (node.final_answer || node.children.empty()) continue;
        auto pending = pending_open_.find(id);
        if (pending == pending_open_.end()) continue;
        if (node.strategy_results.count(pending->second)) continue;  // already aggregated
        bool complete = true;
        for (NodeId c : node.children) {
          if (!tree_.node(c).final_answer) {
            complete = false;
            break;
          }
        }
        if (!complete) continue;

        std::string eq = effective_question(tree_, node);
        std::vector<std::pair<std::string, std::string>> pairs;
        bool any_empty = false;
        for (NodeId c : node.children) {
          const QuestionNode& child = tree_.node(c);
          std::string answer = child.final_answer.value_or("");
          if (trim(answer).empty()) any_empty = true;
          pairs.emplace_back(effective_question(tree_, child), answer);
        }
        StrategyResult agg;
        if (any_empty) {
          agg = empty_result();
        } else {
          agg = env_.service->aggregate_children(eq, pairs);
          decisions_[subtree_owner_[id]].calls_delta += agg.calls_used;
        }
        agg.calls_used += pending_decompose_calls_[id];
        pending_decompose_calls_[id] = 0;
        node.strategy_results[pending->second] = agg;

        bool revisit = variant_actions(variant_).back() == ActionKind::RESAMPLE_CHILDREN &&
                       node.resample_count < env_.tree_config.max_resamples;
        if (!revisit) {
          std::size_t owner = subtree_owner_[id];
          decisions_[owner].confidence = agg.confidence;
          finalize_no_store(id, pending->second, agg);
          progressed = true;
        }
      }
    }
  }

  SolveOutcome finish(bool collect_transitions, const std::string* gold,
                      const RewardConfig& reward) {
    QuestionNode& root = tree_.node(tree_.root_id());
    std::string final_answer;
    if (root.final_answer) {
      final_answer = *root.final_answer;
    } else {
      // Budget exhausted: best-confidence answer seen at the root, or empty.
      double best = -1.0;
      for (const auto& [action, result] : root.strategy_results) {
        if (result.confidence > best && !result.answer_text.empty()) {
          best = result.confidence;
          final_answer = result.answer_text;
        }
      }
      root.final_answer = final_answer;
    }

    SolveOutcome outcome;
    outcome.final_answer = final_answer;
    outcome.decisions = decisions_;
    for (const DecisionRecord& rec : decisions_) outcome.method_usage[rec.action] += 1;
    outcome.total_calls =
        static_cast<long>(env_.service->accounting().inference_calls() - start_calls_);

    long recorded = 0;
    for (const DecisionRecord& rec : decisions_) recorded += rec.calls_delta;
    if (recorded != outcome.total_calls) {
      throw std::logic_error("EpisodeRunner: decision records account for " +
                             std::to_string(recorded) + " calls but the backend charged " +
                             std::to_string(outcome.total_calls));
    }

    if (collect_transitions && gold && !states_.empty()) {
      std::vector<int> cost(states_.size(), 0), probe_cost(states_.size(), 0);
      for (const DecisionRecord& rec : decisions_) {
        if (rec.owner_step < 0) continue;
        cost[static_cast<std::size_t>(rec.owner_step)] += rec.calls_delta;
        probe_cost[static_cast<std::size_t>(rec.owner_step)] += rec.probe_calls;
      }
      double sim = cosine(env_.embedder->embed(final_answer), env_.embedder->embed(*gold));
      for (std::size_t i = 0; i < states_.size(); ++i) {
        Transition t;
        t.state = states_[i];
        t.action_index = actions_[i];
        int c = cost[i] - (env_.probes_cost_reward ? 0 : probe_cost[i]);
        t.reward = -reward.beta * static_cast<double>(c);
        if (i + 1 < states_.size()) {
          t.next_state = states_[i + 1];
          t.terminal = false;
        } else {
          t.reward += reward.alpha * sim;
          t.terminal = true;
        }
        outcome.transitions.push_back(std::move(t));
      }
    }
    outcome.tree = std::move(tree_);
    return outcome;
  }

  SolverEnv& env_;
  AgentVariant variant_;
  ReasoningTree tree_;
  std::uint64_t start_calls_;
  SuccessRates rates_;
  std::vector<DecisionRecord> decisions_;
  std::vector<StateVector> states_;
  std::vector<int> actions_;
  std::map<NodeId, ActionKind> pending_open_;
  std::map<NodeId, int> pending_decompose_calls_;
  std::map<NodeId, std::size_t> subtree_owner_;
};

}  // namespace detail

struct RlPolicy {
  AgentVariant variant = AgentVariant::Q_ONLY;
  const QNet* net = nullptr;
  SuccessRates rates;
};

struct RlSolveOptions {
  double epsilon = 0.0;
  Rng* rng = nullptr;  // required when epsilon > 0 or sampling mode is on
  bool sample_from_distribution = false;
  const std::string* gold = nullptr;  // enables transition collection
  RewardConfig reward = RewardConfig::balanced();
};

inline SolveOutcome solve_rl(const std::string& question, const RlPolicy& policy,
                             SolverEnv& env, const RlSolveOptions& options = {}) {
  if (!policy.net) throw std::invalid_argument("solve_rl: policy net is required");
  if ((options.epsilon > 0.0 || options.sample_from_distribution) && !options.rng) {
    throw std::invalid_argument("solve_rl: rng required for stochastic selection");
  }
  if (policy.net->input_dim() != state_dim(policy.variant, env.embedder->dim())) {
    throw std::invalid_argument("solve_rl: net input does not match the variant state layout");
  }
  if (policy.net->num_actions() != variant_action_count(policy.variant)) {
    throw std::invalid_argument("solve_rl: net output does not match the variant action count");
  }
  detail::EpisodeRunner runner(question, policy.variant, env);
  runner.set_rates(policy.rates);
  auto selector = [&](const StateVector& state, const std::vector<int>& mask) {
    if (options.sample_from_distribution) {
      std::vector<double> probs = action_distribution(*policy.net, state, mask);
      return sample_action(probs, mask, *options.rng);
    }
    static Rng fallback_rng(0);
    Rng& rng = options.rng ? *options.rng : fallback_rng;
    return select_action(*policy.net, state, mask, options.epsilon, rng);
  };
  return runner.run(selector, options.gold != nullptr, options.gold, options.reward);
}

inline SolveOutcome solve_random(const std::string& question, SolverEnv& env, Rng& rng) {
  detail::EpisodeRunner runner(question, AgentVariant::Q_ONLY, env);
  auto selector = [&rng](const StateVector&, const std::vector<int>& mask) {
    return mask[rng.uniform_index(mask.size())];
  };
  return runner.run(selector, false, nullptr, RewardConfig::balanced());
}

// ---------------------------------------------------------------------------
// Exhaustive reference solver. Builds the full decomposition tree up to
// max_depth (stopping early when the decomposer judges a question atomic by
// returning a single-element list), then computes CB, OB and, where
// children exist, child-aggregation at every node, keeping the most
// confident result. Confidence ties resolve CB > OB > CHILD.
// ---------------------------------------------------------------------------

inline SolveOutcome solve_exhaustive(const std::string& question, SolverEnv& env,
                                     int max_depth) {
  env.validate();
  std::uint64_t start_calls = env.service->accounting().inference_calls();
  TreeConfig config = env.tree_config;
  config.max_depth = std::max(config.max_depth, max_depth);
  ReasoningTree tree = new_tree(question, config);
  std::map<NodeId, int> node_calls;

  // Construction phase: decompose breadth-first down to max_depth.
  std::vector<NodeId> queue{tree.root_id()};
  while (!queue.empty()) {
    NodeId id = queue.front();
    queue.erase(queue.begin());
    const QuestionNode& node = tree.node(id);
    if (node.depth >= max_depth) continue;
    std::vector<std::string> subs;
    try {
      subs = env.service->decompose(node.question_text, 0.0);
      node_calls[id] += 1;
    } catch (const DecompositionError&) {
      node_calls[id] += 1;
      continue;  // treated as a leaf
    }
    if (subs.size() <= 1) continue;  // atomic
    for (NodeId c : attach_children(tree, id, subs)) queue.push_back(c);
  }

  // Solve phase: post-order, siblings in order so #k placeholders resolve.
  SolveOutcome outcome;
  std::function<void(NodeId)> solve = [&](NodeId id) {
    QuestionNode& node_pre = tree.node(id);
    std::vector<NodeId> children = node_pre.children;
    for (NodeId c : children) solve(c);

    std::string eq = effective_question(tree, tree.node(id));
    StrategyResult cb = detail::run_cb(env, eq);
    StrategyResult ob = detail::run_ob(env, eq);
    node_calls[id] += cb.calls_used + ob.calls_used;
    QuestionNode& node = tree.node(id);
    node.strategy_results[ActionKind::CB] = cb;
    node.strategy_results[ActionKind::OB] = ob;

    std::optional<StrategyResult> agg;
    if (!children.empty()) {
      std::vector<std::pair<std::string, std::string>> pairs;
      bool any_empty = false;
      for (NodeId c : children) {
        const QuestionNode& child = tree.node(c);
        std::string answer = child.final_answer.value_or("");
        if (trim(answer).empty()) any_empty = true;
        pairs.emplace_back(effective_question(tree, child), answer);
      }
      if (any_empty) {
        agg = detail::empty_result();
      } else {
        agg = env.service->aggregate_children(eq, pairs);
        node_calls[id] += agg->calls_used;
      }
      node.strategy_results[ActionKind::CHILD] = *agg;
    }

    // Highest confidence wins; ties resolve in CB > OB > CHILD order.
    ActionKind best = ActionKind::CB;
    const StrategyResult* best_result = &node.strategy_results.at(ActionKind::CB);
    if (ob.confidence > best_result->confidence) {
      best = ActionKind::OB;
      best_result = &node.strategy_results.at(ActionKind::OB);
    }
    if (agg && agg->confidence > best_result->confidence) {
      best = ActionKind::CHILD;
      best_result = &node.strategy_results.at(ActionKind::CHILD);
    }
    node.chosen_action = best;
    node.final_answer = best_result->answer_text;

    DecisionRecord rec;
    rec.node_id = id;
    rec.action = best;
    rec.calls_delta = node_calls[id];
    rec.confidence = best_result->confidence;
    outcome.decisions.push_back(rec);
  };
  solve(tree.root_id());

  outcome.final_answer = tree.node(tree.root_id()).final_answer.value_or("");
  for (const DecisionRecord& rec : outcome.decisions) outcome.method_usage[rec.action] += 1;
  outcome.total_calls =
      static_cast<long>(env.service->accounting().inference_calls() - start_calls);
  long recorded = 0;
  for (const DecisionRecord& rec : outcome.decisions) recorded += rec.calls_delta;
  if (recorded != outcome.total_calls) {
    throw std::logic_error("solve_exhaustive: call attribution mismatch");
  }
  outcome.tree = std::move(tree);
  return outcome;
}

// ---------------------------------------------------------------------------
// Greedy classifier baseline.
// ---------------------------------------------------------------------------

struct ReliabilityClassifier {
  RandomForest forest;
  double cv_accuracy = 0.0;
  double cv_precision = 0.0;
  bool degenerate = false;   // single-class training data
  int constant_label = 0;

  bool predict_reliable(const FeatureVector& features) const {
    if (degenerate) return constant_label == 1;
    return forest.predict(features) == 1;
  }
};

// Trains one per-strategy reliability classifier and reports 5-fold
// held-out accuracy/precision. Requires at least 20 records; single-class
// data produces a flagged constant classifier.
inline ReliabilityClassifier train_reliability(const std::vector<LabeledFeatures>& dev_records,
                                               std::uint64_t seed) {
  if (dev_records.size() < 20) {
    throw std::invalid_argument("train_reliability: need at least 20 dev records, got " +
                                std::to_string(dev_records.size()));
  }
  ReliabilityClassifier out;
  int positives = 0;
  for (const LabeledFeatures& r : dev_records) positives += r.label;
  if (positives == 0 || positives == static_cast<int>(dev_records.size())) {
    out.degenerate = true;
    out.constant_label = positives == 0 ? 0 : 1;
    out.cv_accuracy = 1.0;
    out.cv_precision = out.constant_label == 1 ? 1.0 : 0.0;
    return out;
  }

  // 5-fold cross-validation over a seeded shuffle.
  Rng rng(seed);
  std::vector<std::size_t> order(dev_records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  const int folds = 5;
  long correct = 0, predicted_pos = 0, true_pos = 0;
  for (int fold = 0; fold < folds; ++fold) {
    std::vector<LabeledFeatures> train_set;
    std::vector<std::size_t> held;
    for (std::size_t i = 0; i < order.size(); ++i) {
      if (static_cast<int>(i % folds) == fold) {
        held.push_back(order[i]);
      } else {
        train_set.push_back(dev_records[order[i]]);
      }
    }
    int fold_pos = 0;
    for (const LabeledFeatures& r : train_set) fold_pos += r.label;
    RandomForest forest;
    if (fold_pos == 0 || fold_pos == static_cast<int>(train_set.size())) {
      int label = fold_pos == 0 ? 0 : 1;
      for (std::size_t i : held) {
        correct += dev_records[i].label == label ? 1 : 0;
        if (label == 1) {
          ++predicted_pos;
          true_pos += dev_records[i].label;
        }
      }
      continue;
    }
    ForestConfig fc;
    fc.seed = seed + static_cast<std::uint64_t>(fold) + 1;
    forest.train(train_set, fc);
    for (std::size_t i : held) {
      int pred = forest.predict(dev_records[i].features);
      correct += pred == dev_records[i].label ? 1 : 0;
      if (pred == 1) {
        ++predicted_pos;
        true_pos += dev_records[i].label;
      }
    }
  }
  out.cv_accuracy = static_cast<double>(correct) / static_cast<double>(dev_records.size());
  out.cv_precision =
      predicted_pos > 0 ? static_cast<double>(true_pos) / static_cast<double>(predicted_pos)
                        : 0.0;

  ForestConfig fc;
  fc.seed = seed;
  out.forest.train(dev_records, fc);
  return out;
}

struct GreedyClassifiers {
  std::map<ActionKind, ReliabilityClassifier> per_strategy;  // CB, OB, CHILD
};

struct GreedyOrder {
  std::array<ActionKind, 3> order{ActionKind::CB, ActionKind::OB, ActionKind::CHILD};

  void validate() const {
    bool cb = false, ob = false, child = false;
    for (ActionKind a : order) {
      cb = cb || a == ActionKind::CB;
      ob = ob || a == ActionKind::OB;
      child = child || a == ActionKind::CHILD;
    }
    if (!cb || !ob || !child) {
      throw std::invalid_argument("GreedyOrder: must be a permutation of CB, OB, CHILD");
    }
  }
};

// Default evaluation order: descending dev-set precision, ties in
// CB > OB > CHILD order.
inline GreedyOrder default_greedy_order(const GreedyClassifiers& classifiers) {
  GreedyOrder out;
  std::array<ActionKind, 3> actions{ActionKind::CB, ActionKind::OB, ActionKind::CHILD};
  std::stable_sort(actions.begin(), actions.end(), [&](ActionKind a, ActionKind b) {
    auto precision = [&](ActionKind k) {
      auto it = classifiers.per_strategy.find(k);
      return it == classifiers.per_strategy.end() ? 0.0 : it->second.cv_precision;
    };
    return precision(a) > precision(b);
  });
  out.order = actions;
  return out;
}

inline SolveOutcome solve_greedy(const std::string& question,
                                 const GreedyClassifiers& classifiers, GreedyOrder order,
                                 SolverEnv& env) {
  env.validate();
  order.validate();
  std::uint64_t start_calls = env.service->accounting().inference_calls();
  ReasoningTree tree = new_tree(question, env.tree_config);
  SolveOutcome outcome;

  std::function<void(NodeId)> solve_node = [&](NodeId id) {
    std::string eq = effective_question(tree, tree.node(id));
    std::vector<std::pair<ActionKind, StrategyResult>> executed;

    for (ActionKind strategy : order.order) {
      StrategyResult result;
      int calls = 0;
      if (strategy == ActionKind::CB) {
        result = detail::run_cb(env, eq);
        calls = result.calls_used;
      } else if (strategy == ActionKind::OB) {
        result = detail::run_ob(env, eq);
        calls = result.calls_used;
      } else {
        if (tree.node(id).depth >= tree.config().max_depth) continue;
        std::vector<std::string> subs;
        try {
          subs = env.service->decompose(eq, 0.0);
          calls += 1;
        } catch (const DecompositionError&) {
          calls += 1;
          DecisionRecord rec;
          rec.node_id = id;
          rec.action = ActionKind::CHILD;
          rec.calls_delta = calls;
          rec.forced = true;
          outcome.decisions.push_back(rec);
          continue;  // strategy failed, move on in the order
        }
        if (subs.size() <= 1) {
          // Atomic question: no decomposition to aggregate.
          DecisionRecord rec;
          rec.node_id = id;
          rec.action = ActionKind::CHILD;
          rec.calls_delta = calls;
          rec.forced = true;
          outcome.decisions.push_back(rec);
          continue;
        }
        std::vector<NodeId> children = attach_children(tree, id, subs);
        for (NodeId c : children) solve_node(c);
        std::vector<std::pair<std::string, std::string>> pairs;
        for (NodeId c : children) {
          pairs.emplace_back(effective_question(tree, tree.node(c)),
                             tree.node(c).final_answer.value_or(""));
        }
        result = env.service->aggregate_children(eq, pairs);
        // Children recorded their own calls; this decision owns only the
        // decompose and aggregate requests.
        calls += result.calls_used;
        result.calls_used = calls;
      }

      tree.node(id).strategy_results[strategy] = result;
      DecisionRecord rec;
      rec.node_id = id;
      rec.action = strategy;
      rec.calls_delta = calls;
      rec.confidence = result.confidence;
      outcome.decisions.push_back(rec);
      executed.emplace_back(strategy, result);

      auto classifier = classifiers.per_strategy.find(strategy);
      bool reliable = classifier != classifiers.per_strategy.end() &&
                      classifier->second.predict_reliable(reliability_features(result));
      if (reliable) {
        QuestionNode& node = tree.node(id);
        node.chosen_action = strategy;
        node.final_answer = result.answer_text;
        return;
      }
    }

    // Nothing judged reliable: keep the highest-confidence executed answer.
    QuestionNode& node = tree.node(id);
    if (executed.empty()) {
      node.final_answer = "";
      return;
    }
    const auto* best = &executed.front();
    for (const auto& candidate : executed) {
      if (candidate.second.confidence > best->second.confidence) best = &candidate;
    }
    node.chosen_action = best->first;
    node.final_answer = best->second.answer_text;
  };
  solve_node(tree.root_id());

  outcome.final_answer = tree.node(tree.root_id()).final_answer.value_or("");
  for (const DecisionRecord& rec : outcome.decisions) outcome.method_usage[rec.action] += 1;
  outcome.total_calls =
      static_cast<long>(env.service->accounting().inference_calls() - start_calls);
  long recorded = 0;
  for (const DecisionRecord& rec : outcome.decisions) recorded += rec.calls_delta;
  if (recorded != outcome.total_calls) {
    throw std::logic_error("solve_greedy: call attribution mismatch");
  }
  outcome.tree = std::move(tree);
  return outcome;
}

// One JSON object per decision, for the `inspect` subcommand.
inline void write_decision_trace(const SolveOutcome& outcome, std::ostream& out) {
  for (const DecisionRecord& rec : outcome.decisions) {
    nlohmann::json j{{"node", rec.node_id},
                     {"action", action_name(rec.action)},
                     {"calls_delta", rec.calls_delta},
                     {"confidence", rec.confidence},
                     {"forced", rec.forced}};
    out << j.dump() << "\n";
  }
}

}  // namespace dyntree
