#pragma once

// Reasoning-tree data model. A tree starts as a single root question and
// grows one decomposition layer at a time; per-node bookkeeping records
// which strategies ran, what they answered, and how confident they were.

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dyntree/text.hpp"

#include <nlohmann/json.hpp>

namespace dyntree {

enum class ActionKind : int {
  CB = 0,
  OB = 1,
  CHILD = 2,
  CB_REFORMULATE = 3,
  OB_REFORMULATE = 4,
  CHILD_REFORMULATE = 5,
  RESAMPLE_CHILDREN = 6,
};

constexpr int kActionKindCount = 7;

inline const char* action_name(ActionKind a) {
  switch (a) {
    case ActionKind::CB: return "CB";
    case ActionKind::OB: return "OB";
    case ActionKind::CHILD: return "CHILD";
    case ActionKind::CB_REFORMULATE: return "CB_REFORMULATE";
    case ActionKind::OB_REFORMULATE: return "OB_REFORMULATE";
    case ActionKind::CHILD_REFORMULATE: return "CHILD_REFORMULATE";
    case ActionKind::RESAMPLE_CHILDREN: return "RESAMPLE_CHILDREN";
  }
  return "?";
}

inline std::optional<ActionKind> action_from_name(std::string_view name) {
  for (int i = 0; i < kActionKindCount; ++i) {
    ActionKind a = static_cast<ActionKind>(i);
    if (name == action_name(a)) return a;
  }
  return std::nullopt;
}

// Midpoint of (0,1]; used when a backend reports no token log-probs.
constexpr double kConfidenceSentinel = 0.5;

// Confidence of a generated answer: exp of the mean token log-prob,
// clamped into (0,1]. Length-normalized rather than summed so long
// answers are not penalized for their token count.
inline double confidence_from_logprobs(const std::vector<double>& token_logprobs) {
  if (token_logprobs.empty()) return kConfidenceSentinel;
  double sum = 0.0;
  for (double lp : token_logprobs) sum += lp;
  double mean = sum / static_cast<double>(token_logprobs.size());
  if (mean > 0.0) mean = 0.0;
  return std::exp(mean);
}

struct StrategyResult {
  std::string answer_text;
  std::vector<double> token_logprobs;
  double confidence = kConfidenceSentinel;
  int calls_used = 0;
  std::optional<std::vector<std::string>> retrieved_ids;  // open-book only

  static StrategyResult from_answer(std::string answer, std::vector<double> logprobs,
                                    int calls) {
    StrategyResult r;
    r.answer_text = std::move(answer);
    r.confidence = confidence_from_logprobs(logprobs);
    r.token_logprobs = std::move(logprobs);
    r.calls_used = calls;
    return r;
  }
};

using NodeId = std::uint32_t;

struct QuestionNode {
  NodeId id = 0;
  std::string question_text;
  std::optional<std::string> reformulated_text;
  int depth = 0;
  int child_index = 0;
  std::optional<NodeId> parent;
  std::vector<NodeId> children;
  std::map<ActionKind, StrategyResult> strategy_results;
  std::optional<ActionKind> chosen_action;
  std::optional<std::string> final_answer;
  int resample_count = 0;
};

struct TreeConfig {
  int max_depth = 3;
  int max_children = 5;
  int max_resamples = 2;
};

class ReasoningTree {
 public:
  ReasoningTree(std::string question, TreeConfig config)
      : config_(config) {
    QuestionNode root;
    root.id = next_id_++;
    root.question_text = std::move(question);
    nodes_.push_back(std::move(root));
  }

  const TreeConfig& config() const { return config_; }
  NodeId root_id() const { return 0; }
  std::size_t node_count() const { return live_count_; }

  bool contains(NodeId id) const { return lookup(id) != nullptr; }

  QuestionNode& node(NodeId id) {
    QuestionNode* n = lookup(id);
    if (!n) throw std::out_of_range("ReasoningTree: unknown node id " + std::to_string(id));
    return *n;
  }
  const QuestionNode& node(NodeId id) const {
    return const_cast<ReasoningTree*>(this)->node(id);
  }

  // Ids of every live node, ascending (creation order).
  std::vector<NodeId> all_ids() const {
    std::vector<NodeId> ids;
    ids.reserve(nodes_.size());
    for (const auto& n : nodes_) {
      if (!removed(n.id)) ids.push_back(n.id);
    }
    return ids;
  }

  friend ReasoningTree new_tree(std::string question, TreeConfig config);
  friend std::vector<NodeId> attach_children(ReasoningTree& tree, NodeId node_id,
                                             const std::vector<std::string>& sub_questions);
  friend std::size_t discard_subtree(ReasoningTree& tree, NodeId node_id);

 private:
  QuestionNode* lookup(NodeId id) {
    if (id >= next_id_ || removed(id)) return nullptr;
    return &nodes_[id];
  }
  const QuestionNode* lookup(NodeId id) const {
    return const_cast<ReasoningTree*>(this)->lookup(id);
  }
  bool removed(NodeId id) const {
    return id < removed_.size() && removed_[id];
  }
  void mark_removed(NodeId id) {
    if (removed_.size() <= id) removed_.resize(id + 1, false);
    removed_[id] = true;
    --live_count_;
  }

  TreeConfig config_;
  std::vector<QuestionNode> nodes_;  // indexed by id; ids never reused
  std::vector<bool> removed_;
  std::size_t live_count_ = 1;
  NodeId next_id_ = 0;
};

inline ReasoningTree new_tree(std::string question, TreeConfig config = {}) {
  if (trim(question).empty()) {
    throw std::invalid_argument("new_tree: question must be nonempty");
  }
  return ReasoningTree(std::move(question), config);
}

inline std::vector<NodeId> attach_children(ReasoningTree& tree, NodeId node_id,
                                           const std::vector<std::string>& sub_questions) {
  QuestionNode& parent = tree.node(node_id);
  if (sub_questions.empty()) {
    throw std::invalid_argument("attach_children: need at least one sub-question");
  }
  if (static_cast<int>(sub_questions.size()) > tree.config().max_children) {
    throw std::invalid_argument("attach_children: " + std::to_string(sub_questions.size()) +
                                " children exceeds max_children " +
                                std::to_string(tree.config().max_children));
  }
  if (parent.depth + 1 > tree.config().max_depth) {
    throw std::invalid_argument("attach_children: children would exceed max_depth " +
                                std::to_string(tree.config().max_depth));
  }
  std::vector<NodeId> ids;
  ids.reserve(sub_questions.size());
  for (std::size_t i = 0; i < sub_questions.size(); ++i) {
    QuestionNode child;
    child.id = tree.next_id_++;
    child.question_text = sub_questions[i];
    child.depth = parent.depth + 1;
    child.child_index = static_cast<int>(parent.children.size() + i);
    child.parent = node_id;
    ids.push_back(child.id);
    tree.nodes_.push_back(std::move(child));
    ++tree.live_count_;
  }
  // nodes_ may have reallocated; re-fetch the parent.
  QuestionNode& p = tree.node(node_id);
  p.children.insert(p.children.end(), ids.begin(), ids.end());
  return ids;
}

// Removes all descendants of node_id, clears its CHILD result, and charges
// one resample against the node's budget. Returns the removed-node count.
inline std::size_t discard_subtree(ReasoningTree& tree, NodeId node_id) {
  QuestionNode& n = tree.node(node_id);
  if (n.resample_count + 1 > tree.config().max_resamples) {
    throw std::invalid_argument("discard_subtree: resample budget exhausted at node " +
                                std::to_string(node_id));
  }
  std::size_t removed = 0;
  std::vector<NodeId> stack(n.children.begin(), n.children.end());
  while (!stack.empty()) {
    NodeId id = stack.back();
    stack.pop_back();
    QuestionNode& d = tree.node(id);
    stack.insert(stack.end(), d.children.begin(), d.children.end());
    tree.mark_removed(id);
    ++removed;
  }
  n.children.clear();
  n.strategy_results.erase(ActionKind::CHILD);
  n.final_answer.reset();
  n.resample_count += 1;
  return removed;
}

// Depth-first pre-order over nodes still lacking a final answer. Parents
// precede children; siblings appear in child_index order.
inline std::vector<NodeId> decision_order(const ReasoningTree& tree) {
  std::vector<NodeId> order;
  std::vector<NodeId> stack{tree.root_id()};
  while (!stack.empty()) {
    NodeId id = stack.back();
    stack.pop_back();
    const QuestionNode& n = tree.node(id);
    if (!n.final_answer.has_value()) order.push_back(id);
    for (auto it = n.children.rbegin(); it != n.children.rend(); ++it) {
      stack.push_back(*it);
    }
  }
  return order;
}

// Stable debug serialization, consumed by the `inspect` CLI subcommand.
inline nlohmann::json tree_to_json(const ReasoningTree& tree) {
  nlohmann::json nodes = nlohmann::json::array();
  for (NodeId id : tree.all_ids()) {
    const QuestionNode& n = tree.node(id);
    nlohmann::json answers = nlohmann::json::object();
    for (const auto& [action, result] : n.strategy_results) {
      answers[action_name(action)] = {
          {"answer", result.answer_text},
          {"confidence", result.confidence},
          {"calls", result.calls_used},
      };
    }
    nlohmann::json jn = {
        {"id", n.id},
        {"parent", n.parent ? nlohmann::json(*n.parent) : nlohmann::json(nullptr)},
        {"question", n.question_text},
        {"depth", n.depth},
        {"child_index", n.child_index},
        {"children", n.children},
        {"answers", answers},
        {"chosen_action",
         n.chosen_action ? nlohmann::json(action_name(*n.chosen_action)) : nlohmann::json(nullptr)},
        {"final_answer", n.final_answer ? nlohmann::json(*n.final_answer) : nlohmann::json(nullptr)},
        {"resample_count", n.resample_count},
    };
    if (n.reformulated_text) jn["reformulated"] = *n.reformulated_text;
    nodes.push_back(std::move(jn));
  }
  return nlohmann::json{{"schema", 1}, {"nodes", std::move(nodes)}};
}

}  // namespace dyntree
