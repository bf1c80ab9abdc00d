#pragma once

// Fixed-layout state encoding per agent variant. The layout concatenates,
// in order: a basic block (tree flags, lengths, per-action success rates),
// a question-type one-hot, a structural block, the question embedding,
// optionally a CB/OB probe block, and optionally a child-statistics block
// for the resampling variant. Absent inputs zero-fill their block, so the
// vector length is a pure function of (variant, embedding dim).

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "dyntree/embedding.hpp"
#include "dyntree/text.hpp"
#include "dyntree/tree.hpp"

namespace dyntree {

enum class AgentVariant : int {
  Q_ONLY = 0,
  TRANSFORMER = 1,  // same state as Q_ONLY, transformer-encoded Q-net
  Q_CB_OB = 2,
  REFORM = 3,
  RESAMPLE = 4,
};

inline const char* variant_name(AgentVariant v) {
  switch (v) {
    case AgentVariant::Q_ONLY: return "q_only";
    case AgentVariant::TRANSFORMER: return "transformer";
    case AgentVariant::Q_CB_OB: return "q_cb_ob";
    case AgentVariant::REFORM: return "reform";
    case AgentVariant::RESAMPLE: return "resample";
  }
  return "?";
}

inline AgentVariant variant_from_name(const std::string& name) {
  for (int i = 0; i < 5; ++i) {
    AgentVariant v = static_cast<AgentVariant>(i);
    if (name == variant_name(v)) return v;
  }
  throw std::invalid_argument("unknown agent variant '" + name + "'");
}

// The fixed action subset each variant exposes.
inline const std::vector<ActionKind>& variant_actions(AgentVariant v) {
  static const std::vector<ActionKind> base{ActionKind::CB, ActionKind::OB, ActionKind::CHILD};
  static const std::vector<ActionKind> reform{
      ActionKind::CB,             ActionKind::OB,
      ActionKind::CHILD,          ActionKind::CB_REFORMULATE,
      ActionKind::OB_REFORMULATE, ActionKind::CHILD_REFORMULATE};
  static const std::vector<ActionKind> resample{ActionKind::CB, ActionKind::OB,
                                                ActionKind::CHILD,
                                                ActionKind::RESAMPLE_CHILDREN};
  switch (v) {
    case AgentVariant::REFORM: return reform;
    case AgentVariant::RESAMPLE: return resample;
    default: return base;
  }
}

inline int variant_action_count(AgentVariant v) {
  return static_cast<int>(variant_actions(v).size());
}

inline int variant_action_index(AgentVariant v, ActionKind a) {
  const auto& actions = variant_actions(v);
  for (std::size_t i = 0; i < actions.size(); ++i) {
    if (actions[i] == a) return static_cast<int>(i);
  }
  throw std::invalid_argument(std::string("action ") + action_name(a) +
                              " not in variant " + variant_name(v));
}

inline bool variant_has_probe_block(AgentVariant v) {
  return v == AgentVariant::Q_CB_OB || v == AgentVariant::REFORM ||
         v == AgentVariant::RESAMPLE;
}

inline bool variant_has_child_block(AgentVariant v) { return v == AgentVariant::RESAMPLE; }

inline int state_dim(AgentVariant v, int embedding_dim) {
  int dim = 3 + variant_action_count(v) + 8 + 3 + embedding_dim;
  if (variant_has_probe_block(v)) dim += 2 * (3 + embedding_dim);
  if (variant_has_child_block(v)) dim += 4;
  return dim;
}

using StateVector = std::vector<double>;

// Global running success rate per action, 0.5 prior until the first
// observation.
struct SuccessRates {
  struct Entry {
    double rate = 0.5;
    int count = 0;
  };
  std::array<Entry, kActionKindCount> entries{};

  double rate(ActionKind a) const { return entries[static_cast<int>(a)].rate; }
  int count(ActionKind a) const { return entries[static_cast<int>(a)].count; }
};

inline SuccessRates update_success_rate(SuccessRates rates, ActionKind action, int outcome) {
  auto& e = rates.entries[static_cast<int>(action)];
  e.count += 1;
  e.rate += (static_cast<double>(outcome) - e.rate) / static_cast<double>(e.count);
  return rates;
}

struct ChildStats {
  double mean_confidence = 0.0;
  double confidence_variance = 0.0;
  double mean_answer_question_cos = 0.0;
};

// Everything encode needs to know about a decision point. The effective
// question carries sibling-placeholder substitutions; probes are the CB/OB
// results executed ahead of the decision for probe-bearing variants.
struct NodeView {
  const QuestionNode* node = nullptr;
  std::string effective_question;
  int sibling_count = 1;
  std::optional<StrategyResult> probe_cb;
  std::optional<StrategyResult> probe_ob;
  std::optional<ChildStats> child_stats;
};

namespace detail {

inline void push_question_type(StateVector& out, const std::string& question) {
  static const char* kinds[] = {"what", "who", "when", "where", "which", "how", "why"};
  std::vector<std::string> tokens = tokenize(question);
  int hot = 7;  // "other"
  if (!tokens.empty()) {
    for (int i = 0; i < 7; ++i) {
      if (tokens.front() == kinds[i]) {
        hot = i;
        break;
      }
    }
  }
  for (int i = 0; i < 8; ++i) out.push_back(i == hot ? 1.0 : 0.0);
}

inline void push_probe(StateVector& out, const std::optional<StrategyResult>& probe,
                       const EmbeddingProvider& embedder) {
  int d = embedder.dim();
  if (!probe) {
    out.insert(out.end(), static_cast<std::size_t>(3 + d), 0.0);
    return;
  }
  double mean = 0.0;
  if (!probe->token_logprobs.empty()) {
    for (double lp : probe->token_logprobs) mean += lp;
    mean /= static_cast<double>(probe->token_logprobs.size());
  }
  double clipped = std::min(0.0, std::max(-10.0, mean));
  out.push_back(clipped / 10.0 + 1.0);
  out.push_back(probe->confidence);
  double len = static_cast<double>(std::min<std::size_t>(token_count(probe->answer_text), 50));
  out.push_back(len / 50.0);
  Vector emb = embedder.embed(probe->answer_text);
  out.insert(out.end(), emb.begin(), emb.end());
}

}  // namespace detail

struct EncodeContext {
  AgentVariant variant = AgentVariant::Q_ONLY;
  TreeConfig tree;
  const EmbeddingProvider* embedder = nullptr;
};

inline StateVector encode(const NodeView& view, const SuccessRates& rates,
                          const EncodeContext& ctx) {
  if (!view.node || !ctx.embedder) {
    throw std::invalid_argument("encode: node and embedder are required");
  }
  const QuestionNode& node = *view.node;
  const std::string& question =
      view.effective_question.empty() ? node.question_text : view.effective_question;
  const EmbeddingProvider& embedder = *ctx.embedder;

  StateVector out;
  out.reserve(static_cast<std::size_t>(state_dim(ctx.variant, embedder.dim())));

  // (a) basic block
  out.push_back(node.children.empty() ? 0.0 : 1.0);
  double qlen = static_cast<double>(std::min<std::size_t>(token_count(question), 100));
  out.push_back(qlen / 50.0);
  out.push_back(static_cast<double>(node.children.size()) / 5.0);
  for (ActionKind a : variant_actions(ctx.variant)) out.push_back(rates.rate(a));

  // (b) question type one-hot
  detail::push_question_type(out, question);

  // (c) structural block
  out.push_back(static_cast<double>(node.depth) /
                static_cast<double>(std::max(1, ctx.tree.max_depth)));
  out.push_back(static_cast<double>(node.child_index) /
                static_cast<double>(std::max(1, view.sibling_count - 1)));
  out.push_back(static_cast<double>(view.sibling_count) / 5.0);

  // (d) question embedding
  Vector qemb = embedder.embed(question);
  out.insert(out.end(), qemb.begin(), qemb.end());

  // (e) CB/OB probe block
  if (variant_has_probe_block(ctx.variant)) {
    detail::push_probe(out, view.probe_cb, embedder);
    detail::push_probe(out, view.probe_ob, embedder);
  }

  // (f) child statistics block
  if (variant_has_child_block(ctx.variant)) {
    if (view.child_stats) {
      out.push_back(view.child_stats->mean_confidence);
      out.push_back(view.child_stats->confidence_variance);
      out.push_back(static_cast<double>(node.resample_count) /
                    static_cast<double>(std::max(1, ctx.tree.max_resamples)));
      out.push_back(view.child_stats->mean_answer_question_cos);
    } else {
      out.insert(out.end(), 4, 0.0);
    }
  }
  return out;
}

// Child confidence/cosine statistics from answered children, as fed to the
// resampling variant's block (f).
inline ChildStats child_stats_from(const std::vector<const QuestionNode*>& children,
                                   const std::string& question,
                                   const EmbeddingProvider& embedder) {
  ChildStats stats;
  if (children.empty()) return stats;
  Vector qemb = embedder.embed(question);
  double conf_sum = 0.0, conf_sq = 0.0, cos_sum = 0.0;
  for (const QuestionNode* child : children) {
    double conf = kConfidenceSentinel;
    if (child->chosen_action) {
      auto it = child->strategy_results.find(*child->chosen_action);
      if (it != child->strategy_results.end()) conf = it->second.confidence;
    }
    conf_sum += conf;
    conf_sq += conf * conf;
    std::string answer = child->final_answer.value_or("");
    cos_sum += cosine(embedder.embed(answer), qemb);
  }
  double n = static_cast<double>(children.size());
  stats.mean_confidence = conf_sum / n;
  stats.confidence_variance = std::max(0.0, conf_sq / n - stats.mean_confidence * stats.mean_confidence);
  stats.mean_answer_question_cos = cos_sum / n;
  return stats;
}

}  // namespace dyntree
