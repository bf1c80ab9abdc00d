#pragma once

// The decision layer: the reward R = alpha * sim(answer, gold) - beta * c,
// epsilon-greedy action selection under variant masks, FIFO experience
// replay, TD targets against a frozen target network, and the batched DQN
// update.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dyntree/neural.hpp"
#include "dyntree/rng.hpp"
#include "dyntree/state_features.hpp"

namespace dyntree {

enum class RewardRegime : int { HIGH_ACCURACY = 0, BALANCED = 1, EFFICIENCY = 2, CUSTOM = 3 };

struct RewardConfig {
  RewardRegime name = RewardRegime::BALANCED;
  double alpha = 1.0;
  double beta = 0.1;
  double gamma = 0.99;

  static RewardConfig high_accuracy() { return {RewardRegime::HIGH_ACCURACY, 2.0, 0.05, 0.99}; }
  static RewardConfig balanced() { return {RewardRegime::BALANCED, 1.0, 0.1, 0.99}; }
  static RewardConfig efficiency() { return {RewardRegime::EFFICIENCY, 0.5, 0.2, 0.99}; }

  static RewardConfig from_name(const std::string& name) {
    if (name == "high") return high_accuracy();
    if (name == "balanced") return balanced();
    if (name == "efficiency") return efficiency();
    throw std::invalid_argument("unknown reward regime '" + name + "'");
  }
};

inline const char* regime_name(RewardRegime r) {
  switch (r) {
    case RewardRegime::HIGH_ACCURACY: return "high";
    case RewardRegime::BALANCED: return "balanced";
    case RewardRegime::EFFICIENCY: return "efficiency";
    case RewardRegime::CUSTOM: return "custom";
  }
  return "?";
}

inline double compute_reward(const RewardConfig& config, double sim_value, int calls) {
  if (calls < 0) throw std::invalid_argument("compute_reward: calls must be non-negative");
  return config.alpha * sim_value - config.beta * static_cast<double>(calls);
}

struct Transition {
  StateVector state;
  int action_index = 0;
  double reward = 0.0;
  std::optional<StateVector> next_state;  // absent iff terminal
  bool terminal = false;
};

// Ring buffer with FIFO eviction and seeded uniform sampling.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 10000, std::uint64_t seed = 0)
      : capacity_(capacity), rng_(seed) {
    if (capacity == 0) throw std::invalid_argument("ReplayBuffer: capacity must be positive");
  }

  std::size_t size() const { return storage_.size(); }
  std::size_t capacity() const { return capacity_; }

  void push(Transition t) {
    if (storage_.size() < capacity_) {
      storage_.push_back(std::move(t));
    } else {
      storage_[head_] = std::move(t);
      head_ = (head_ + 1) % capacity_;
    }
  }

  const Transition& at(std::size_t i) const { return storage_[i]; }

  // Uniform sample without replacement within the batch.
  std::vector<const Transition*> sample(std::size_t batch_size) {
    if (batch_size > storage_.size()) {
      throw std::invalid_argument("ReplayBuffer::sample: batch " + std::to_string(batch_size) +
                                  " exceeds buffer size " + std::to_string(storage_.size()));
    }
    std::vector<std::size_t> idx = rng_.sample_without_replacement(storage_.size(), batch_size);
    std::vector<const Transition*> out;
    out.reserve(batch_size);
    for (std::size_t i : idx) out.push_back(&storage_[i]);
    return out;
  }

 private:
  std::size_t capacity_;
  std::vector<Transition> storage_;
  std::size_t head_ = 0;  // oldest slot once full
  Rng rng_;
};

struct EpsilonSchedule {
  double start = 1.0;
  double end = 0.05;
  double decay_fraction = 0.5;  // decay over this share of total episodes

  double at(int episode, int total_episodes) const {
    if (total_episodes <= 0) return end;
    double horizon = decay_fraction * static_cast<double>(total_episodes);
    if (horizon <= 0.0) return end;
    double t = std::min(1.0, static_cast<double>(episode) / horizon);
    return start + (end - start) * t;
  }
};

// Epsilon-greedy over a masked action set: with probability epsilon a
// uniform choice among allowed actions, otherwise the masked argmax with
// ties broken by the lowest index.
inline int select_action(const QNet& net, std::span<const double> state,
                         const std::vector<int>& allowed_actions, double epsilon, Rng& rng) {
  if (allowed_actions.empty()) {
    throw std::invalid_argument("select_action: action mask is empty");
  }
  if (epsilon > 0.0 && rng.uniform() < epsilon) {
    return allowed_actions[rng.uniform_index(allowed_actions.size())];
  }
  std::vector<double> q = net.forward(state);
  int best = allowed_actions.front();
  double best_q = q.at(static_cast<std::size_t>(best));
  for (int a : allowed_actions) {
    double qa = q.at(static_cast<std::size_t>(a));
    if (qa > best_q || (qa == best_q && a < best)) {
      best = a;
      best_q = qa;
    }
  }
  return best;
}

// Draws an action index from an explicit probability distribution over the
// allowed set (the sampling mode of the agent-guided loop, where the agent
// predicts action probabilities and executes only the sampled one).
inline int sample_action(const std::vector<double>& probabilities,
                         const std::vector<int>& allowed_actions, Rng& rng) {
  if (allowed_actions.empty()) {
    throw std::invalid_argument("sample_action: action mask is empty");
  }
  double total = 0.0;
  for (int a : allowed_actions) total += probabilities.at(static_cast<std::size_t>(a));
  if (total <= 0.0) return allowed_actions.front();
  double u = rng.uniform() * total;
  double acc = 0.0;
  for (int a : allowed_actions) {
    acc += probabilities.at(static_cast<std::size_t>(a));
    if (u < acc) return a;
  }
  return allowed_actions.back();
}

// Softmax of masked Q-values, for sampling-mode selection.
inline std::vector<double> action_distribution(const QNet& net, std::span<const double> state,
                                               const std::vector<int>& allowed_actions,
                                               double temperature = 1.0) {
  std::vector<double> q = net.forward(state);
  std::vector<double> probs(q.size(), 0.0);
  double max_q = -1e300;
  for (int a : allowed_actions) max_q = std::max(max_q, q.at(static_cast<std::size_t>(a)));
  double denom = 0.0;
  for (int a : allowed_actions) {
    double e = std::exp((q[static_cast<std::size_t>(a)] - max_q) / std::max(1e-9, temperature));
    probs[static_cast<std::size_t>(a)] = e;
    denom += e;
  }
  for (int a : allowed_actions) probs[static_cast<std::size_t>(a)] /= denom;
  return probs;
}

// y = r                               if terminal
// y = r + gamma * max_a' Q_target(s', a')  over the variant action mask.
inline double td_target(const RewardConfig& config, const Transition& transition,
                        const QNet& target_net,
                        const std::vector<int>& allowed_actions) {
  if (transition.terminal || !transition.next_state.has_value()) {
    return transition.reward;
  }
  std::vector<double> q = target_net.forward(*transition.next_state);
  double best = -1e300;
  for (int a : allowed_actions) best = std::max(best, q.at(static_cast<std::size_t>(a)));
  return transition.reward + config.gamma * best;
}

// One DQN update: uniform batch, mean 0.5*(Q - y)^2 loss, single optimizer
// step. Returns the pre-step loss.
inline double train_step(TrainableQNet& net, const TrainableQNet& target_net,
                         ReplayBuffer& buffer, std::size_t batch_size,
                         AdamOptimizer& optimizer, const RewardConfig& config,
                         const std::vector<int>& allowed_actions) {
  std::vector<const Transition*> batch = buffer.sample(batch_size);
  std::vector<double> grad(net.params().size(), 0.0);
  double loss = 0.0;
  for (const Transition* t : batch) {
    double y = td_target(config, *t, target_net, allowed_actions);
    double q = net.forward(t->state).at(static_cast<std::size_t>(t->action_index));
    loss += 0.5 * (q - y) * (q - y);
    std::vector<double> g = net.backward(t->state, t->action_index, y);
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g[i];
  }
  double inv = 1.0 / static_cast<double>(batch.size());
  loss *= inv;
  for (double& g : grad) g *= inv;
  optimizer.apply(net.params(), std::move(grad));
  return loss;
}

// Hard parameter sync on a fixed step interval.
inline bool sync_target(const TrainableQNet& net, TrainableQNet& target_net, long step,
                        long every_n_steps = 250) {
  if (every_n_steps <= 0 || step % every_n_steps != 0) return false;
  copy_params(net, target_net);
  return true;
}

}  // namespace dyntree
