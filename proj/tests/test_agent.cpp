#include <doctest.h>

#include <map>
#include <set>

#include "dyntree/agent.hpp"

using namespace dyntree;

namespace {

// Test double with scripted Q-values.
class FixedQNet final : public QNet {
 public:
  explicit FixedQNet(std::vector<double> q, int input_dim = 4)
      : q_(std::move(q)), input_dim_(input_dim) {}
  int input_dim() const override { return input_dim_; }
  int num_actions() const override { return static_cast<int>(q_.size()); }
  std::vector<double> forward(std::span<const double>) const override { return q_; }

 private:
  std::vector<double> q_;
  int input_dim_;
};

// Chi-squared upper critical value via the Wilson-Hilferty approximation.
double chi2_critical(int df, double z_upper) {
  double k = static_cast<double>(df);
  double term = 1.0 - 2.0 / (9.0 * k) + z_upper * std::sqrt(2.0 / (9.0 * k));
  return k * term * term * term;
}

constexpr double kZ99 = 2.3263478740;  // Phi^-1(0.99)

Transition make_transition(double tag, bool terminal = true) {
  Transition t;
  t.state = StateVector{tag, 0.0, 0.0, 0.0};
  t.action_index = 0;
  t.reward = 0.0;
  t.terminal = terminal;
  if (!terminal) t.next_state = StateVector{tag, 1.0, 0.0, 0.0};
  return t;
}

}  // namespace

TEST_SUITE("agent") {

TEST_CASE("reward regimes carry the expected alpha/beta pairs") {
  CHECK(RewardConfig::high_accuracy().alpha == 2.0);
  CHECK(RewardConfig::high_accuracy().beta == 0.05);
  CHECK(RewardConfig::balanced().alpha == 1.0);
  CHECK(RewardConfig::balanced().beta == 0.1);
  CHECK(RewardConfig::efficiency().alpha == 0.5);
  CHECK(RewardConfig::efficiency().beta == 0.2);
}

TEST_CASE("compute_reward is exactly alpha*sim - beta*c") {
  CHECK(compute_reward(RewardConfig::high_accuracy(), 1.0, 0) == doctest::Approx(2.0));
  CHECK(compute_reward(RewardConfig::balanced(), 0.8, 3) == doctest::Approx(0.5));
  CHECK(compute_reward(RewardConfig::efficiency(), 0.8, 2) == doctest::Approx(0.0));
  CHECK_THROWS_AS(compute_reward(RewardConfig::balanced(), 0.5, -1), std::invalid_argument);
}

TEST_CASE("reward linearity: adding calls subtracts beta per call exactly") {
  RewardConfig config = RewardConfig::balanced();
  for (int c1 : {0, 1, 5}) {
    for (int c2 : {0, 2, 7}) {
      double lhs = compute_reward(config, 0.37, c1 + c2);
      double rhs = compute_reward(config, 0.37, c1) - config.beta * c2;
      CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
    }
  }
}

TEST_CASE("reward is increasing in alpha and decreasing in beta") {
  for (double sim : {0.2, 0.9}) {
    for (int calls : {1, 4}) {
      RewardConfig lo{RewardRegime::CUSTOM, 0.5, 0.1, 0.99};
      RewardConfig hi_alpha{RewardRegime::CUSTOM, 1.5, 0.1, 0.99};
      RewardConfig hi_beta{RewardRegime::CUSTOM, 0.5, 0.3, 0.99};
      CHECK(compute_reward(hi_alpha, sim, calls) > compute_reward(lo, sim, calls));
      CHECK(compute_reward(hi_beta, sim, calls) < compute_reward(lo, sim, calls));
    }
  }
}

TEST_CASE("select_action: greedy argmax with masks and low-index ties") {
  Rng rng(1);
  StateVector s{0, 0, 0, 0};
  FixedQNet net({0.2, 0.5, 0.3});
  CHECK(select_action(net, s, {0, 1, 2}, 0.0, rng) == 1);

  FixedQNet net2({0.9, 0.5});
  CHECK(select_action(net2, s, {1}, 0.0, rng) == 1);

  FixedQNet tie({0.7, 0.7, 0.1});
  CHECK(select_action(tie, s, {0, 1, 2}, 0.0, rng) == 0);
  CHECK(select_action(tie, s, {1, 0, 2}, 0.0, rng) == 0);

  CHECK_THROWS_AS(select_action(net, s, {}, 0.0, rng), std::invalid_argument);
}

TEST_CASE("select_action: positive rescaling leaves the greedy choice unchanged") {
  Rng rng(2);
  StateVector s{0, 0, 0, 0};
  FixedQNet base({0.1, 0.6, 0.4});
  FixedQNet scaled({0.1 * 7.3, 0.6 * 7.3, 0.4 * 7.3});
  CHECK(select_action(base, s, {0, 1, 2}, 0.0, rng) ==
        select_action(scaled, s, {0, 1, 2}, 0.0, rng));
}

TEST_CASE("select_action: epsilon=1 is uniform over the mask") {
  Rng rng(33);
  StateVector s{0, 0, 0, 0};
  FixedQNet net({5.0, 1.0, 0.0});
  std::map<int, int> counts;
  const int draws = 30000;
  for (int i = 0; i < draws; ++i) counts[select_action(net, s, {0, 1, 2}, 1.0, rng)]++;
  for (int a = 0; a < 3; ++a) {
    double freq = static_cast<double>(counts[a]) / draws;
    CHECK(std::abs(freq - 1.0 / 3.0) < 0.01);
  }
}

TEST_CASE("sampling mode follows the predicted action distribution") {
  // The agent-guided loop scenario: probabilities CB 0.2 / OB 0.3 / CHILD
  // 0.5; the majority (CHILD) branch dominates the sampled actions.
  std::vector<double> probs{0.2, 0.3, 0.5};
  Rng rng(7);
  std::map<int, int> counts;
  for (int i = 0; i < 20000; ++i) counts[sample_action(probs, {0, 1, 2}, rng)]++;
  CHECK(counts[2] > counts[1]);
  CHECK(counts[1] > counts[0]);
  CHECK(static_cast<double>(counts[2]) / 20000 == doctest::Approx(0.5).epsilon(0.05));

  // A single seeded draw lands on the half-mass CHILD branch.
  Rng seeded(7);
  CHECK(sample_action(probs, {0, 1, 2}, seeded) == 2);

  // action_distribution produces a valid masked softmax.
  FixedQNet net({1.0, 2.0, 0.5});
  std::vector<double> dist = action_distribution(net, StateVector{0, 0, 0, 0}, {0, 1, 2});
  double total = dist[0] + dist[1] + dist[2];
  CHECK(total == doctest::Approx(1.0));
  CHECK(dist[1] > dist[0]);
}

TEST_CASE("td_target: terminal, bootstrapped, and myopic cases") {
  FixedQNet target({1.0, 2.0, 0.0});
  RewardConfig config = RewardConfig::balanced();  // gamma 0.99

  Transition terminal = make_transition(0.0, true);
  terminal.reward = 0.5;
  CHECK(td_target(config, terminal, target, {0, 1, 2}) == doctest::Approx(0.5));

  Transition mid = make_transition(0.0, false);
  mid.reward = 0.0;
  CHECK(td_target(config, mid, target, {0, 1, 2}) == doctest::Approx(1.98));
  // Masked max ignores disallowed actions.
  CHECK(td_target(config, mid, target, {0, 2}) == doctest::Approx(0.99));

  RewardConfig myopic = config;
  myopic.gamma = 0.0;
  mid.reward = 0.7;
  CHECK(td_target(myopic, mid, target, {0, 1, 2}) == doctest::Approx(0.7));
}

TEST_CASE("replay buffer: FIFO eviction is exact") {
  ReplayBuffer buffer(100, 5);
  for (int i = 0; i < 125; ++i) buffer.push(make_transition(static_cast<double>(i)));
  CHECK(buffer.size() == 100);
  std::set<int> present;
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    present.insert(static_cast<int>(buffer.at(i).state[0]));
  }
  for (int i = 0; i < 25; ++i) CHECK(present.count(i) == 0);
  for (int i = 25; i < 125; ++i) CHECK(present.count(i) == 1);
}

TEST_CASE("replay buffer: uniform sampling passes a chi-squared test") {
  ReplayBuffer buffer(200, 9);
  const int n = 100;
  for (int i = 0; i < n; ++i) buffer.push(make_transition(static_cast<double>(i)));
  std::map<int, long> counts;
  const int batch = 20;
  const long total_draws = 100000;
  for (long d = 0; d < total_draws / batch; ++d) {
    for (const Transition* t : buffer.sample(batch)) {
      counts[static_cast<int>(t->state[0])]++;
    }
  }
  double expected = static_cast<double>(total_draws) / n;
  double chi2 = 0.0;
  for (int i = 0; i < n; ++i) {
    double diff = static_cast<double>(counts[i]) - expected;
    chi2 += diff * diff / expected;
  }
  CHECK(chi2 < chi2_critical(n - 1, kZ99));  // p > 0.01
}

TEST_CASE("replay buffer: sampling more than stored is an error") {
  ReplayBuffer buffer(10, 1);
  buffer.push(make_transition(1.0));
  CHECK_THROWS_AS(buffer.sample(2), std::invalid_argument);
  CHECK_THROWS_AS(ReplayBuffer(0), std::invalid_argument);
}

TEST_CASE("train_step: zero residual leaves parameters unchanged") {
  MlpQNet net(4, 3, 77);
  auto target = net.clone();
  ReplayBuffer buffer(64, 3);
  // Transition whose td_target equals the current Q-value exactly.
  StateVector s{0.1, -0.2, 0.3, 0.4};
  double q0 = net.forward(s)[0];
  Transition t;
  t.state = s;
  t.action_index = 0;
  t.reward = q0;
  t.terminal = true;
  for (int i = 0; i < 40; ++i) buffer.push(t);
  AdamOptimizer opt;
  std::vector<float> before = net.params();
  double loss = train_step(net, *target, buffer, 32, opt, RewardConfig::balanced(), {0, 1, 2});
  CHECK(loss == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(net.params() == before);  // zero gradient, zero Adam update
}

TEST_CASE("train_step: loss decreases over repeated steps on one transition") {
  MlpQNet net(4, 3, 5);
  auto target = net.clone();
  ReplayBuffer buffer(64, 3);
  Transition t;
  t.state = StateVector{0.5, -0.1, 0.9, 0.0};
  t.action_index = 2;
  t.reward = 1.7;
  t.terminal = true;
  for (int i = 0; i < 32; ++i) buffer.push(t);
  AdamOptimizer opt;
  RewardConfig config = RewardConfig::balanced();
  double first = train_step(net, *target, buffer, 32, opt, config, {0, 1, 2});
  double last = first;
  for (int step = 0; step < 199; ++step) {
    last = train_step(net, *target, buffer, 32, opt, config, {0, 1, 2});
  }
  CHECK(last < first);

  CHECK_THROWS_AS(train_step(net, *target, buffer, 64, opt, config, {0, 1, 2}),
                  std::invalid_argument);
}

TEST_CASE("sync_target: hard copies on schedule, isolation in between") {
  Rng rng(12);
  MlpQNet net(4, 2, 1);
  MlpQNet target(4, 2, 2);
  StateVector s{0.3, 0.1, -0.4, 0.9};
  CHECK(net.forward(s) != target.forward(s));

  CHECK(sync_target(net, target, 250, 250));
  for (int i = 0; i < 100; ++i) {
    StateVector r{rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()};
    CHECK(net.forward(r) == target.forward(r));
  }

  // Off-schedule steps do not copy; training net drift leaves target fixed.
  std::vector<double> target_q = target.forward(s);
  net.params()[0] += 0.5f;
  CHECK_FALSE(sync_target(net, target, 251, 250));
  CHECK(target.forward(s) == target_q);

  // Interval 1: target equals the online net after every step.
  for (long step = 1; step <= 5; ++step) {
    net.params()[1] += 0.1f;
    CHECK(sync_target(net, target, step, 1));
    CHECK(target.params() == net.params());
  }

  MlpQNet mismatched(5, 2, 3);
  CHECK_THROWS_AS(sync_target(net, mismatched, 250, 250), std::invalid_argument);
}

TEST_CASE("epsilon schedule decays linearly and monotonically") {
  EpsilonSchedule schedule;
  CHECK(schedule.at(0, 1000) == doctest::Approx(1.0));
  CHECK(schedule.at(250, 1000) == doctest::Approx(0.525));
  CHECK(schedule.at(500, 1000) == doctest::Approx(0.05));
  CHECK(schedule.at(999, 1000) == doctest::Approx(0.05));
  double prev = 2.0;
  for (int ep = 0; ep < 1000; ep += 10) {
    double e = schedule.at(ep, 1000);
    CHECK(e <= prev);
    CHECK(e >= schedule.end);
    CHECK(e <= schedule.start);
    prev = e;
  }
}

}  // TEST_SUITE
