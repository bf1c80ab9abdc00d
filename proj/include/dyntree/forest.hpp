#pragma once

// Bagged decision-tree ensemble over log-probability features, used by the
// greedy baseline to predict per-strategy answer reliability. Gini splits,
// bootstrap sampling, majority vote; fully deterministic under a seed.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "dyntree/rng.hpp"
#include "dyntree/tree.hpp"

namespace dyntree {

constexpr int kReliabilityFeatureCount = 5;
using FeatureVector = std::array<double, kReliabilityFeatureCount>;

// [mean, min, max, std of token log-probs, answer token length]
inline FeatureVector reliability_features(const StrategyResult& result) {
  FeatureVector f{0.0, 0.0, 0.0, 0.0, 0.0};
  const auto& lps = result.token_logprobs;
  if (!lps.empty()) {
    double sum = 0.0, lo = lps[0], hi = lps[0];
    for (double lp : lps) {
      sum += lp;
      lo = std::min(lo, lp);
      hi = std::max(hi, lp);
    }
    double mean = sum / static_cast<double>(lps.size());
    double var = 0.0;
    for (double lp : lps) var += (lp - mean) * (lp - mean);
    var /= static_cast<double>(lps.size());
    f[0] = mean;
    f[1] = lo;
    f[2] = hi;
    f[3] = std::sqrt(var);
  }
  f[4] = static_cast<double>(token_count(result.answer_text));
  return f;
}

struct LabeledFeatures {
  FeatureVector features{};
  int label = 0;  // 1 = answer was correct
};

class DecisionTree {
 public:
  void train(const std::vector<LabeledFeatures>& data, const std::vector<std::size_t>& subset,
             int max_depth) {
    nodes_.clear();
    build(data, subset, max_depth);
  }

  int predict(const FeatureVector& f) const {
    if (nodes_.empty()) return 0;
    std::size_t at = 0;
    while (!nodes_[at].leaf) {
      const Node& n = nodes_[at];
      at = f[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
    }
    return nodes_[at].label;
  }

 private:
  struct Node {
    bool leaf = true;
    int label = 0;
    int feature = 0;
    double threshold = 0.0;
    std::size_t left = 0;
    std::size_t right = 0;
  };

  static double gini(int ones, int total) {
    if (total == 0) return 0.0;
    double p = static_cast<double>(ones) / total;
    return 2.0 * p * (1.0 - p);
  }

  std::size_t build(const std::vector<LabeledFeatures>& data,
                    const std::vector<std::size_t>& subset, int depth_left) {
    std::size_t id = nodes_.size();
    nodes_.push_back(Node{});

    int ones = 0;
    for (std::size_t i : subset) ones += data[i].label;
    int majority = 2 * ones > static_cast<int>(subset.size()) ? 1 : 0;
    nodes_[id].label = majority;
    if (depth_left <= 0 || subset.size() < 2 || ones == 0 ||
        ones == static_cast<int>(subset.size())) {
      return id;
    }

    // Best Gini split over all features and midpoint thresholds.
    double parent = gini(ones, static_cast<int>(subset.size()));
    double best_gain = 1e-12;
    int best_feature = -1;
    double best_threshold = 0.0;
    for (int feat = 0; feat < kReliabilityFeatureCount; ++feat) {
      std::vector<std::pair<double, int>> values;
      values.reserve(subset.size());
      for (std::size_t i : subset) {
        values.emplace_back(data[i].features[static_cast<std::size_t>(feat)], data[i].label);
      }
      std::sort(values.begin(), values.end());
      int left_ones = 0;
      for (std::size_t k = 0; k + 1 < values.size(); ++k) {
        left_ones += values[k].second;
        if (values[k].first == values[k + 1].first) continue;
        int left_n = static_cast<int>(k) + 1;
        int right_n = static_cast<int>(values.size()) - left_n;
        double w_left = static_cast<double>(left_n) / values.size();
        double w_right = static_cast<double>(right_n) / values.size();
        double child = w_left * gini(left_ones, left_n) + w_right * gini(ones - left_ones, right_n);
        double gain = parent - child;
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = feat;
          best_threshold = 0.5 * (values[k].first + values[k + 1].first);
        }
      }
    }
    if (best_feature < 0) return id;

    std::vector<std::size_t> left, right;
    for (std::size_t i : subset) {
      if (data[i].features[static_cast<std::size_t>(best_feature)] <= best_threshold) {
        left.push_back(i);
      } else {
        right.push_back(i);
      }
    }
    if (left.empty() || right.empty()) return id;

    nodes_[id].leaf = false;
    nodes_[id].feature = best_feature;
    nodes_[id].threshold = best_threshold;
    std::size_t l = build(data, left, depth_left - 1);
    std::size_t r = build(data, right, depth_left - 1);
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
  }

  std::vector<Node> nodes_;
};

struct ForestConfig {
  int n_trees = 50;
  int max_depth = 4;
  std::uint64_t seed = 0;
};

class RandomForest {
 public:
  void train(const std::vector<LabeledFeatures>& data, const ForestConfig& config) {
    if (data.empty()) throw std::invalid_argument("RandomForest: no training data");
    trees_.assign(static_cast<std::size_t>(config.n_trees), DecisionTree{});
    Rng rng(config.seed);
    for (DecisionTree& tree : trees_) {
      std::vector<std::size_t> bootstrap(data.size());
      for (std::size_t& i : bootstrap) i = rng.uniform_index(data.size());
      tree.train(data, bootstrap, config.max_depth);
    }
  }

  bool trained() const { return !trees_.empty(); }

  // Fraction of trees voting "reliable".
  double predict_proba(const FeatureVector& f) const {
    if (trees_.empty()) return 0.0;
    int ones = 0;
    for (const DecisionTree& tree : trees_) ones += tree.predict(f);
    return static_cast<double>(ones) / static_cast<double>(trees_.size());
  }

  int predict(const FeatureVector& f) const { return predict_proba(f) > 0.5 ? 1 : 0; }

 private:
  std::vector<DecisionTree> trees_;
};

}  // namespace dyntree
