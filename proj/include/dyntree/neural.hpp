#pragma once

// From-scratch Q-value approximators: an MLP and a small pre-norm
// Transformer encoder, with hand-written reverse-mode gradients, an Adam
// optimizer with global-norm clipping, and a binary checkpoint format.
//
// Parameters are stored as 32-bit floats (the checkpoint payload format);
// all arithmetic runs in double. Loss convention everywhere:
// L = 0.5 * (Q(s, a) - td_target)^2.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dyntree/errors.hpp"
#include "dyntree/rng.hpp"

namespace dyntree {

enum class ArchKind : std::uint32_t { mlp = 0, transformer = 1 };

struct ArchDescriptor {
  ArchKind kind = ArchKind::mlp;
  int input_dim = 0;
  int n_actions = 0;

  bool operator==(const ArchDescriptor&) const = default;
};

class QNet {
 public:
  virtual ~QNet() = default;
  virtual int input_dim() const = 0;
  virtual int num_actions() const = 0;
  virtual std::vector<double> forward(std::span<const double> state) const = 0;
};

class TrainableQNet : public QNet {
 public:
  virtual ArchDescriptor arch() const = 0;
  virtual std::vector<float>& params() = 0;
  virtual const std::vector<float>& params() const = 0;
  // d(0.5 * (Q(s,a) - y)^2) / d(theta), flat and aligned with params().
  virtual std::vector<double> backward(std::span<const double> state, int action_index,
                                       double td_target) const = 0;
  virtual std::unique_ptr<TrainableQNet> clone() const = 0;
};

inline void copy_params(const TrainableQNet& src, TrainableQNet& dst) {
  if (!(src.arch() == dst.arch())) {
    throw std::invalid_argument("copy_params: architecture mismatch");
  }
  dst.params() = src.params();
}

namespace detail {

// out[r] = sum_c W[r*cols+c] * x[c] + b[r], double accumulation over float
// parameters.
inline void affine(const std::vector<float>& p, std::size_t w_off, std::size_t b_off,
                   int rows, int cols, const double* x, double* out) {
  for (int r = 0; r < rows; ++r) {
    double acc = static_cast<double>(p[b_off + r]);
    const float* wrow = p.data() + w_off + static_cast<std::size_t>(r) * cols;
    for (int c = 0; c < cols; ++c) acc += static_cast<double>(wrow[c]) * x[c];
    out[r] = acc;
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// MLP: [input, 128, 128, n_actions], ReLU hidden, linear output.
// ---------------------------------------------------------------------------

class MlpQNet final : public TrainableQNet {
 public:
  static constexpr int kHidden = 128;

  MlpQNet(int input_dim, int n_actions, std::uint64_t seed = 1)
      : input_dim_(input_dim), n_actions_(n_actions) {
    if (input_dim < 1 || n_actions < 1) {
      throw std::invalid_argument("MlpQNet: dimensions must be positive");
    }
    layer_sizes_ = {input_dim_, kHidden, kHidden, n_actions_};
    std::size_t total = 0;
    for (std::size_t l = 0; l + 1 < layer_sizes_.size(); ++l) {
      total += static_cast<std::size_t>(layer_sizes_[l + 1]) * layer_sizes_[l];
      total += static_cast<std::size_t>(layer_sizes_[l + 1]);
    }
    params_.resize(total);
    Rng rng(seed);
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < layer_sizes_.size(); ++l) {
      int fan_in = layer_sizes_[l];
      int fan_out = layer_sizes_[l + 1];
      double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
      for (int i = 0; i < fan_out * fan_in; ++i) {
        params_[off++] = static_cast<float>(rng.uniform(-limit, limit));
      }
      for (int i = 0; i < fan_out; ++i) params_[off++] = 0.0f;
    }
  }

  int input_dim() const override { return input_dim_; }
  int num_actions() const override { return n_actions_; }
  ArchDescriptor arch() const override { return {ArchKind::mlp, input_dim_, n_actions_}; }
  std::vector<float>& params() override { return params_; }
  const std::vector<float>& params() const override { return params_; }

  std::vector<double> forward(std::span<const double> state) const override {
    check_input(state);
    std::vector<std::vector<double>> acts;
    run_forward(state, acts);
    return acts.back();
  }

  // Active-ReLU pattern for a state; finite-difference checks use it to
  // reject stencils that straddle a kink.
  std::vector<char> relu_gates(std::span<const double> state) const {
    check_input(state);
    std::vector<std::vector<double>> acts, pre;
    run_forward(state, acts, &pre);
    std::vector<char> gates;
    for (const auto& layer : pre) {
      for (double z : layer) gates.push_back(z > 0.0 ? 1 : 0);
    }
    return gates;
  }

  std::vector<double> backward(std::span<const double> state, int action_index,
                               double td_target) const override {
    check_input(state);
    if (action_index < 0 || action_index >= n_actions_) {
      throw std::invalid_argument("MlpQNet::backward: action index out of range");
    }
    std::vector<std::vector<double>> acts;  // acts[0] = input, acts[L] = output
    std::vector<std::vector<double>> pre;   // pre-activation per non-input layer
    run_forward(state, acts, &pre);

    std::vector<double> grad(params_.size(), 0.0);
    const std::size_t n_layers = layer_sizes_.size() - 1;
    std::vector<double> delta(static_cast<std::size_t>(n_actions_), 0.0);
    double residual = acts.back()[static_cast<std::size_t>(action_index)] - td_target;
    delta[static_cast<std::size_t>(action_index)] = residual;

    // Walk layers backwards; offsets recomputed per layer.
    for (std::size_t l = n_layers; l-- > 0;) {
      auto [w_off, b_off] = layer_offsets(l);
      int rows = layer_sizes_[l + 1];
      int cols = layer_sizes_[l];
      const std::vector<double>& input = acts[l];
      for (int r = 0; r < rows; ++r) {
        grad[b_off + r] += delta[static_cast<std::size_t>(r)];
        double d = delta[static_cast<std::size_t>(r)];
        std::size_t row_off = w_off + static_cast<std::size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) grad[row_off + c] += d * input[static_cast<std::size_t>(c)];
      }
      if (l == 0) break;
      std::vector<double> next(static_cast<std::size_t>(cols), 0.0);
      for (int c = 0; c < cols; ++c) {
        double acc = 0.0;
        for (int r = 0; r < rows; ++r) {
          acc += static_cast<double>(params_[w_off + static_cast<std::size_t>(r) * cols + c]) *
                 delta[static_cast<std::size_t>(r)];
        }
        // ReLU mask from the previous layer's pre-activation.
        acc *= pre[l - 1][static_cast<std::size_t>(c)] > 0.0 ? 1.0 : 0.0;
        next[static_cast<std::size_t>(c)] = acc;
      }
      delta = std::move(next);
    }
    return grad;
  }

  std::unique_ptr<TrainableQNet> clone() const override {
    return std::make_unique<MlpQNet>(*this);
  }

 private:
  void check_input(std::span<const double> state) const {
    if (static_cast<int>(state.size()) != input_dim_) {
      throw std::invalid_argument("MlpQNet: state length " + std::to_string(state.size()) +
                                  " != input_dim " + std::to_string(input_dim_));
    }
  }

  std::pair<std::size_t, std::size_t> layer_offsets(std::size_t layer) const {
    std::size_t off = 0;
    for (std::size_t l = 0; l < layer; ++l) {
      off += static_cast<std::size_t>(layer_sizes_[l + 1]) * layer_sizes_[l];
      off += static_cast<std::size_t>(layer_sizes_[l + 1]);
    }
    std::size_t w_off = off;
    std::size_t b_off = off + static_cast<std::size_t>(layer_sizes_[layer + 1]) *
                                  layer_sizes_[layer];
    return {w_off, b_off};
  }

  void run_forward(std::span<const double> state, std::vector<std::vector<double>>& acts,
                   std::vector<std::vector<double>>* pre_out = nullptr) const {
    acts.clear();
    acts.emplace_back(state.begin(), state.end());
    const std::size_t n_layers = layer_sizes_.size() - 1;
    for (std::size_t l = 0; l < n_layers; ++l) {
      auto [w_off, b_off] = layer_offsets(l);
      int rows = layer_sizes_[l + 1];
      int cols = layer_sizes_[l];
      std::vector<double> z(static_cast<std::size_t>(rows));
      detail::affine(params_, w_off, b_off, rows, cols, acts.back().data(), z.data());
      if (pre_out && l < n_layers - 1) pre_out->push_back(z);
      if (l < n_layers - 1) {
        for (double& x : z) x = x > 0.0 ? x : 0.0;  // ReLU on hidden layers
      }
      acts.push_back(std::move(z));
    }
  }

  int input_dim_;
  int n_actions_;
  std::vector<int> layer_sizes_;
  std::vector<float> params_;
};

// ---------------------------------------------------------------------------
// Transformer encoder Q-net. The flat state is reshaped into 16-dim tokens
// (zero-padded), linearly embedded to width 64 with sinusoidal positions,
// passed through 2 pre-norm blocks (4 heads, FF width 128), mean-pooled,
// and projected to action values.
// ---------------------------------------------------------------------------

class TransformerQNet final : public TrainableQNet {
 public:
  static constexpr int kTokenDim = 16;
  static constexpr int kModelDim = 64;
  static constexpr int kHeads = 4;
  static constexpr int kHeadDim = kModelDim / kHeads;
  static constexpr int kFfDim = 128;
  static constexpr int kLayers = 2;
  static constexpr double kLnEps = 1e-5;

  // Exposed for tests: per-layer, per-head, per-query attention rows.
  struct AttentionTrace {
    // attn[layer][head][query * T + key]
    std::vector<std::array<std::vector<double>, kHeads>> attn;
    int tokens = 0;
  };

  TransformerQNet(int input_dim, int n_actions, std::uint64_t seed = 1)
      : input_dim_(input_dim), n_actions_(n_actions) {
    if (input_dim < 1 || n_actions < 1) {
      throw std::invalid_argument("TransformerQNet: dimensions must be positive");
    }
    tokens_ = (input_dim + kTokenDim - 1) / kTokenDim;
    params_.resize(param_count());
    Rng rng(seed);
    init_params(rng);
  }

  int input_dim() const override { return input_dim_; }
  int num_actions() const override { return n_actions_; }
  int token_count() const { return tokens_; }
  ArchDescriptor arch() const override {
    return {ArchKind::transformer, input_dim_, n_actions_};
  }
  std::vector<float>& params() override { return params_; }
  const std::vector<float>& params() const override { return params_; }

  std::vector<double> forward(std::span<const double> state) const override {
    Trace trace;
    return run_forward(state, trace, nullptr);
  }

  std::vector<double> forward_with_attention(std::span<const double> state,
                                             AttentionTrace& attention) const {
    Trace trace;
    return run_forward(state, trace, &attention);
  }

  // Active-ReLU pattern of the feed-forward sublayers (see MlpQNet).
  std::vector<char> relu_gates(std::span<const double> state) const {
    Trace trace;
    run_forward(state, trace, nullptr);
    std::vector<char> gates;
    for (const auto& layer : trace.layer) {
      for (double z : layer.ff_pre) gates.push_back(z > 0.0 ? 1 : 0);
    }
    return gates;
  }

  std::vector<double> backward(std::span<const double> state, int action_index,
                               double td_target) const override;

  std::unique_ptr<TrainableQNet> clone() const override {
    return std::make_unique<TransformerQNet>(*this);
  }

 private:
  // Parameter block offsets, in declaration order.
  struct Offsets {
    std::size_t embed_w, embed_b;
    struct Layer {
      std::size_t ln1_g, ln1_b;
      std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
      std::size_t ln2_g, ln2_b;
      std::size_t w1, b1, w2, b2;
    };
    std::array<Layer, kLayers> layer;
    std::size_t lnf_g, lnf_b;
    std::size_t head_w, head_b;
    std::size_t total;
  };

  Offsets offsets() const {
    Offsets o{};
    std::size_t at = 0;
    auto take = [&at](std::size_t n) {
      std::size_t r = at;
      at += n;
      return r;
    };
    o.embed_w = take(static_cast<std::size_t>(kModelDim) * kTokenDim);
    o.embed_b = take(kModelDim);
    for (int l = 0; l < kLayers; ++l) {
      auto& L = o.layer[static_cast<std::size_t>(l)];
      L.ln1_g = take(kModelDim);
      L.ln1_b = take(kModelDim);
      L.wq = take(static_cast<std::size_t>(kModelDim) * kModelDim);
      L.bq = take(kModelDim);
      L.wk = take(static_cast<std::size_t>(kModelDim) * kModelDim);
      L.bk = take(kModelDim);
      L.wv = take(static_cast<std::size_t>(kModelDim) * kModelDim);
      L.bv = take(kModelDim);
      L.wo = take(static_cast<std::size_t>(kModelDim) * kModelDim);
      L.bo = take(kModelDim);
      L.ln2_g = take(kModelDim);
      L.ln2_b = take(kModelDim);
      L.w1 = take(static_cast<std::size_t>(kFfDim) * kModelDim);
      L.b1 = take(kFfDim);
      L.w2 = take(static_cast<std::size_t>(kModelDim) * kFfDim);
      L.b2 = take(kModelDim);
    }
    o.lnf_g = take(kModelDim);
    o.lnf_b = take(kModelDim);
    o.head_w = take(static_cast<std::size_t>(n_actions_) * kModelDim);
    o.head_b = take(static_cast<std::size_t>(n_actions_));
    o.total = at;
    return o;
  }

  std::size_t param_count() const { return offsets().total; }

  void init_params(Rng& rng) {
    Offsets o = offsets();
    auto fill_uniform = [&](std::size_t off, std::size_t n, int fan_in) {
      double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
      for (std::size_t i = 0; i < n; ++i) {
        params_[off + i] = static_cast<float>(rng.uniform(-limit, limit));
      }
    };
    auto fill_const = [&](std::size_t off, std::size_t n, float v) {
      for (std::size_t i = 0; i < n; ++i) params_[off + i] = v;
    };
    fill_uniform(o.embed_w, static_cast<std::size_t>(kModelDim) * kTokenDim, kTokenDim);
    fill_const(o.embed_b, kModelDim, 0.0f);
    for (int l = 0; l < kLayers; ++l) {
      const auto& L = o.layer[static_cast<std::size_t>(l)];
      fill_const(L.ln1_g, kModelDim, 1.0f);
      fill_const(L.ln1_b, kModelDim, 0.0f);
      for (std::size_t w : {L.wq, L.wk, L.wv, L.wo}) {
        fill_uniform(w, static_cast<std::size_t>(kModelDim) * kModelDim, kModelDim);
      }
      for (std::size_t b : {L.bq, L.bk, L.bv, L.bo}) fill_const(b, kModelDim, 0.0f);
      fill_const(L.ln2_g, kModelDim, 1.0f);
      fill_const(L.ln2_b, kModelDim, 0.0f);
      fill_uniform(L.w1, static_cast<std::size_t>(kFfDim) * kModelDim, kModelDim);
      fill_const(L.b1, kFfDim, 0.0f);
      fill_uniform(L.w2, static_cast<std::size_t>(kModelDim) * kFfDim, kFfDim);
      fill_const(L.b2, kModelDim, 0.0f);
    }
    fill_const(o.lnf_g, kModelDim, 1.0f);
    fill_const(o.lnf_b, kModelDim, 0.0f);
    fill_uniform(o.head_w, static_cast<std::size_t>(n_actions_) * kModelDim, kModelDim);
    fill_const(o.head_b, static_cast<std::size_t>(n_actions_), 0.0f);
  }

  // Forward intermediates kept for the backward pass. All [T x dim] arrays
  // are stored row-major per token.
  struct LnTrace {
    std::vector<double> xhat;     // T x kModelDim
    std::vector<double> inv_std;  // T
    std::vector<double> out;      // T x kModelDim
  };
  struct LayerTrace {
    std::vector<double> x_in;  // T x D, input to the block
    LnTrace ln1;
    std::vector<double> q, k, v;          // T x D each
    std::array<std::vector<double>, kHeads> attn;  // T x T per head
    std::vector<double> ctx;              // T x D, concatenated head outputs
    std::vector<double> x_mid;            // after attention residual
    LnTrace ln2;
    std::vector<double> ff_pre;  // T x kFfDim, pre-ReLU
    std::vector<double> ff_act;  // T x kFfDim
  };
  struct Trace {
    std::vector<double> tokens;  // T x kTokenDim, zero-padded input
    std::vector<double> embed;   // T x D, embedding + positions
    std::array<LayerTrace, kLayers> layer;
    std::vector<double> x_final;  // T x D
    LnTrace lnf;
    std::vector<double> pooled;  // D
  };

  static double positional(int t, int i) {
    double exponent = static_cast<double>(2 * (i / 2)) / static_cast<double>(kModelDim);
    double rate = std::pow(10000.0, exponent);
    double angle = static_cast<double>(t) / rate;
    return (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
  }

  void layer_norm(const double* x, std::size_t g_off, std::size_t b_off, int t, LnTrace& ln)
      const {
    double mean = 0.0;
    for (int i = 0; i < kModelDim; ++i) mean += x[i];
    mean /= kModelDim;
    double var = 0.0;
    for (int i = 0; i < kModelDim; ++i) {
      double d = x[i] - mean;
      var += d * d;
    }
    var /= kModelDim;
    double inv = 1.0 / std::sqrt(var + kLnEps);
    ln.inv_std[static_cast<std::size_t>(t)] = inv;
    double* xh = ln.xhat.data() + static_cast<std::size_t>(t) * kModelDim;
    double* out = ln.out.data() + static_cast<std::size_t>(t) * kModelDim;
    for (int i = 0; i < kModelDim; ++i) {
      xh[i] = (x[i] - mean) * inv;
      out[i] = static_cast<double>(params_[g_off + i]) * xh[i] +
               static_cast<double>(params_[b_off + i]);
    }
  }

  std::vector<double> run_forward(std::span<const double> state, Trace& trace,
                                  AttentionTrace* attention) const;

  void layer_norm_backward(const LnTrace& ln, std::size_t g_off, const double* dout, int t,
                           double* dx, std::vector<double>& grad, std::size_t gg_off,
                           std::size_t gb_off) const {
    // dx = inv_std * (dy*g - mean(dy*g) - xhat * mean(dy*g*xhat))
    const double* xh = ln.xhat.data() + static_cast<std::size_t>(t) * kModelDim;
    double inv = ln.inv_std[static_cast<std::size_t>(t)];
    double sum_dg = 0.0, sum_dgx = 0.0;
    for (int i = 0; i < kModelDim; ++i) {
      double dg = dout[i] * static_cast<double>(params_[g_off + i]);
      sum_dg += dg;
      sum_dgx += dg * xh[i];
      grad[gg_off + i] += dout[i] * xh[i];
      grad[gb_off + i] += dout[i];
    }
    double mean_dg = sum_dg / kModelDim;
    double mean_dgx = sum_dgx / kModelDim;
    for (int i = 0; i < kModelDim; ++i) {
      double dg = dout[i] * static_cast<double>(params_[g_off + i]);
      dx[i] += inv * (dg - mean_dg - xh[i] * mean_dgx);
    }
  }

  int input_dim_;
  int n_actions_;
  int tokens_;
  std::vector<float> params_;
};

inline std::vector<double> TransformerQNet::run_forward(std::span<const double> state,
                                                        Trace& trace,
                                                        AttentionTrace* attention) const {
  if (static_cast<int>(state.size()) != input_dim_) {
    throw std::invalid_argument("TransformerQNet: state length mismatch");
  }
  const int T = tokens_;
  const Offsets o = offsets();
  const std::size_t TD = static_cast<std::size_t>(T) * kModelDim;

  trace.tokens.assign(static_cast<std::size_t>(T) * kTokenDim, 0.0);
  std::copy(state.begin(), state.end(), trace.tokens.begin());

  trace.embed.resize(TD);
  for (int t = 0; t < T; ++t) {
    detail::affine(params_, o.embed_w, o.embed_b, kModelDim, kTokenDim,
                   trace.tokens.data() + static_cast<std::size_t>(t) * kTokenDim,
                   trace.embed.data() + static_cast<std::size_t>(t) * kModelDim);
    for (int i = 0; i < kModelDim; ++i) {
      trace.embed[static_cast<std::size_t>(t) * kModelDim + i] += positional(t, i);
    }
  }

  if (attention) {
    attention->attn.clear();
    attention->attn.resize(kLayers);
    attention->tokens = T;
  }

  std::vector<double> x = trace.embed;
  const double scale = 1.0 / std::sqrt(static_cast<double>(kHeadDim));

  for (int l = 0; l < kLayers; ++l) {
    const auto& L = o.layer[static_cast<std::size_t>(l)];
    LayerTrace& lt = trace.layer[static_cast<std::size_t>(l)];
    lt.x_in = x;

    lt.ln1.xhat.resize(TD);
    lt.ln1.out.resize(TD);
    lt.ln1.inv_std.resize(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) {
      layer_norm(x.data() + static_cast<std::size_t>(t) * kModelDim, L.ln1_g, L.ln1_b, t,
                 lt.ln1);
    }

    lt.q.resize(TD);
    lt.k.resize(TD);
    lt.v.resize(TD);
    for (int t = 0; t < T; ++t) {
      const double* u = lt.ln1.out.data() + static_cast<std::size_t>(t) * kModelDim;
      detail::affine(params_, L.wq, L.bq, kModelDim, kModelDim, u,
                     lt.q.data() + static_cast<std::size_t>(t) * kModelDim);
      detail::affine(params_, L.wk, L.bk, kModelDim, kModelDim, u,
                     lt.k.data() + static_cast<std::size_t>(t) * kModelDim);
      detail::affine(params_, L.wv, L.bv, kModelDim, kModelDim, u,
                     lt.v.data() + static_cast<std::size_t>(t) * kModelDim);
    }

    lt.ctx.assign(TD, 0.0);
    for (int h = 0; h < kHeads; ++h) {
      std::vector<double>& attn = lt.attn[static_cast<std::size_t>(h)];
      attn.assign(static_cast<std::size_t>(T) * T, 0.0);
      const int hoff = h * kHeadDim;
      for (int t = 0; t < T; ++t) {
        const double* qt = lt.q.data() + static_cast<std::size_t>(t) * kModelDim + hoff;
        double max_score = -1e300;
        std::vector<double> scores(static_cast<std::size_t>(T));
        for (int s = 0; s < T; ++s) {
          const double* ks = lt.k.data() + static_cast<std::size_t>(s) * kModelDim + hoff;
          double dot = 0.0;
          for (int i = 0; i < kHeadDim; ++i) dot += qt[i] * ks[i];
          scores[static_cast<std::size_t>(s)] = dot * scale;
          max_score = std::max(max_score, scores[static_cast<std::size_t>(s)]);
        }
        double denom = 0.0;
        for (int s = 0; s < T; ++s) {
          double e = std::exp(scores[static_cast<std::size_t>(s)] - max_score);
          attn[static_cast<std::size_t>(t) * T + s] = e;
          denom += e;
        }
        double* ctx = lt.ctx.data() + static_cast<std::size_t>(t) * kModelDim + hoff;
        for (int s = 0; s < T; ++s) {
          attn[static_cast<std::size_t>(t) * T + s] /= denom;
          const double a = attn[static_cast<std::size_t>(t) * T + s];
          const double* vs = lt.v.data() + static_cast<std::size_t>(s) * kModelDim + hoff;
          for (int i = 0; i < kHeadDim; ++i) ctx[i] += a * vs[i];
        }
      }
      if (attention) attention->attn[static_cast<std::size_t>(l)][static_cast<std::size_t>(h)] = attn;
    }

    lt.x_mid.resize(TD);
    for (int t = 0; t < T; ++t) {
      std::vector<double> out(kModelDim);
      detail::affine(params_, L.wo, L.bo, kModelDim, kModelDim,
                     lt.ctx.data() + static_cast<std::size_t>(t) * kModelDim, out.data());
      for (int i = 0; i < kModelDim; ++i) {
        lt.x_mid[static_cast<std::size_t>(t) * kModelDim + i] =
            x[static_cast<std::size_t>(t) * kModelDim + i] + out[static_cast<std::size_t>(i)];
      }
    }

    lt.ln2.xhat.resize(TD);
    lt.ln2.out.resize(TD);
    lt.ln2.inv_std.resize(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) {
      layer_norm(lt.x_mid.data() + static_cast<std::size_t>(t) * kModelDim, L.ln2_g, L.ln2_b,
                 t, lt.ln2);
    }

    lt.ff_pre.resize(static_cast<std::size_t>(T) * kFfDim);
    lt.ff_act.resize(static_cast<std::size_t>(T) * kFfDim);
    std::vector<double> x_out(TD);
    for (int t = 0; t < T; ++t) {
      double* pre = lt.ff_pre.data() + static_cast<std::size_t>(t) * kFfDim;
      detail::affine(params_, L.w1, L.b1, kFfDim, kModelDim,
                     lt.ln2.out.data() + static_cast<std::size_t>(t) * kModelDim, pre);
      double* act = lt.ff_act.data() + static_cast<std::size_t>(t) * kFfDim;
      for (int i = 0; i < kFfDim; ++i) act[i] = pre[i] > 0.0 ? pre[i] : 0.0;
      std::vector<double> out(kModelDim);
      detail::affine(params_, L.w2, L.b2, kModelDim, kFfDim, act, out.data());
      for (int i = 0; i < kModelDim; ++i) {
        x_out[static_cast<std::size_t>(t) * kModelDim + i] =
            lt.x_mid[static_cast<std::size_t>(t) * kModelDim + i] +
            out[static_cast<std::size_t>(i)];
      }
    }
    x = std::move(x_out);
  }

  trace.x_final = x;
  trace.lnf.xhat.resize(TD);
  trace.lnf.out.resize(TD);
  trace.lnf.inv_std.resize(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    layer_norm(x.data() + static_cast<std::size_t>(t) * kModelDim, o.lnf_g, o.lnf_b, t,
               trace.lnf);
  }

  trace.pooled.assign(kModelDim, 0.0);
  for (int t = 0; t < T; ++t) {
    for (int i = 0; i < kModelDim; ++i) {
      trace.pooled[static_cast<std::size_t>(i)] +=
          trace.lnf.out[static_cast<std::size_t>(t) * kModelDim + i];
    }
  }
  for (double& p : trace.pooled) p /= static_cast<double>(T);

  std::vector<double> q(static_cast<std::size_t>(n_actions_));
  detail::affine(params_, o.head_w, o.head_b, n_actions_, kModelDim, trace.pooled.data(),
                 q.data());
  return q;
}

inline std::vector<double> TransformerQNet::backward(std::span<const double> state,
                                                     int action_index,
                                                     double td_target) const {
  if (action_index < 0 || action_index >= n_actions_) {
    throw std::invalid_argument("TransformerQNet::backward: action index out of range");
  }
  Trace trace;
  std::vector<double> q = run_forward(state, trace, nullptr);

  const int T = tokens_;
  const Offsets o = offsets();
  const std::size_t TD = static_cast<std::size_t>(T) * kModelDim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(kHeadDim));
  std::vector<double> grad(params_.size(), 0.0);

  // Head.
  double residual = q[static_cast<std::size_t>(action_index)] - td_target;
  std::vector<double> dpooled(kModelDim, 0.0);
  {
    std::size_t row = o.head_w + static_cast<std::size_t>(action_index) * kModelDim;
    for (int i = 0; i < kModelDim; ++i) {
      grad[row + i] += residual * trace.pooled[static_cast<std::size_t>(i)];
      dpooled[static_cast<std::size_t>(i)] =
          residual * static_cast<double>(params_[row + i]);
    }
    grad[o.head_b + static_cast<std::size_t>(action_index)] += residual;
  }

  // Mean pool -> final LN.
  std::vector<double> dx(TD, 0.0);
  {
    std::vector<double> dln(kModelDim);
    for (int t = 0; t < T; ++t) {
      for (int i = 0; i < kModelDim; ++i) {
        dln[static_cast<std::size_t>(i)] =
            dpooled[static_cast<std::size_t>(i)] / static_cast<double>(T);
      }
      layer_norm_backward(trace.lnf, o.lnf_g, dln.data(), t,
                          dx.data() + static_cast<std::size_t>(t) * kModelDim, grad, o.lnf_g,
                          o.lnf_b);
    }
  }

  // Blocks in reverse.
  for (int l = kLayers; l-- > 0;) {
    const auto& L = o.layer[static_cast<std::size_t>(l)];
    const LayerTrace& lt = trace.layer[static_cast<std::size_t>(l)];

    // Feed-forward sublayer: x_out = x_mid + W2 relu(W1 ln2(x_mid) + b1) + b2.
    std::vector<double> dx_mid = dx;  // residual path
    std::vector<double> dln2(TD, 0.0);
    for (int t = 0; t < T; ++t) {
      const double* dout = dx.data() + static_cast<std::size_t>(t) * kModelDim;
      const double* act = lt.ff_act.data() + static_cast<std::size_t>(t) * kFfDim;
      const double* pre = lt.ff_pre.data() + static_cast<std::size_t>(t) * kFfDim;
      // W2 path.
      std::vector<double> dact(kFfDim, 0.0);
      for (int r = 0; r < kModelDim; ++r) {
        double d = dout[r];
        std::size_t row = L.w2 + static_cast<std::size_t>(r) * kFfDim;
        grad[L.b2 + r] += d;
        for (int c = 0; c < kFfDim; ++c) {
          grad[row + c] += d * act[c];
          dact[static_cast<std::size_t>(c)] += d * static_cast<double>(params_[row + c]);
        }
      }
      // ReLU + W1 path.
      const double* u2 = lt.ln2.out.data() + static_cast<std::size_t>(t) * kModelDim;
      double* dl = dln2.data() + static_cast<std::size_t>(t) * kModelDim;
      for (int r = 0; r < kFfDim; ++r) {
        double d = dact[static_cast<std::size_t>(r)] * (pre[r] > 0.0 ? 1.0 : 0.0);
        if (d == 0.0) continue;
        std::size_t row = L.w1 + static_cast<std::size_t>(r) * kModelDim;
        grad[L.b1 + r] += d;
        for (int c = 0; c < kModelDim; ++c) {
          grad[row + c] += d * u2[c];
          dl[c] += d * static_cast<double>(params_[row + c]);
        }
      }
    }
    for (int t = 0; t < T; ++t) {
      layer_norm_backward(lt.ln2, L.ln2_g, dln2.data() + static_cast<std::size_t>(t) * kModelDim,
                          t, dx_mid.data() + static_cast<std::size_t>(t) * kModelDim, grad,
                          L.ln2_g, L.ln2_b);
    }

    // Attention sublayer: x_mid = x_in + Wo ctx + bo.
    std::vector<double> dx_in = dx_mid;  // residual path
    std::vector<double> dctx(TD, 0.0);
    for (int t = 0; t < T; ++t) {
      const double* dout = dx_mid.data() + static_cast<std::size_t>(t) * kModelDim;
      const double* ctx = lt.ctx.data() + static_cast<std::size_t>(t) * kModelDim;
      double* dc = dctx.data() + static_cast<std::size_t>(t) * kModelDim;
      for (int r = 0; r < kModelDim; ++r) {
        double d = dout[r];
        std::size_t row = L.wo + static_cast<std::size_t>(r) * kModelDim;
        grad[L.bo + r] += d;
        for (int c = 0; c < kModelDim; ++c) {
          grad[row + c] += d * ctx[c];
          dc[c] += d * static_cast<double>(params_[row + c]);
        }
      }
    }

    std::vector<double> dq(TD, 0.0), dk(TD, 0.0), dv(TD, 0.0);
    for (int h = 0; h < kHeads; ++h) {
      const std::vector<double>& attn = lt.attn[static_cast<std::size_t>(h)];
      const int hoff = h * kHeadDim;
      for (int t = 0; t < T; ++t) {
        const double* dc = dctx.data() + static_cast<std::size_t>(t) * kModelDim + hoff;
        // d attention weights and dV.
        std::vector<double> da(static_cast<std::size_t>(T), 0.0);
        for (int s = 0; s < T; ++s) {
          const double a = attn[static_cast<std::size_t>(t) * T + s];
          const double* vs = lt.v.data() + static_cast<std::size_t>(s) * kModelDim + hoff;
          double acc = 0.0;
          for (int i = 0; i < kHeadDim; ++i) acc += dc[i] * vs[i];
          da[static_cast<std::size_t>(s)] = acc;
          double* dvs = dv.data() + static_cast<std::size_t>(s) * kModelDim + hoff;
          for (int i = 0; i < kHeadDim; ++i) dvs[i] += a * dc[i];
        }
        // Softmax backward.
        double dot = 0.0;
        for (int s = 0; s < T; ++s) {
          dot += da[static_cast<std::size_t>(s)] * attn[static_cast<std::size_t>(t) * T + s];
        }
        for (int s = 0; s < T; ++s) {
          const double a = attn[static_cast<std::size_t>(t) * T + s];
          double ds = a * (da[static_cast<std::size_t>(s)] - dot) * scale;
          const double* ks = lt.k.data() + static_cast<std::size_t>(s) * kModelDim + hoff;
          const double* qt = lt.q.data() + static_cast<std::size_t>(t) * kModelDim + hoff;
          double* dqt = dq.data() + static_cast<std::size_t>(t) * kModelDim + hoff;
          double* dks = dk.data() + static_cast<std::size_t>(s) * kModelDim + hoff;
          for (int i = 0; i < kHeadDim; ++i) {
            dqt[i] += ds * ks[i];
            dks[i] += ds * qt[i];
          }
        }
      }
    }

    // Q/K/V projections back to ln1 output.
    std::vector<double> dln1(TD, 0.0);
    struct Proj {
      std::size_t w, b;
      const std::vector<double>* d;
    };
    const Proj projs[3] = {{L.wq, L.bq, &dq}, {L.wk, L.bk, &dk}, {L.wv, L.bv, &dv}};
    for (const Proj& proj : projs) {
      for (int t = 0; t < T; ++t) {
        const double* d = proj.d->data() + static_cast<std::size_t>(t) * kModelDim;
        const double* u = lt.ln1.out.data() + static_cast<std::size_t>(t) * kModelDim;
        double* dl = dln1.data() + static_cast<std::size_t>(t) * kModelDim;
        for (int r = 0; r < kModelDim; ++r) {
          double dr = d[r];
          if (dr == 0.0) continue;
          std::size_t row = proj.w + static_cast<std::size_t>(r) * kModelDim;
          grad[proj.b + r] += dr;
          for (int c = 0; c < kModelDim; ++c) {
            grad[row + c] += dr * u[c];
            dl[c] += dr * static_cast<double>(params_[row + c]);
          }
        }
      }
    }
    for (int t = 0; t < T; ++t) {
      layer_norm_backward(lt.ln1, L.ln1_g, dln1.data() + static_cast<std::size_t>(t) * kModelDim,
                          t, dx_in.data() + static_cast<std::size_t>(t) * kModelDim, grad,
                          L.ln1_g, L.ln1_b);
    }
    dx = std::move(dx_in);
  }

  // Embedding.
  for (int t = 0; t < T; ++t) {
    const double* d = dx.data() + static_cast<std::size_t>(t) * kModelDim;
    const double* tok = trace.tokens.data() + static_cast<std::size_t>(t) * kTokenDim;
    for (int r = 0; r < kModelDim; ++r) {
      double dr = d[r];
      if (dr == 0.0) continue;
      std::size_t row = o.embed_w + static_cast<std::size_t>(r) * kTokenDim;
      grad[o.embed_b + r] += dr;
      for (int c = 0; c < kTokenDim; ++c) grad[row + c] += dr * tok[c];
    }
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Adam with global-norm gradient clipping.
// ---------------------------------------------------------------------------

class AdamOptimizer {
 public:
  struct Config {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 5.0;
  };

  AdamOptimizer() = default;
  explicit AdamOptimizer(Config config) : config_(config) {}

  long step_count() const { return steps_; }
  const Config& config() const { return config_; }

  void apply(std::vector<float>& params, std::vector<double> grad) {
    if (grad.size() != params.size()) {
      throw std::invalid_argument("AdamOptimizer: gradient/parameter size mismatch");
    }
    if (m_.size() != grad.size()) {
      m_.assign(grad.size(), 0.0);
      v_.assign(grad.size(), 0.0);
    }
    if (config_.clip_norm > 0.0) {
      double norm2 = 0.0;
      for (double g : grad) norm2 += g * g;
      double norm = std::sqrt(norm2);
      if (norm > config_.clip_norm) {
        double s = config_.clip_norm / norm;
        for (double& g : grad) g *= s;
      }
    }
    ++steps_;
    double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
    double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
    for (std::size_t i = 0; i < grad.size(); ++i) {
      m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * grad[i];
      v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * grad[i] * grad[i];
      double mhat = m_[i] / bc1;
      double vhat = v_[i] / bc2;
      double update = config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
      params[i] = static_cast<float>(static_cast<double>(params[i]) - update);
    }
  }

 private:
  Config config_{};
  std::vector<double> m_, v_;
  long steps_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoints: "DTQN" magic, version, architecture descriptor, then the
// parameter payload as little-endian 32-bit floats.
// ---------------------------------------------------------------------------

namespace detail {

inline void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                        static_cast<unsigned char>((v >> 8) & 0xFF),
                        static_cast<unsigned char>((v >> 16) & 0xFF),
                        static_cast<unsigned char>((v >> 24) & 0xFF)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw DataError("checkpoint: truncated file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace detail

constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_qnet(const TrainableQNet& net, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("save_qnet: cannot open '" + path + "' for writing");
  out.write("DTQN", 4);
  detail::write_u32(out, kCheckpointVersion);
  ArchDescriptor a = net.arch();
  detail::write_u32(out, static_cast<std::uint32_t>(a.kind));
  detail::write_u32(out, static_cast<std::uint32_t>(a.input_dim));
  detail::write_u32(out, static_cast<std::uint32_t>(a.n_actions));
  const std::vector<float>& params = net.params();
  detail::write_u32(out, static_cast<std::uint32_t>(params.size()));
  for (float p : params) {
    std::uint32_t bits;
    std::memcpy(&bits, &p, 4);
    detail::write_u32(out, bits);
  }
  if (!out) throw DataError("save_qnet: write failure on '" + path + "'");
}

inline std::unique_ptr<TrainableQNet> load_qnet(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("load_qnet: cannot open '" + path + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "DTQN", 4) != 0) {
    throw DataError("load_qnet: '" + path + "' is not a DTQN checkpoint");
  }
  std::uint32_t version = detail::read_u32(in);
  if (version != kCheckpointVersion) {
    throw DataError("load_qnet: unsupported checkpoint version " + std::to_string(version));
  }
  ArchDescriptor a;
  a.kind = static_cast<ArchKind>(detail::read_u32(in));
  a.input_dim = static_cast<int>(detail::read_u32(in));
  a.n_actions = static_cast<int>(detail::read_u32(in));
  std::uint32_t count = detail::read_u32(in);

  std::unique_ptr<TrainableQNet> net;
  switch (a.kind) {
    case ArchKind::mlp: net = std::make_unique<MlpQNet>(a.input_dim, a.n_actions); break;
    case ArchKind::transformer:
      net = std::make_unique<TransformerQNet>(a.input_dim, a.n_actions);
      break;
    default: throw DataError("load_qnet: unknown architecture kind");
  }
  if (net->params().size() != count) {
    throw DataError("load_qnet: parameter count mismatch");
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t bits = detail::read_u32(in);
    float p;
    std::memcpy(&p, &bits, 4);
    net->params()[i] = p;
  }
  return net;
}

// Loads and verifies the checkpoint matches an expected architecture.
inline std::unique_ptr<TrainableQNet> load_qnet_expect(const std::string& path,
                                                       const ArchDescriptor& expected) {
  std::unique_ptr<TrainableQNet> net = load_qnet(path);
  if (!(net->arch() == expected)) {
    throw DataError("load_qnet: checkpoint architecture mismatch for '" + path + "'");
  }
  return net;
}

}  // namespace dyntree
