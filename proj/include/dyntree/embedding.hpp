#pragma once

// Sentence-embedding contract plus the desk-scale implementation: a
// feature-hashed bag of words. Hashing preserves the one property the
// reward needs (similar texts score a higher cosine) while staying
// deterministic and dependency-free.

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dyntree/text.hpp"

namespace dyntree {

using Vector = std::vector<double>;

inline double cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw std::invalid_argument("cosine: dimension mismatch (" + std::to_string(u.size()) +
                                " vs " + std::to_string(v.size()) + ")");
  }
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu == 0.0 || nv == 0.0) return 0.0;
  return dot / (std::sqrt(nu) * std::sqrt(nv));
}

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual int dim() const = 0;
  // L2-normalized; the zero vector only for empty text.
  virtual Vector embed(std::string_view text) const = 0;
};

// Hash each token to a coordinate and a sign, accumulate, L2-normalize.
class HashedEmbedder final : public EmbeddingProvider {
 public:
  static constexpr std::uint64_t kHashSeed = 0x5DEECE66DULL;
  static constexpr int kDefaultDim = 64;

  explicit HashedEmbedder(int dim = kDefaultDim) : dim_(dim) {
    if (dim <= 0) throw std::invalid_argument("HashedEmbedder: dim must be positive");
  }

  int dim() const override { return dim_; }

  Vector embed(std::string_view text) const override {
    Vector v(static_cast<std::size_t>(dim_), 0.0);
    for (const std::string& tok : tokenize(text)) {
      std::uint64_t h = fnv1a64(tok, kHashSeed);
      std::size_t index = static_cast<std::size_t>(h % static_cast<std::uint64_t>(dim_));
      double sign = ((h >> 32) & 1ULL) ? 1.0 : -1.0;
      v[index] += sign;
    }
    double norm2 = 0.0;
    for (double x : v) norm2 += x * x;
    if (norm2 > 0.0) {
      double inv = 1.0 / std::sqrt(norm2);
      for (double& x : v) x *= inv;
    }
    return v;
  }

 private:
  int dim_;
};

}  // namespace dyntree
