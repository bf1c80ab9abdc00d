#pragma once

// Text utilities shared by the retriever, the embedder, and the desk-scale
// answer judge. The tokenizer is deliberately simple (lowercase, split on
// non-alphanumeric) so that index contents stay hand-checkable.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace dyntree {

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

// Lowercase tokens split on any non-alphanumeric byte; empties dropped.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : text) {
    unsigned char c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

inline std::size_t token_count(std::string_view text) { return tokenize(text).size(); }

// FNV-1a over bytes, with a seed mixed in up front. Used by the feature
// hasher and the response cache; must be stable across platforms.
inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t seed = 0) {
  std::uint64_t h = 14695981039346656037ULL ^ (seed * 0x9E3779B97F4A7C15ULL);
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// Answer normalization for the token-F1 judge: lowercase, strip
// punctuation, drop English articles.
inline std::vector<std::string> normalize_answer_tokens(std::string_view answer) {
  std::vector<std::string> tokens = tokenize(answer);
  std::vector<std::string> kept;
  kept.reserve(tokens.size());
  for (auto& t : tokens) {
    if (t == "a" || t == "an" || t == "the") continue;
    kept.push_back(std::move(t));
  }
  return kept;
}

// Bag-of-tokens F1 between normalized answers, SQuAD-style.
inline double token_f1(std::string_view predicted, std::string_view gold) {
  std::vector<std::string> p = normalize_answer_tokens(predicted);
  std::vector<std::string> g = normalize_answer_tokens(gold);
  if (p.empty() || g.empty()) return (p.empty() && g.empty()) ? 1.0 : 0.0;
  std::unordered_map<std::string, int> counts;
  for (const auto& t : g) ++counts[t];
  std::size_t overlap = 0;
  for (const auto& t : p) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  if (overlap == 0) return 0.0;
  double precision = static_cast<double>(overlap) / static_cast<double>(p.size());
  double recall = static_cast<double>(overlap) / static_cast<double>(g.size());
  return 2.0 * precision * recall / (precision + recall);
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

}  // namespace dyntree
