#pragma once

// In-process BM25 over a paragraph corpus. A local index instead of an
// external search service keeps desk-scale runs hermetic; the scoring is
// standard Robertson/Sparck-Jones BM25 with the non-negative idf variant
// idf = ln(1 + (N - n + 0.5) / (n + 0.5)).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "dyntree/errors.hpp"
#include "dyntree/text.hpp"

#include <nlohmann/json.hpp>

namespace dyntree {

struct Document {
  std::string id;
  std::string title;
  std::string text;
};

struct RetrievalConfig {
  int k = 5;       // top-K passages, typically swept over {3,5,7}
  double k1 = 1.2;
  double b = 0.75;
};

struct Posting {
  std::size_t doc = 0;  // internal index into documents
  int tf = 0;
};

class Corpus {
 public:
  std::vector<Document> documents;
  std::map<std::string, std::vector<Posting>> postings;  // term -> postings
  std::vector<int> doc_lengths;
  double avg_doc_length = 0.0;

  std::size_t size() const { return documents.size(); }

  std::size_t index_of(const std::string& doc_id) const {
    for (std::size_t i = 0; i < documents.size(); ++i) {
      if (documents[i].id == doc_id) return i;
    }
    throw std::invalid_argument("Corpus: unknown document id '" + doc_id + "'");
  }
};

inline Corpus index(std::vector<Document> documents) {
  if (documents.empty()) throw std::invalid_argument("index: corpus must be nonempty");
  Corpus corpus;
  corpus.documents = std::move(documents);
  corpus.doc_lengths.resize(corpus.documents.size(), 0);
  long long total_len = 0;
  for (std::size_t d = 0; d < corpus.documents.size(); ++d) {
    std::vector<std::string> tokens = tokenize(corpus.documents[d].text);
    corpus.doc_lengths[d] = static_cast<int>(tokens.size());
    total_len += static_cast<long long>(tokens.size());
    std::map<std::string, int> tf;
    for (const auto& t : tokens) ++tf[t];
    for (const auto& [term, count] : tf) {
      corpus.postings[term].push_back(Posting{d, count});
    }
  }
  corpus.avg_doc_length =
      static_cast<double>(total_len) / static_cast<double>(corpus.documents.size());
  return corpus;
}

namespace detail {

inline double bm25_idf(std::size_t total_docs, std::size_t docs_with_term) {
  double num = static_cast<double>(total_docs) - static_cast<double>(docs_with_term) + 0.5;
  double den = static_cast<double>(docs_with_term) + 0.5;
  return std::log(1.0 + num / den);
}

inline double bm25_term(double idf, int tf, int doc_len, double avg_len, double k1, double b) {
  double tfd = static_cast<double>(tf);
  double norm = k1 * (1.0 - b + b * static_cast<double>(doc_len) / avg_len);
  return idf * tfd * (k1 + 1.0) / (tfd + norm);
}

}  // namespace detail

// BM25 score of one document for a query; unknown terms contribute 0.
// Accumulation follows query-term order so results are reduction-order
// deterministic.
inline double score(const Corpus& corpus, const std::string& query, std::size_t doc,
                    const RetrievalConfig& config = {}) {
  if (doc >= corpus.size()) throw std::invalid_argument("score: document index out of range");
  double total = 0.0;
  for (const std::string& term : tokenize(query)) {
    auto it = corpus.postings.find(term);
    if (it == corpus.postings.end()) continue;
    const std::vector<Posting>& plist = it->second;
    auto pit = std::lower_bound(plist.begin(), plist.end(), doc,
                                [](const Posting& p, std::size_t d) { return p.doc < d; });
    if (pit == plist.end() || pit->doc != doc) continue;
    double idf = detail::bm25_idf(corpus.size(), plist.size());
    total += detail::bm25_term(idf, pit->tf, corpus.doc_lengths[doc], corpus.avg_doc_length,
                               config.k1, config.b);
  }
  return total;
}

inline double score(const Corpus& corpus, const std::string& query, const std::string& doc_id,
                    const RetrievalConfig& config = {}) {
  return score(corpus, query, corpus.index_of(doc_id), config);
}

struct ScoredDoc {
  std::string doc_id;
  double score = 0.0;
};

// The k highest-scoring documents, descending; ties broken by insertion
// order (ascending internal index). Zero-score documents still rank, so a
// query with no matching terms returns the first k documents.
inline std::vector<ScoredDoc> top_k(const Corpus& corpus, const std::string& query,
                                    const RetrievalConfig& config = {}) {
  std::vector<double> scores(corpus.size(), 0.0);
  for (const std::string& term : tokenize(query)) {
    auto it = corpus.postings.find(term);
    if (it == corpus.postings.end()) continue;
    double idf = detail::bm25_idf(corpus.size(), it->second.size());
    for (const Posting& p : it->second) {
      scores[p.doc] += detail::bm25_term(idf, p.tf, corpus.doc_lengths[p.doc],
                                         corpus.avg_doc_length, config.k1, config.b);
    }
  }
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(std::max(config.k, 1)),
                                        corpus.size());
  std::vector<ScoredDoc> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(ScoredDoc{corpus.documents[order[i]].id, scores[order[i]]});
  }
  return out;
}

// JSON-lines ingestion: one object per line with fields id, title, text.
inline std::vector<Document> load_corpus_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("load_corpus_jsonl: cannot open '" + path + "'");
  std::vector<Document> docs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      throw DataError("load_corpus_jsonl: parse error at " + path + ":" +
                      std::to_string(lineno));
    }
    if (!j.contains("id") || !j.contains("text")) {
      throw DataError("load_corpus_jsonl: missing id/text at " + path + ":" +
                      std::to_string(lineno));
    }
    docs.push_back(Document{j.at("id").get<std::string>(),
                            j.value("title", std::string{}),
                            j.at("text").get<std::string>()});
  }
  return docs;
}

}  // namespace dyntree
