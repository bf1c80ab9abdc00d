#pragma once

// QA dataset ingestion. Supported shapes: HotpotQA-style JSON arrays
// (also used by 2WikiMultiHopQA) and Musique-style JSON lines. Context
// paragraphs flatten into the retrieval corpus document form.

#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "dyntree/errors.hpp"
#include "dyntree/retrieval.hpp"
#include "dyntree/text.hpp"

#include <nlohmann/json.hpp>

namespace dyntree {

enum class Split { train, dev, test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  return "?";
}

inline Split split_from_name(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "dev") return Split::dev;
  if (name == "test") return Split::test;
  throw DataError("unknown split '" + name + "'");
}

struct QARecord {
  std::string id;
  std::string question;
  std::string gold_answer;
  std::vector<std::pair<std::string, std::string>> context;  // (title, paragraph)
  Split split = Split::train;
};

enum class DatasetFormat { hotpot_json, musique_jsonl, twowiki_json };

inline DatasetFormat dataset_format_from_name(const std::string& name) {
  if (name == "hotpot_json") return DatasetFormat::hotpot_json;
  if (name == "musique_jsonl") return DatasetFormat::musique_jsonl;
  if (name == "twowiki_json") return DatasetFormat::twowiki_json;
  throw DataError("unknown dataset format '" + name + "'");
}

namespace detail {

inline std::string require_string(const nlohmann::json& j, const char* field,
                                  const std::string& where) {
  if (!j.contains(field) || !j.at(field).is_string()) {
    throw DataError("record " + where + " missing '" + field + "'");
  }
  std::string v = j.at(field).get<std::string>();
  if (trim(v).empty()) {
    throw DataError("record " + where + " has empty '" + field + "'");
  }
  return v;
}

// HotpotQA context entry: [title, [sentence, sentence, ...]].
inline QARecord record_from_hotpot(const nlohmann::json& j, std::size_t ordinal) {
  std::string id = j.contains("_id") && j.at("_id").is_string()
                       ? j.at("_id").get<std::string>()
                       : (j.contains("id") && j.at("id").is_string()
                              ? j.at("id").get<std::string>()
                              : "record#" + std::to_string(ordinal));
  QARecord r;
  r.id = id;
  r.question = require_string(j, "question", id);
  r.gold_answer = require_string(j, "answer", id);
  if (j.contains("context") && j.at("context").is_array()) {
    for (const auto& entry : j.at("context")) {
      if (!entry.is_array() || entry.size() < 2) continue;
      std::string title = entry.at(0).is_string() ? entry.at(0).get<std::string>() : "";
      std::string text;
      if (entry.at(1).is_array()) {
        for (const auto& sent : entry.at(1)) {
          if (sent.is_string()) text += sent.get<std::string>();
        }
      } else if (entry.at(1).is_string()) {
        text = entry.at(1).get<std::string>();
      }
      r.context.emplace_back(std::move(title), std::move(text));
    }
  }
  return r;
}

inline QARecord record_from_musique(const nlohmann::json& j, std::size_t lineno) {
  std::string id = j.contains("id") && j.at("id").is_string()
                       ? j.at("id").get<std::string>()
                       : "line#" + std::to_string(lineno);
  QARecord r;
  r.id = id;
  r.question = require_string(j, "question", id);
  r.gold_answer = require_string(j, "answer", id);
  if (j.contains("paragraphs") && j.at("paragraphs").is_array()) {
    for (const auto& p : j.at("paragraphs")) {
      r.context.emplace_back(p.value("title", std::string{}),
                             p.value("paragraph_text", std::string{}));
    }
  }
  if (j.contains("split") && j.at("split").is_string()) {
    r.split = split_from_name(j.at("split").get<std::string>());
  }
  return r;
}

}  // namespace detail

inline std::vector<QARecord> load_dataset(const std::string& path, DatasetFormat format) {
  std::ifstream in(path);
  if (!in) throw DataError("load_dataset: cannot open '" + path + "'");
  std::vector<QARecord> records;
  if (format == DatasetFormat::musique_jsonl) {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (trim(line).empty()) continue;
      nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded()) {
        throw DataError("load_dataset: parse error at " + path + ":" + std::to_string(lineno));
      }
      records.push_back(detail::record_from_musique(j, lineno));
    }
  } else {
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_array()) {
      throw DataError("load_dataset: '" + path + "' is not a JSON array");
    }
    std::size_t ordinal = 0;
    for (const auto& entry : j) {
      records.push_back(detail::record_from_hotpot(entry, ordinal++));
    }
  }
  return records;
}

// Re-serialization in the Musique JSON-lines shape; load_dataset with
// musique_jsonl reads it back identically.
inline void save_records_jsonl(const std::vector<QARecord>& records, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("save_records_jsonl: cannot open '" + path + "' for writing");
  for (const QARecord& r : records) {
    nlohmann::json paragraphs = nlohmann::json::array();
    for (const auto& [title, text] : r.context) {
      paragraphs.push_back({{"title", title}, {"paragraph_text", text}});
    }
    nlohmann::json j{{"id", r.id},
                     {"question", r.question},
                     {"answer", r.gold_answer},
                     {"paragraphs", std::move(paragraphs)},
                     {"split", split_name(r.split)}};
    out << j.dump() << "\n";
  }
}

// Flattens record contexts into retrieval documents (one per paragraph).
inline std::vector<Document> corpus_from_records(const std::vector<QARecord>& records) {
  std::vector<Document> docs;
  for (const QARecord& r : records) {
    std::size_t k = 0;
    for (const auto& [title, text] : r.context) {
      docs.push_back(Document{r.id + "#" + std::to_string(k++), title, text});
    }
  }
  return docs;
}

}  // namespace dyntree
