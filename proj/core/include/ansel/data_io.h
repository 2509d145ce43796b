#ifndef ANSEL_DATA_IO_H_
#define ANSEL_DATA_IO_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ansel/text.h"

namespace ansel {

struct Candidate {
  std::string candidate_id;
  std::string answer;
  int label = 0;

  friend bool operator==(const Candidate&, const Candidate&) = default;
};

struct QuestionGroup {
  std::string qid;
  std::string question;
  std::vector<Candidate> candidates;  // file order

  friend bool operator==(const QuestionGroup&, const QuestionGroup&) = default;
};

struct DatasetSplit {
  std::string name;
  std::vector<QuestionGroup> groups;

  std::size_t candidate_count() const;
  friend bool operator==(const DatasetSplit&, const DatasetSplit&) = default;
};

// Canonical five-column TSV:
//   qid TAB question TAB candidate_id TAB answer TAB label
// Lines group by qid in first-seen order. Uncased preprocessing lowercases
// question and answer text. Field whitespace is kept verbatim.
DatasetSplit load_tsv(const std::filesystem::path& path, CasingMode casing,
                      std::string name = "");
DatasetSplit parse_tsv(std::string_view content, CasingMode casing, std::string name = "");
void save_tsv(const DatasetSplit& split, const std::filesystem::path& path);
std::string format_tsv(const DatasetSplit& split);

// Good -> 1; Bad and PotentiallyUseful -> 0. Case, spaces and underscores
// are ignored.
int map_semeval_label(std::string_view raw);

// ---- Benchmark adapters -------------------------------------------------

// WikiQA release TSV with header
// QuestionID Question DocumentID DocumentTitle SentenceID Sentence Label.
DatasetSplit load_wikiqa(const std::filesystem::path& path, CasingMode casing,
                         std::string name = "");
// TREC-QA XML-ish release (<QApairs id=...> with <question>, <positive>,
// <negative> blocks whose first line is the tab-separated tokens).
DatasetSplit load_trecqa(const std::filesystem::path& path, CasingMode casing,
                         std::string name = "");
// SemEval-2016/2017 Task 3 thread XML; comment labels via map_semeval_label.
DatasetSplit load_semeval_xml(const std::filesystem::path& path, CasingMode casing,
                              std::string name = "");
// Flat "question TAB answer TAB label" lines (YahooCQA style); consecutive
// lines with the same question form one group, numbered in file order.
DatasetSplit load_grouped_pairs(const std::filesystem::path& path, CasingMode casing,
                                std::string name = "");

// ---- Statistics -----------------------------------------------------------

struct DatasetStats {
  std::size_t question_count = 0;
  std::size_t candidate_count = 0;

  friend bool operator==(const DatasetStats&, const DatasetStats&) = default;
};

DatasetStats compute_stats(const DatasetSplit& split);

// Published sizes for the five answer-selection benchmarks.
std::optional<DatasetStats> published_stats(std::string_view dataset, std::string_view split);

struct StatsReport {
  DatasetStats expected;
  DatasetStats actual;
  bool matches = false;
  std::string text;  // key=value lines
};

// Never throws on mismatch; the caller decides whether to warn.
StatsReport validate_stats(const DatasetSplit& split, const DatasetStats& expected);

// ---- Corpora -------------------------------------------------------------

using Document = std::vector<std::string>;

// One sentence per line; blank lines separate documents.
std::vector<Document> load_corpus(const std::filesystem::path& path);
void save_corpus(const std::vector<Document>& docs, const std::filesystem::path& path);

// ---- Synthetic data -----------------------------------------------------

struct SyntheticSpec {
  std::size_t topics = 8;
  std::size_t words_per_topic = 6;
  std::size_t filler_words = 12;
  // Pretraining corpus only: chance that a sentence keeps the previous
  // sentence's topic, and the per-document filler register size.
  double topic_persistence = 0.5;
  std::size_t register_size = 3;
};

struct SyntheticDataset {
  DatasetSplit train;
  DatasetSplit valid;
  DatasetSplit test;
};

// Questions and answers built from a topic lexicon. Each question has one
// positive sharing its topic (and at least one topic keyword) and
// candidates_per_question - 1 negatives from other topics. 80/10/10 split.
SyntheticDataset generate_synthetic(std::size_t question_count,
                                    std::size_t candidates_per_question,
                                    const SyntheticSpec& spec, std::uint64_t seed);

// Pretraining documents from the same lexicon. A sentence keeps the previous
// sentence's topic with probability topic_persistence and otherwise draws a
// fresh one; all sentences of a document take their filler words from a
// small per-document register.
std::vector<Document> generate_synthetic_corpus(std::size_t documents,
                                                std::size_t sentences_per_document,
                                                const SyntheticSpec& spec, std::uint64_t seed);

// Topic keywords of the lexicon (used by the keyword-overlap baseline).
std::vector<std::vector<std::string>> synthetic_topic_words(const SyntheticSpec& spec);

}  // namespace ansel

#endif  // ANSEL_DATA_IO_H_
