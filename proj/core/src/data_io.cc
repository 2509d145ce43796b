#include "ansel/data_io.h"

#include <algorithm>
#include <cstdio>
#include <functional>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include "ansel/errors.h"
#include "ansel/rng.h"

namespace ansel {
namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::vector<std::string> split_lines(std::string_view content) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < content.size()) {
    std::size_t end = content.find('\n', start);
    if (end == std::string_view::npos) end = content.size();
    std::string line(content.substr(start, end - start));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    start = end + 1;
  }
  return lines;
}

std::vector<std::string> split_tabs(std::string_view line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    fields.emplace_back(line.substr(start, tab == std::string_view::npos ? line.npos : tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return fields;
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return "";
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

int parse_binary_label(std::string_view raw, const std::string& where) {
  if (raw == "0") return 0;
  if (raw == "1") return 1;
  throw DataError(where + ": label must be 0 or 1, got '" + std::string(raw) + "'");
}

// Accumulates pairs into qid groups, keeping first-seen order.
class GroupBuilder {
 public:
  GroupBuilder(std::string name, CasingMode casing) : casing_(casing) {
    split_.name = std::move(name);
  }

  void add(const std::string& qid, std::string_view question, std::string candidate_id,
           std::string_view answer, int label, const std::string& where) {
    if (question.empty()) throw DataError(where + ": empty question");
    if (answer.empty()) throw DataError(where + ": empty answer");
    std::string q = apply_casing(question, casing_);
    auto [it, inserted] = index_.emplace(qid, split_.groups.size());
    if (inserted) {
      split_.groups.push_back({qid, std::move(q), {}});
    } else if (split_.groups[it->second].question != q) {
      throw DataError(where + ": question text differs from earlier lines of qid " + qid);
    }
    QuestionGroup& group = split_.groups[it->second];
    for (const auto& c : group.candidates) {
      if (c.candidate_id == candidate_id) {
        throw DataError(where + ": duplicate candidate id " + candidate_id + " in qid " + qid);
      }
    }
    group.candidates.push_back({std::move(candidate_id), apply_casing(answer, casing_), label});
  }

  DatasetSplit finish() { return std::move(split_); }

 private:
  CasingMode casing_;
  DatasetSplit split_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace

std::size_t DatasetSplit::candidate_count() const {
  std::size_t total = 0;
  for (const auto& g : groups) total += g.candidates.size();
  return total;
}

DatasetSplit parse_tsv(std::string_view content, CasingMode casing, std::string name) {
  GroupBuilder builder(std::move(name), casing);
  const auto lines = split_lines(content);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const std::string where = "line " + std::to_string(i + 1);
    auto f = split_tabs(lines[i]);
    if (f.size() != 5) {
      throw DataError(where + ": expected 5 tab-separated fields, got " + std::to_string(f.size()));
    }
    builder.add(f[0], f[1], f[2], f[3], parse_binary_label(f[4], where), where);
  }
  return builder.finish();
}

DatasetSplit load_tsv(const std::filesystem::path& path, CasingMode casing, std::string name) {
  try {
    return parse_tsv(read_file(path), casing, std::move(name));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::string format_tsv(const DatasetSplit& split) {
  std::string out;
  for (const auto& g : split.groups) {
    for (const auto& c : g.candidates) {
      out += g.qid + '\t' + g.question + '\t' + c.candidate_id + '\t' + c.answer + '\t' +
             std::to_string(c.label) + '\n';
    }
  }
  return out;
}

void save_tsv(const DatasetSplit& split, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << format_tsv(split);
}

int map_semeval_label(std::string_view raw) {
  std::string key;
  for (char c : raw) {
    if (c == ' ' || c == '_' || c == '\t') continue;
    key.push_back(c);
  }
  key = to_lower(key);
  if (key == "good") return 1;
  if (key == "bad" || key == "potentiallyuseful") return 0;
  throw DataError("unknown SemEval relevance tag '" + std::string(raw) + "'");
}

DatasetSplit load_wikiqa(const std::filesystem::path& path, CasingMode casing, std::string name) {
  const auto lines = split_lines(read_file(path));
  if (lines.empty()) throw DataError(path.string() + ": empty file");
  const auto header = split_tabs(lines[0]);
  auto column = [&](const std::string& key) {
    auto it = std::find(header.begin(), header.end(), key);
    if (it == header.end()) throw DataError(path.string() + ": header lacks column " + key);
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t qid_col = column("QuestionID"), q_col = column("Question"),
                    sid_col = column("SentenceID"), s_col = column("Sentence"),
                    label_col = column("Label");
  GroupBuilder builder(std::move(name), casing);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const std::string where = path.string() + " line " + std::to_string(i + 1);
    auto f = split_tabs(lines[i]);
    if (f.size() != header.size()) {
      throw DataError(where + ": expected " + std::to_string(header.size()) + " fields, got " +
                      std::to_string(f.size()));
    }
    builder.add(f[qid_col], f[q_col], f[sid_col], f[s_col], parse_binary_label(f[label_col], where),
                where);
  }
  return builder.finish();
}

DatasetSplit load_trecqa(const std::filesystem::path& path, CasingMode casing, std::string name) {
  const auto lines = split_lines(read_file(path));
  GroupBuilder builder(std::move(name), casing);
  std::string qid, question;
  std::size_t candidate = 0;
  auto tokens_line = [&](std::size_t i) {
    if (i >= lines.size()) throw DataError(path.string() + ": truncated block at end of file");
    std::string text;
    for (const auto& tok : split_tabs(lines[i])) {
      const std::string t = trim(tok);
      if (t.empty()) continue;
      if (!text.empty()) text.push_back(' ');
      text += t;
    }
    return text;
  };
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string line = trim(lines[i]);
    if (line.starts_with("<QApairs")) {
      const auto open = line.find_first_of("'\"");
      const auto close = open == std::string::npos ? open : line.find(line[open], open + 1);
      if (close == std::string::npos) {
        throw DataError(path.string() + " line " + std::to_string(i + 1) + ": QApairs without id");
      }
      qid = line.substr(open + 1, close - open - 1);
      question.clear();
      candidate = 0;
    } else if (line == "<question>") {
      question = tokens_line(i + 1);
    } else if (line == "<positive>" || line == "<negative>") {
      const std::string where = path.string() + " line " + std::to_string(i + 1);
      if (qid.empty()) throw DataError(where + ": candidate outside a QApairs block");
      builder.add(qid, question, "c" + std::to_string(candidate++), tokens_line(i + 1),
                  line == "<positive>" ? 1 : 0, where);
    }
  }
  return builder.finish();
}

DatasetSplit load_semeval_xml(const std::filesystem::path& path, CasingMode casing,
                              std::string name) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    std::istringstream in(read_file(path));
    pt::read_xml(in, tree, pt::xml_parser::trim_whitespace);
  } catch (const pt::xml_parser_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  GroupBuilder builder(std::move(name), casing);
  auto collapse = [](const std::string& s) {
    std::string out;
    std::istringstream words(s);
    std::string w;
    while (words >> w) {
      if (!out.empty()) out.push_back(' ');
      out += w;
    }
    return out;
  };
  auto visit_thread = [&](const pt::ptree& thread) {
    const auto* rel_q = thread.get_child_optional("RelQuestion").get_ptr();
    if (!rel_q) return;
    const std::string qid = rel_q->get<std::string>("<xmlattr>.RELQ_ID", "");
    std::string question = collapse(rel_q->get<std::string>("RelQSubject", "") + " " +
                                    rel_q->get<std::string>("RelQBody", ""));
    for (const auto& [tag, node] : thread) {
      if (tag != "RelComment") continue;
      const std::string cid = node.get<std::string>("<xmlattr>.RELC_ID", "");
      const std::string text = collapse(node.get<std::string>("RelCText", ""));
      if (text.empty()) continue;
      const int label = map_semeval_label(node.get<std::string>("<xmlattr>.RELC_RELEVANCE2RELQ", ""));
      builder.add(qid, question, cid, text, label, path.string() + " comment " + cid);
    }
  };
  std::function<void(const pt::ptree&)> walk = [&](const pt::ptree& node) {
    for (const auto& [tag, child] : node) {
      if (tag == "Thread") {
        visit_thread(child);
      } else if (tag != "<xmlattr>") {
        walk(child);
      }
    }
  };
  walk(tree);
  return builder.finish();
}

DatasetSplit load_grouped_pairs(const std::filesystem::path& path, CasingMode casing,
                                std::string name) {
  const auto lines = split_lines(read_file(path));
  GroupBuilder builder(std::move(name), casing);
  std::string previous;
  std::size_t group = 0, candidate = 0;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const std::string where = path.string() + " line " + std::to_string(i + 1);
    auto f = split_tabs(lines[i]);
    if (f.size() != 3) {
      throw DataError(where + ": expected 3 tab-separated fields, got " + std::to_string(f.size()));
    }
    if (group == 0 || f[0] != previous) {
      ++group;
      candidate = 0;
      previous = f[0];
    }
    builder.add("q" + std::to_string(group), f[0], "c" + std::to_string(candidate++), f[1],
                parse_binary_label(f[2], where), where);
  }
  return builder.finish();
}

DatasetStats compute_stats(const DatasetSplit& split) {
  return {split.groups.size(), split.candidate_count()};
}

std::optional<DatasetStats> published_stats(std::string_view dataset, std::string_view split) {
  struct Row {
    std::string_view dataset;
    DatasetStats train, valid, test;
  };
  static constexpr Row kRows[] = {
      {"trecqa", {1229, 53417}, {82, 1148}, {100, 1517}},
      {"wikiqa", {873, 8672}, {126, 1130}, {243, 2351}},
      {"yahoocqa", {50112, 253440}, {6289, 31680}, {6283, 31680}},
      {"semeval2016", {4879, 36198}, {244, 2440}, {327, 3270}},
      {"semeval2017", {4879, 36198}, {244, 2440}, {293, 2930}},
  };
  const std::string key = to_lower(dataset);
  for (const auto& row : kRows) {
    if (row.dataset != key) continue;
    if (split == "train") return row.train;
    if (split == "valid") return row.valid;
    if (split == "test") return row.test;
  }
  return std::nullopt;
}

StatsReport validate_stats(const DatasetSplit& split, const DatasetStats& expected) {
  StatsReport report;
  report.expected = expected;
  report.actual = compute_stats(split);
  report.matches = report.actual == expected;
  std::ostringstream out;
  out << "split=" << split.name << '\n'
      << "questions=" << report.actual.question_count << '\n'
      << "candidates=" << report.actual.candidate_count << '\n'
      << "expected_questions=" << expected.question_count << '\n'
      << "expected_candidates=" << expected.candidate_count << '\n'
      << "match=" << (report.matches ? "true" : "false") << '\n';
  report.text = out.str();
  return report;
}

std::vector<Document> load_corpus(const std::filesystem::path& path) {
  std::vector<Document> docs(1);
  for (auto& line : split_lines(read_file(path))) {
    if (trim(line).empty()) {
      if (!docs.back().empty()) docs.emplace_back();
      continue;
    }
    docs.back().push_back(std::move(line));
  }
  if (docs.back().empty()) docs.pop_back();
  return docs;
}

void save_corpus(const std::vector<Document>& docs, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  for (std::size_t d = 0; d < docs.size(); ++d) {
    if (d) out << '\n';
    for (const auto& s : docs[d]) out << s << '\n';
  }
}

namespace {

// Pronounceable three-syllable pseudo-words. The first syllable is unique
// for the first 70 indices, so lexicon words share no long prefixes and the
// greedy vocabulary keeps them whole. Distinct indices give distinct words.
std::string pseudo_word(std::size_t index) {
  static constexpr std::string_view kConsonants = "bdfgklmnprstvz";
  static constexpr std::string_view kVowels = "aeiou";
  static constexpr std::size_t kSyllables = kConsonants.size() * kVowels.size();
  std::string word;
  auto syllable = [&](std::size_t s) {
    word.push_back(kConsonants[s % kConsonants.size()]);
    word.push_back(kVowels[s / kConsonants.size()]);
  };
  syllable(index % kSyllables);
  syllable((index * 31 + 7) % kSyllables);
  syllable((index * 47 + 19) % kSyllables);
  for (std::size_t n = index / kSyllables; n > 0; n /= kSyllables) syllable(n % kSyllables);
  return word;
}

struct Lexicon {
  std::vector<std::vector<std::string>> topics;
  std::vector<std::string> filler;
};

Lexicon make_lexicon(const SyntheticSpec& spec) {
  if (spec.topics < 2) throw ConfigError("synthetic data needs at least 2 topics");
  if (spec.words_per_topic < 3) throw ConfigError("synthetic data needs at least 3 words per topic");
  if (spec.filler_words < 1) throw ConfigError("synthetic data needs at least 1 filler word");
  if (!(spec.topic_persistence >= 0.0 && spec.topic_persistence <= 1.0)) {
    throw ConfigError("topic persistence must lie in [0, 1]");
  }
  if (spec.register_size < 1) throw ConfigError("filler register needs at least 1 word");
  Lexicon lex;
  std::size_t next = 0;
  for (std::size_t t = 0; t < spec.topics; ++t) {
    std::vector<std::string> words;
    for (std::size_t w = 0; w < spec.words_per_topic; ++w) words.push_back(pseudo_word(next++));
    lex.topics.push_back(std::move(words));
  }
  for (std::size_t f = 0; f < spec.filler_words; ++f) lex.filler.push_back(pseudo_word(next++));
  return lex;
}

std::vector<std::string> pick(const std::vector<std::string>& pool, std::size_t k, Rng& rng) {
  std::vector<std::string> out;
  for (auto i : rng.sample_without_replacement(pool.size(), k)) out.push_back(pool[i]);
  return out;
}

std::string join_sentence(std::vector<std::string> words, char terminal, Rng& rng) {
  rng.shuffle(words);
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  out.push_back(' ');
  out.push_back(terminal);
  return out;
}

std::string make_answer(const Lexicon& lex, std::size_t topic, const std::string* must_include,
                        const std::vector<std::string>& filler, Rng& rng) {
  std::vector<std::string> words;
  const auto& pool = lex.topics[topic];
  if (must_include) {
    words.push_back(*must_include);
    for (auto& w : pick(pool, 3, rng)) {
      if (words.size() < 3 && w != *must_include) words.push_back(std::move(w));
    }
  } else {
    words = pick(pool, 3, rng);
  }
  words.push_back(filler[rng.below(filler.size())]);
  words.push_back(filler[rng.below(filler.size())]);
  return join_sentence(std::move(words), '.', rng);
}

}  // namespace

std::vector<std::vector<std::string>> synthetic_topic_words(const SyntheticSpec& spec) {
  return make_lexicon(spec).topics;
}

SyntheticDataset generate_synthetic(std::size_t question_count,
                                    std::size_t candidates_per_question,
                                    const SyntheticSpec& spec, std::uint64_t seed) {
  if (candidates_per_question < 2) throw ConfigError("need at least 2 candidates per question");
  if (question_count == 0) throw ConfigError("need at least 1 question");
  const Lexicon lex = make_lexicon(spec);
  Rng rng(seed);
  std::vector<QuestionGroup> groups;
  for (std::size_t q = 0; q < question_count; ++q) {
    QuestionGroup group;
    char qid[32];
    std::snprintf(qid, sizeof(qid), "q%04zu", q);
    group.qid = qid;
    const std::size_t topic = rng.below(spec.topics);
    auto keywords = pick(lex.topics[topic], 2, rng);
    const std::string shared = keywords[rng.below(2)];
    keywords.push_back(lex.filler[rng.below(lex.filler.size())]);
    group.question = join_sentence(std::move(keywords), '?', rng);
    const std::size_t positive_slot = rng.below(candidates_per_question);
    for (std::size_t c = 0; c < candidates_per_question; ++c) {
      Candidate cand;
      cand.candidate_id = group.qid + "-c" + std::to_string(c);
      if (c == positive_slot) {
        cand.answer = make_answer(lex, topic, &shared, lex.filler, rng);
        cand.label = 1;
      } else {
        std::size_t other = rng.below(spec.topics - 1);
        if (other >= topic) ++other;
        cand.answer = make_answer(lex, other, nullptr, lex.filler, rng);
        cand.label = 0;
      }
      group.candidates.push_back(std::move(cand));
    }
    groups.push_back(std::move(group));
  }
  const std::size_t n_train = question_count * 8 / 10;
  const std::size_t n_valid = question_count / 10;
  SyntheticDataset out;
  out.train.name = "train";
  out.valid.name = "valid";
  out.test.name = "test";
  for (std::size_t q = 0; q < groups.size(); ++q) {
    auto& dst = q < n_train ? out.train : (q < n_train + n_valid ? out.valid : out.test);
    dst.groups.push_back(std::move(groups[q]));
  }
  return out;
}

std::vector<Document> generate_synthetic_corpus(std::size_t documents,
                                                std::size_t sentences_per_document,
                                                const SyntheticSpec& spec, std::uint64_t seed) {
  if (documents == 0 || sentences_per_document == 0) {
    throw ConfigError("synthetic corpus needs at least one document and sentence");
  }
  const Lexicon lex = make_lexicon(spec);
  const std::size_t register_size = std::min(spec.register_size, lex.filler.size());
  Rng rng(seed);
  std::vector<Document> docs;
  for (std::size_t d = 0; d < documents; ++d) {
    const auto register_words = pick(lex.filler, register_size, rng);
    Document doc;
    std::size_t topic = rng.below(spec.topics);
    for (std::size_t s = 0; s < sentences_per_document; ++s) {
      if (s > 0 && !rng.bernoulli(spec.topic_persistence)) topic = rng.below(spec.topics);
      doc.push_back(make_answer(lex, topic, nullptr, register_words, rng));
    }
    docs.push_back(std::move(doc));
  }
  return docs;
}

}  // namespace ansel
