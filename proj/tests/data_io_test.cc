#include "ansel/data_io.h"

#include <algorithm>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "ansel/errors.h"
#include "ansel/metrics.h"
#include "ansel/tokenizer.h"
#include "test_util.h"

namespace ansel {
namespace {

using testing::TempDir;
using testing::write_file;

std::set<std::string> words_of(const std::string& text) {
  std::set<std::string> out;
  std::istringstream in(text);
  for (std::string w; in >> w;) out.insert(w);
  return out;
}

TEST(Tsv, GroupsLinesByQid) {
  DatasetSplit s = parse_tsv(
      "q1\tWho won?\tc1\tRafael Nadal won.\t1\n"
      "q1\tWho won?\tc2\tIt rained.\t0\n"
      "q1\tWho won?\tc3\tNobody knows.\t0\n",
      CasingMode::kCased);
  ASSERT_EQ(s.groups.size(), 1u);
  EXPECT_EQ(s.groups[0].candidates.size(), 3u);
  EXPECT_EQ(s.groups[0].candidates[0].answer, "Rafael Nadal won.");
  EXPECT_EQ(s.candidate_count(), 3u);
}

TEST(Tsv, UncasedLowercases) {
  DatasetSplit s = parse_tsv("q1\tWho won?\tc1\tRafael Nadal won.\t1\n", CasingMode::kUncased);
  EXPECT_EQ(s.groups[0].question, "who won?");
  EXPECT_EQ(s.groups[0].candidates[0].answer, "rafael nadal won.");
}

TEST(Tsv, WrongArityNamesLine) {
  try {
    parse_tsv("q1\tq\tc1\ta\t1\nq1\tq\tc2\ta\n", CasingMode::kCased);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST(Tsv, RejectsBadLabelsAndDuplicates) {
  EXPECT_THROW(parse_tsv("q1\tq\tc1\ta\t2\n", CasingMode::kCased), DataError);
  EXPECT_THROW(parse_tsv("q1\tq\tc1\ta\t1\nq1\tq\tc1\tb\t0\n", CasingMode::kCased), DataError);
  EXPECT_THROW(parse_tsv("q1\t\tc1\ta\t1\n", CasingMode::kCased), DataError);
}

TEST(Tsv, SaveLoadRoundTrip) {
  TempDir dir("tsv");
  SyntheticDataset d = generate_synthetic(20, 4, SyntheticSpec{}, 3);
  save_tsv(d.train, dir / "train.tsv");
  DatasetSplit back = load_tsv(dir / "train.tsv", CasingMode::kCased, d.train.name);
  EXPECT_EQ(back, d.train);
}

TEST(SemEval, LabelMapping) {
  EXPECT_EQ(map_semeval_label("Good"), 1);
  EXPECT_EQ(map_semeval_label("good"), 1);
  EXPECT_EQ(map_semeval_label("Potentially Useful"), 0);
  EXPECT_EQ(map_semeval_label("PotentiallyUseful"), 0);
  EXPECT_EQ(map_semeval_label("Bad"), 0);
  EXPECT_THROW(map_semeval_label("Excellent"), DataError);
}

TEST(SemEval, ParsesThreads) {
  TempDir dir("semeval");
  write_file(dir / "s.xml",
             "<root><Thread THREAD_SEQUENCE=\"Q1_R1\">"
             "<RelQuestion RELQ_ID=\"Q1_R1\"><RelQSubject>Visa</RelQSubject>"
             "<RelQBody>How long does it take?</RelQBody></RelQuestion>"
             "<RelComment RELC_ID=\"Q1_R1_C1\" RELC_RELEVANCE2RELQ=\"Good\"><RelCText>Two weeks.</RelCText></RelComment>"
             "<RelComment RELC_ID=\"Q1_R1_C2\" RELC_RELEVANCE2RELQ=\"PotentiallyUseful\"><RelCText>Ask them.</RelCText></RelComment>"
             "</Thread></root>");
  DatasetSplit s = load_semeval_xml(dir / "s.xml", CasingMode::kUncased);
  ASSERT_EQ(s.groups.size(), 1u);
  EXPECT_EQ(s.groups[0].question, "visa how long does it take?");
  ASSERT_EQ(s.groups[0].candidates.size(), 2u);
  EXPECT_EQ(s.groups[0].candidates[0].label, 1);
  EXPECT_EQ(s.groups[0].candidates[1].label, 0);
}

TEST(WikiQa, ParsesHeaderedTsv) {
  TempDir dir("wikiqa");
  write_file(dir / "w.tsv",
             "QuestionID\tQuestion\tDocumentID\tDocumentTitle\tSentenceID\tSentence\tLabel\n"
             "Q1\thow are glacier caves formed?\tD1\tGlacier cave\tD1-0\tA partly submerged cave.\t0\n"
             "Q1\thow are glacier caves formed?\tD1\tGlacier cave\tD1-1\tMelting water forms them.\t1\n");
  DatasetSplit s = load_wikiqa(dir / "w.tsv", CasingMode::kCased);
  ASSERT_EQ(s.groups.size(), 1u);
  EXPECT_EQ(s.groups[0].qid, "Q1");
  EXPECT_EQ(s.groups[0].candidates[1].candidate_id, "D1-1");
  EXPECT_EQ(s.groups[0].candidates[1].label, 1);
}

TEST(TrecQa, ParsesBlocks) {
  TempDir dir("trec");
  write_file(dir / "t.xml",
             "<QApairs id='1.1'>\n<question>\nWho\tis\tthe\tleader\t?\n</question>\n"
             "<positive>\nThe\tleader\tis\tX\t.\n</positive>\n"
             "<negative>\nIt\trained\t.\n</negative>\n</QApairs>\n");
  DatasetSplit s = load_trecqa(dir / "t.xml", CasingMode::kUncased);
  ASSERT_EQ(s.groups.size(), 1u);
  EXPECT_EQ(s.groups[0].qid, "1.1");
  EXPECT_EQ(s.groups[0].question, "who is the leader ?");
  EXPECT_EQ(s.groups[0].candidates[0].label, 1);
  EXPECT_EQ(s.groups[0].candidates[1].answer, "it rained .");
}

TEST(GroupedPairs, ConsecutiveQuestionsGroup) {
  TempDir dir("yahoo");
  write_file(dir / "y.tsv", "how?\tlike this\t1\nhow?\tno idea\t0\nwhy?\tbecause\t1\n");
  DatasetSplit s = load_grouped_pairs(dir / "y.tsv", CasingMode::kCased);
  ASSERT_EQ(s.groups.size(), 2u);
  EXPECT_EQ(s.groups[0].candidates.size(), 2u);
  EXPECT_EQ(s.groups[1].qid, "q2");
}

TEST(Stats, PublishedCounts) {
  EXPECT_EQ(published_stats("trecqa", "train"), (DatasetStats{1229, 53417}));
  EXPECT_EQ(published_stats("WikiQA", "test"), (DatasetStats{243, 2351}));
  EXPECT_FALSE(published_stats("squad", "train").has_value());
}

TEST(Stats, EmptySplitMatchesZero) {
  DatasetSplit empty;
  EXPECT_TRUE(validate_stats(empty, {0, 0}).matches);
  StatsReport r = validate_stats(empty, {1, 2});
  EXPECT_FALSE(r.matches);
  EXPECT_FALSE(r.text.empty());
}

TEST(Corpus, SaveLoadRoundTrip) {
  TempDir dir("corpus");
  std::vector<Document> docs{{"one sentence", "two sentence"}, {"third"}};
  save_corpus(docs, dir / "c.txt");
  EXPECT_EQ(load_corpus(dir / "c.txt"), docs);
}

TEST(Synthetic, SplitSizesAndOnePositive) {
  SyntheticDataset d = generate_synthetic(200, 5, SyntheticSpec{}, 7);
  EXPECT_EQ(d.train.groups.size(), 160u);
  EXPECT_EQ(d.valid.groups.size(), 20u);
  EXPECT_EQ(d.test.groups.size(), 20u);
  std::set<std::string> qids;
  for (const DatasetSplit* split : {&d.train, &d.valid, &d.test}) {
    for (const auto& g : split->groups) {
      EXPECT_TRUE(qids.insert(g.qid).second) << g.qid;
      ASSERT_EQ(g.candidates.size(), 5u);
      int positives = 0;
      for (const auto& c : g.candidates) positives += c.label;
      EXPECT_EQ(positives, 1) << g.qid;
    }
  }
}

TEST(Synthetic, Deterministic) {
  auto a = generate_synthetic(50, 4, SyntheticSpec{}, 11);
  auto b = generate_synthetic(50, 4, SyntheticSpec{}, 11);
  auto c = generate_synthetic(50, 4, SyntheticSpec{}, 12);
  EXPECT_EQ(format_tsv(a.train), format_tsv(b.train));
  EXPECT_NE(format_tsv(a.train), format_tsv(c.train));
  EXPECT_EQ(generate_synthetic_corpus(20, 4, SyntheticSpec{}, 5),
            generate_synthetic_corpus(20, 4, SyntheticSpec{}, 5));
}

TEST(Synthetic, KeywordOverlapRanksPerfectly) {
  SyntheticDataset d = generate_synthetic(200, 5, SyntheticSpec{}, 7);
  std::set<std::string> keywords;
  for (const auto& topic : synthetic_topic_words(SyntheticSpec{}))
    keywords.insert(topic.begin(), topic.end());
  std::vector<RunLine> run;
  for (const auto& g : d.test.groups) {
    const auto q = words_of(g.question);
    std::vector<std::pair<double, std::string>> scored;
    for (const auto& c : g.candidates) {
      double overlap = 0;
      for (const auto& w : words_of(c.answer)) overlap += keywords.contains(w) && q.contains(w);
      scored.emplace_back(overlap, c.candidate_id);
    }
    std::stable_sort(scored.begin(), scored.end(), [](auto& x, auto& y) { return x.first > y.first; });
    for (std::size_t r = 0; r < scored.size(); ++r)
      run.push_back({g.qid, scored[r].second, r + 1, scored[r].first});
  }
  Qrels qrels;
  for (const auto& g : d.test.groups)
    for (const auto& c : g.candidates) qrels[g.qid][c.candidate_id] = c.label;
  EXPECT_EQ(evaluate_run(join_run(run, qrels)).map, 1.0);
}

TEST(Synthetic, LexiconWordsAreWholeVocabularyTokens) {
  SyntheticSpec spec;
  auto corpus = generate_synthetic_corpus(200, 4, spec, 7);
  SyntheticDataset d = generate_synthetic(200, 5, spec, 7);
  std::vector<std::string> lines;
  for (const auto& doc : corpus) lines.insert(lines.end(), doc.begin(), doc.end());
  for (const auto& g : d.train.groups) {
    lines.push_back(g.question);
    for (const auto& c : g.candidates) lines.push_back(c.answer);
  }
  Vocab vocab = build_vocab(lines, 200, CasingMode::kUncased);
  for (const auto& topic : synthetic_topic_words(spec))
    for (const auto& w : topic) EXPECT_TRUE(vocab.contains(w)) << w;
}

TEST(Synthetic, RejectsBadSpec) {
  SyntheticSpec spec;
  spec.topics = 1;
  EXPECT_THROW(generate_synthetic(10, 3, spec, 1), ConfigError);
  EXPECT_THROW(generate_synthetic(10, 1, SyntheticSpec{}, 1), ConfigError);
  spec = SyntheticSpec{};
  spec.topic_persistence = 1.5;
  EXPECT_THROW(generate_synthetic_corpus(10, 3, spec, 1), ConfigError);
}

}  // namespace
}  // namespace ansel
