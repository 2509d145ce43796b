#ifndef ANSEL_METRICS_H_
#define ANSEL_METRICS_H_

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ansel {

// Average precision of one ranked list of binary labels; nullopt when no
// label is relevant (the question cannot be evaluated).
std::optional<double> average_precision(std::span<const int> labels_in_rank_order);
// 1 / rank of the first relevant label; nullopt when there is none.
std::optional<double> reciprocal_rank(std::span<const int> labels_in_rank_order);

struct RankedCandidate {
  std::string candidate_id;
  double score = 0.0;
  int label = 0;
};

struct QuestionRanking {
  std::string qid;
  std::vector<RankedCandidate> candidates;  // rank order
};

struct RankedRun {
  std::vector<QuestionRanking> questions;
};

// How questions without any relevant candidate enter the corpus means.
enum class NoRelevantPolicy { kExclude, kCountAsZero };

struct RunEvaluation {
  double map = 0.0;
  double mrr = 0.0;
  std::vector<std::string> qids;  // evaluated questions, in run order
  std::vector<double> average_precision;
  std::vector<double> reciprocal_rank;
  std::size_t excluded = 0;
};

// Throws DataError when no question is evaluable.
RunEvaluation evaluate_run(const RankedRun& run,
                           NoRelevantPolicy policy = NoRelevantPolicy::kExclude);

struct SignificanceReport {
  double t_statistic = 0.0;
  double p_value = 1.0;
  std::size_t degrees_of_freedom = 0;
  double mean_difference = 0.0;
};

// Two-sided paired t-test on a - b. Zero-variance differences give p = 1
// when the mean difference is 0 and p = 0 otherwise.
SignificanceReport paired_t_test(std::span<const double> a, std::span<const double> b);

enum class PerQuestionStat { kAveragePrecision, kReciprocalRank };

// Aligns two evaluations by question id (both must cover the same set).
SignificanceReport paired_t_test(const RunEvaluation& a, const RunEvaluation& b,
                                 PerQuestionStat stat = PerQuestionStat::kAveragePrecision);

// ---- Run and qrels files --------------------------------------------------

// One line per scored candidate: qid TAB candidate_id TAB rank TAB score.
struct RunLine {
  std::string qid;
  std::string candidate_id;
  std::size_t rank = 0;
  double score = 0.0;
};

void write_run_file(std::span<const RunLine> lines, const std::filesystem::path& path);
std::vector<RunLine> read_run_file(const std::filesystem::path& path);
std::string format_score(double score);

// qid TAB candidate_id TAB label.
using Qrels = std::map<std::string, std::map<std::string, int>>;
Qrels read_qrels(const std::filesystem::path& path);
void write_qrels(const Qrels& qrels, const std::filesystem::path& path);

// Orders each question's candidates by the run's rank column and attaches
// labels. Candidates missing from qrels count as non-relevant.
RankedRun join_run(std::span<const RunLine> lines, const Qrels& qrels);

// Human-readable summary plus machine-readable key=value lines.
std::string format_report(const RunEvaluation& eval);
std::string format_report(const SignificanceReport& report);

}  // namespace ansel

#endif  // ANSEL_METRICS_H_
