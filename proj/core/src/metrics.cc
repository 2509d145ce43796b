#include "ansel/metrics.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <boost/math/special_functions/beta.hpp>

#include "ansel/errors.h"

namespace ansel {
namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return fields;
}

template <typename T>
T parse_number(const std::string& text, const std::string& what, std::size_t line_no) {
  T value{};
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw DataError("line " + std::to_string(line_no) + ": invalid " + what + " '" + text + "'");
  }
  return value;
}

}  // namespace

std::optional<double> average_precision(std::span<const int> labels) {
  std::size_t hits = 0;
  double total = 0.0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] > 0) {
      ++hits;
      total += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
  }
  if (hits == 0) return std::nullopt;
  return total / static_cast<double>(hits);
}

std::optional<double> reciprocal_rank(std::span<const int> labels) {
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] > 0) return 1.0 / static_cast<double>(r + 1);
  }
  return std::nullopt;
}

RunEvaluation evaluate_run(const RankedRun& run, NoRelevantPolicy policy) {
  RunEvaluation eval;
  std::vector<int> labels;
  for (const auto& q : run.questions) {
    labels.clear();
    for (const auto& c : q.candidates) labels.push_back(c.label);
    auto ap = average_precision(labels);
    auto rr = reciprocal_rank(labels);
    if (!ap) {
      ++eval.excluded;
      if (policy == NoRelevantPolicy::kExclude) continue;
      ap = 0.0;
      rr = 0.0;
    }
    eval.qids.push_back(q.qid);
    eval.average_precision.push_back(*ap);
    eval.reciprocal_rank.push_back(*rr);
  }
  if (eval.qids.empty()) throw DataError("no evaluable questions in run");
  double ap_sum = 0.0, rr_sum = 0.0;
  for (double v : eval.average_precision) ap_sum += v;
  for (double v : eval.reciprocal_rank) rr_sum += v;
  const auto n = static_cast<double>(eval.qids.size());
  eval.map = ap_sum / n;
  eval.mrr = rr_sum / n;
  return eval;
}

SignificanceReport paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DataError("paired t-test needs equal-length samples, got " + std::to_string(a.size()) +
                    " and " + std::to_string(b.size()));
  }
  const std::size_t n = a.size();
  if (n < 2) throw DataError("paired t-test needs at least 2 pairs");
  std::vector<double> d(n);
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    d[i] = a[i] - b[i];
    mean += d[i];
  }
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double v : d) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));

  SignificanceReport report;
  report.degrees_of_freedom = n - 1;
  report.mean_difference = mean;
  if (sd == 0.0) {
    if (mean == 0.0) {
      report.t_statistic = 0.0;
      report.p_value = 1.0;
    } else {
      report.t_statistic = std::copysign(std::numeric_limits<double>::infinity(), mean);
      report.p_value = 0.0;
    }
    return report;
  }
  const double t = mean / (sd / std::sqrt(static_cast<double>(n)));
  const double nu = static_cast<double>(n - 1);
  // Two-sided tail: P(|T| > t) = I_{nu / (nu + t^2)}(nu / 2, 1 / 2).
  const double p = boost::math::ibeta(0.5 * nu, 0.5, nu / (nu + t * t));
  report.t_statistic = t;
  report.p_value = std::clamp(p, 0.0, 1.0);
  return report;
}

SignificanceReport paired_t_test(const RunEvaluation& a, const RunEvaluation& b,
                                 PerQuestionStat stat) {
  std::map<std::string, std::size_t> index_b;
  for (std::size_t i = 0; i < b.qids.size(); ++i) index_b.emplace(b.qids[i], i);
  if (a.qids.size() != b.qids.size()) {
    throw DataError("runs evaluate different question sets (" + std::to_string(a.qids.size()) +
                    " vs " + std::to_string(b.qids.size()) + " questions)");
  }
  const auto& values_a = stat == PerQuestionStat::kAveragePrecision ? a.average_precision
                                                                      : a.reciprocal_rank;
  const auto& values_b = stat == PerQuestionStat::kAveragePrecision ? b.average_precision
                                                                      : b.reciprocal_rank;
  std::vector<double> xa, xb;
  for (std::size_t i = 0; i < a.qids.size(); ++i) {
    auto it = index_b.find(a.qids[i]);
    if (it == index_b.end()) {
      throw DataError("question " + a.qids[i] + " missing from the second run");
    }
    xa.push_back(values_a[i]);
    xb.push_back(values_b[it->second]);
  }
  return paired_t_test(xa, xb);
}

std::string format_score(double score) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", score);
  return buf;
}

void write_run_file(std::span<const RunLine> lines, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write run file " + path.string());
  for (const auto& l : lines) {
    out << l.qid << '\t' << l.candidate_id << '\t' << l.rank << '\t' << format_score(l.score)
        << '\n';
  }
}

std::vector<RunLine> read_run_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open run file " + path.string());
  std::vector<RunLine> lines;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto f = split_tabs(line);
    if (f.size() != 4) {
      throw DataError(path.string() + " line " + std::to_string(line_no) +
                      ": expected 4 tab-separated fields, got " + std::to_string(f.size()));
    }
    RunLine r;
    r.qid = f[0];
    r.candidate_id = f[1];
    r.rank = parse_number<std::size_t>(f[2], "rank", line_no);
    r.score = parse_number<double>(f[3], "score", line_no);
    lines.push_back(std::move(r));
  }
  return lines;
}

Qrels read_qrels(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open qrels " + path.string());
  Qrels qrels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto f = split_tabs(line);
    if (f.size() != 3) {
      throw DataError(path.string() + " line " + std::to_string(line_no) +
                      ": expected 3 tab-separated fields, got " + std::to_string(f.size()));
    }
    const int label = parse_number<int>(f[2], "label", line_no);
    if (label != 0 && label != 1) {
      throw DataError(path.string() + " line " + std::to_string(line_no) +
                      ": label must be 0 or 1");
    }
    qrels[f[0]][f[1]] = label;
  }
  return qrels;
}

void write_qrels(const Qrels& qrels, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write qrels " + path.string());
  for (const auto& [qid, labels] : qrels)
    for (const auto& [cid, label] : labels) out << qid << '\t' << cid << '\t' << label << '\n';
}

RankedRun join_run(std::span<const RunLine> lines, const Qrels& qrels) {
  RankedRun run;
  std::map<std::string, std::size_t> position;
  std::vector<std::vector<RunLine>> grouped;
  for (const auto& l : lines) {
    auto [it, inserted] = position.emplace(l.qid, grouped.size());
    if (inserted) grouped.emplace_back();
    grouped[it->second].push_back(l);
  }
  for (auto& group : grouped) {
    std::stable_sort(group.begin(), group.end(),
                     [](const RunLine& a, const RunLine& b) { return a.rank < b.rank; });
    QuestionRanking q;
    q.qid = group.front().qid;
    std::set<std::string> seen;
    const auto labels = qrels.find(q.qid);
    for (const auto& l : group) {
      if (!seen.insert(l.candidate_id).second) {
        throw DataError("candidate " + l.candidate_id + " listed twice for question " + q.qid);
      }
      int label = 0;
      if (labels != qrels.end()) {
        auto it = labels->second.find(l.candidate_id);
        if (it != labels->second.end()) label = it->second;
      }
      q.candidates.push_back({l.candidate_id, l.score, label});
    }
    run.questions.push_back(std::move(q));
  }
  return run;
}

std::string format_report(const RunEvaluation& eval) {
  char buf[64];
  std::ostringstream out;
  std::snprintf(buf, sizeof(buf), "MAP %.4f, MRR %.4f", eval.map, eval.mrr);
  out << buf << '\n';
  out << "questions=" << eval.qids.size() << '\n';
  out << "excluded=" << eval.excluded << '\n';
  out << "map=" << format_score(eval.map) << '\n';
  out << "mrr=" << format_score(eval.mrr) << '\n';
  return out.str();
}

std::string format_report(const SignificanceReport& report) {
  char buf[96];
  std::ostringstream out;
  std::snprintf(buf, sizeof(buf), "t = %.4f, p = %.4f (dof %zu)", report.t_statistic,
                report.p_value, report.degrees_of_freedom);
  out << buf << '\n';
  out << "t=" << format_score(report.t_statistic) << '\n';
  out << "p=" << format_score(report.p_value) << '\n';
  out << "dof=" << report.degrees_of_freedom << '\n';
  out << "mean_difference=" << format_score(report.mean_difference) << '\n';
  return out.str();
}

}  // namespace ansel
