#include "ansel/finetune.h"

#include <algorithm>
#include <cmath>

#include "ansel/errors.h"
#include "ansel/optimizer.h"
#include "ansel/rng.h"

namespace ansel {
namespace {

struct TrainingPair {
  TokenSequence seq;
  int label = 0;
};

std::vector<TrainingPair> pack_split(const DatasetSplit& split, const Vocab& vocab,
                                     std::size_t max_len, std::size_t* skipped) {
  std::vector<TrainingPair> out;
  for (const auto& group : split.groups) {
    const auto q = tokenize_ids(group.question, vocab);
    for (const auto& c : group.candidates) {
      try {
        out.push_back({trim_padding(pack_pair(q, tokenize_ids(c.answer, vocab), max_len)), c.label});
      } catch (const DataError&) {
        ++*skipped;
      }
    }
  }
  return out;
}

Tensor cls_row(const Tensor& hidden) {
  return Tensor({1, hidden.cols()},
                std::vector<double>(hidden.row(0).begin(), hidden.row(0).end()));
}

}  // namespace

ClassifierHead ClassifierHead::initialize(std::size_t hidden, Rng& rng, bool use_bias) {
  ClassifierHead head;
  Tensor w({kLabelCount, hidden});
  for (auto& v : w.data()) v = rng.truncated_normal(kInitStddev);
  head.weight = Parameter(std::move(w));
  head.bias = Parameter(Tensor::zeros({kLabelCount}));
  head.use_bias = use_bias;
  return head;
}

NamedParameters ClassifierHead::named_parameters() {
  NamedParameters out{{"classifier.W", &weight}};
  if (use_bias) out.emplace_back("classifier.bias", &bias);
  return out;
}

Checkpoint ClassifierHead::to_checkpoint() const {
  Checkpoint out{{"classifier.W", weight.value}};
  if (use_bias) out.emplace("classifier.bias", bias.value);
  return out;
}

ClassifierHead ClassifierHead::from_checkpoint(const Checkpoint& checkpoint) {
  auto w = checkpoint.find("classifier.W");
  if (w == checkpoint.end()) throw DataError("checkpoint lacks classifier.W");
  if (w->second.rows() != kLabelCount) {
    throw DataError("classifier.W must have " + std::to_string(kLabelCount) + " rows");
  }
  ClassifierHead head;
  head.weight = Parameter(w->second);
  auto b = checkpoint.find("classifier.bias");
  head.use_bias = b != checkpoint.end();
  head.bias = Parameter(head.use_bias ? b->second : Tensor::zeros({kLabelCount}));
  return head;
}

BoundClassifier bind_trainable(Graph& graph, ClassifierHead& head) {
  BoundClassifier b;
  b.weight = graph.parameter(head.weight);
  if (head.use_bias) b.bias = graph.parameter(head.bias);
  return b;
}

BoundClassifier bind_frozen(Graph& graph, const ClassifierHead& head) {
  BoundClassifier b;
  b.weight = graph.constant(head.weight.value);
  if (head.use_bias) b.bias = graph.constant(head.bias.value);
  return b;
}

Var classify(Var cls_rows, const BoundClassifier& head) {
  Var logits = matmul_nt(cls_rows, head.weight);
  if (head.bias.valid()) logits = add_row_bias(logits, head.bias);
  return softmax_rows(logits);
}

LabelDistribution classify(const Tensor& cls_vector, const ClassifierHead& head) {
  Graph graph;
  Var probs = classify(graph.constant(cls_vector.reshaped({1, cls_vector.size()})),
                       bind_frozen(graph, head));
  const auto row = probs.value().row(0);
  return {std::vector<double>(row.begin(), row.end())};
}

RelevanceScore relevance_score(const LabelDistribution& dist) {
  if (dist.p.size() != kLabelCount) {
    throw DimensionError("relevance_score expects " + std::to_string(kLabelCount) +
                         " label probabilities, got " + std::to_string(dist.p.size()));
  }
  return {dist.p[1]};
}

std::string_view mode_name(FinetuneMode mode) {
  return mode == FinetuneMode::kFinetuneAll ? "finetune_all" : "frozen_encoder";
}

std::optional<FinetuneMode> parse_mode(std::string_view name) {
  if (name == "finetune_all") return FinetuneMode::kFinetuneAll;
  if (name == "frozen_encoder") return FinetuneMode::kFrozenEncoder;
  return std::nullopt;
}

void FinetuneConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (max_len < kMinSequenceLength) {
    throw ConfigError("max_len must be at least " + std::to_string(kMinSequenceLength));
  }
}

Checkpoint FinetuneResult::to_checkpoint() const {
  Checkpoint out = encoder.to_checkpoint();
  for (auto& [name, value] : head.to_checkpoint()) out.emplace(name, value);
  return out;
}

FinetuneResult finetune(const DatasetSplit& train, const DatasetSplit& valid, const Vocab& vocab,
                        const EncoderConfig& encoder_config, EncoderWeights weights,
                        ClassifierHead head, const FinetuneConfig& config) {
  config.validate();
  encoder_config.validate();
  if (train.groups.empty()) throw DataError("training split is empty");
  if (valid.groups.empty()) throw DataError("validation split is empty");
  AdamConfig adam;
  adam.learning_rate = config.learning_rate;

  FinetuneResult result{std::move(weights), std::move(head), 0, 0.0, {}, {}, 0};
  if (config.epochs == 0) return result;

  const std::vector<TrainingPair> pairs =
      pack_split(train, vocab, config.max_len, &result.skipped_pairs);
  if (pairs.empty()) throw DataError("no training pair fits max_len " + std::to_string(config.max_len));

  const bool frozen = config.mode == FinetuneMode::kFrozenEncoder;
  std::vector<Tensor> features;
  if (frozen) {
    features.reserve(pairs.size());
    for (const auto& p : pairs) {
      features.push_back(cls_row(encode(p.seq, result.encoder, encoder_config).hidden_states));
    }
  }

  NamedParameters params = result.head.named_parameters();
  if (!frozen) {
    for (auto& entry : result.encoder.named_parameters()) params.push_back(entry);
  }
  for (auto& [name, p] : params) p->reset_optimizer_state();

  Rng rng(config.seed);
  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  EncoderWeights best_encoder = result.encoder;
  ClassifierHead best_head = result.head;
  bool have_best = false;
  static constexpr int kFirstRow[] = {0};

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      Rng dropout_rng(rng.fork());
      try {
        Graph graph;
        const BoundClassifier bound_head = bind_trainable(graph, result.head);
        std::vector<Var> rows;
        std::vector<int> labels;
        if (frozen) {
          for (std::size_t i = start; i < end; ++i) {
            rows.push_back(graph.constant(features[order[i]]));
            labels.push_back(pairs[order[i]].label);
          }
        } else {
          const BoundEncoder enc = bind_trainable(graph, result.encoder);
          const DropoutContext dropout{encoder_config.dropout, &dropout_rng};
          for (std::size_t i = start; i < end; ++i) {
            Var hidden = encode(graph, enc, encoder_config, pairs[order[i]].seq, dropout);
            rows.push_back(gather_rows(hidden, kFirstRow));
            labels.push_back(pairs[order[i]].label);
          }
        }
        if (rows.empty()) throw DataError("empty training batch");
        const LossValue loss = cross_entropy(classify(concat_rows(rows), bound_head), labels);
        backward(loss);
        adam_step(params, adam);
        loss_sum += loss.scalar;
        result.step_losses.push_back(loss.scalar);
        ++steps;
      } catch (const NumericError& e) {
        throw NumericError("fine-tuning diverged at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(steps) + ": " + e.what());
      }
    }
    const RunEvaluation eval =
        evaluate_split(valid, result.encoder, encoder_config, result.head, vocab, config.max_len);
    EpochLog log{epoch, loss_sum / static_cast<double>(steps), eval.map, eval.mrr};
    result.epochs.push_back(log);
    const double metric = config.selection == SelectionMetric::kMap ? eval.map : eval.mrr;
    if (!have_best || metric > result.best_valid_metric) {
      have_best = true;
      result.best_valid_metric = metric;
      result.best_epoch = epoch;
      best_encoder = result.encoder;
      best_head = result.head;
    }
  }
  result.encoder = std::move(best_encoder);
  result.head = std::move(best_head);
  return result;
}

RankedList order_by_score(std::span<const ScoredCandidate> scored) {
  RankedList ranked(scored.begin(), scored.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const ScoredCandidate& a, const ScoredCandidate& b) {
                     return a.score > b.score;
                   });
  return ranked;
}

namespace {

// Scores candidates of one question on a shared inference tape.
std::vector<ScoredCandidate> score_candidates(std::string_view question,
                                              std::span<const std::string> candidates,
                                              const EncoderWeights& weights,
                                              const EncoderConfig& config,
                                              const ClassifierHead& head, const Vocab& vocab,
                                              std::size_t max_len) {
  if (candidates.empty()) throw DataError("rank_candidates needs at least one candidate");
  static constexpr int kFirstRow[] = {0};
  Graph graph;
  const BoundEncoder enc = bind_frozen(graph, weights);
  const BoundClassifier bound_head = bind_frozen(graph, head);
  const auto q = tokenize_ids(question, vocab);
  std::vector<ScoredCandidate> scored;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    ScoredCandidate s{i, 0.0, false};
    TokenSequence seq;
    try {
      seq = trim_padding(pack_pair(q, tokenize_ids(candidates[i], vocab), max_len));
    } catch (const DataError&) {
      s.flagged = true;
      scored.push_back(s);
      continue;
    }
    Var hidden = encode(graph, enc, config, seq, DropoutContext{});
    Var probs = classify(gather_rows(hidden, kFirstRow), bound_head);
    s.score = probs.value().at(0, 1);
    scored.push_back(s);
  }
  return scored;
}

}  // namespace

RankedList rank_candidates(std::string_view question, std::span<const std::string> candidates,
                           const EncoderWeights& weights, const EncoderConfig& config,
                           const ClassifierHead& head, const Vocab& vocab, std::size_t max_len) {
  return order_by_score(
      score_candidates(question, candidates, weights, config, head, vocab, max_len));
}

std::vector<RunLine> rank_split(const DatasetSplit& split, const EncoderWeights& weights,
                                const EncoderConfig& config, const ClassifierHead& head,
                                const Vocab& vocab, std::size_t max_len) {
  std::vector<RunLine> lines;
  for (const auto& group : split.groups) {
    std::vector<std::string> answers;
    for (const auto& c : group.candidates) answers.push_back(c.answer);
    const RankedList ranked =
        rank_candidates(group.question, answers, weights, config, head, vocab, max_len);
    for (std::size_t r = 0; r < ranked.size(); ++r) {
      lines.push_back({group.qid, group.candidates[ranked[r].index].candidate_id, r + 1,
                       ranked[r].score});
    }
  }
  return lines;
}

Qrels qrels_from_split(const DatasetSplit& split) {
  Qrels qrels;
  for (const auto& g : split.groups)
    for (const auto& c : g.candidates) qrels[g.qid][c.candidate_id] = c.label;
  return qrels;
}

RunEvaluation evaluate_split(const DatasetSplit& split, const EncoderWeights& weights,
                             const EncoderConfig& config, const ClassifierHead& head,
                             const Vocab& vocab, std::size_t max_len) {
  const auto lines = rank_split(split, weights, config, head, vocab, max_len);
  return evaluate_run(join_run(lines, qrels_from_split(split)));
}

}  // namespace ansel
