#ifndef ANSEL_FINETUNE_H_
#define ANSEL_FINETUNE_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ansel/autograd.h"
#include "ansel/checkpoint.h"
#include "ansel/data_io.h"
#include "ansel/encoder.h"
#include "ansel/metrics.h"
#include "ansel/tokenizer.h"

namespace ansel {

// Answer selection has two labels: 1 relevant, 0 not.
inline constexpr std::size_t kLabelCount = 2;

// Linear layer over the [CLS] vector: P = softmax(C W^T + b).
struct ClassifierHead {
  Parameter weight;  // kLabelCount x hidden
  Parameter bias;    // kLabelCount
  bool use_bias = true;

  static ClassifierHead initialize(std::size_t hidden, Rng& rng, bool use_bias = true);
  NamedParameters named_parameters();
  Checkpoint to_checkpoint() const;
  // A checkpoint without "classifier.bias" yields a bias-free head.
  static ClassifierHead from_checkpoint(const Checkpoint& checkpoint);
};

struct LabelDistribution {
  std::vector<double> p;
};

struct RelevanceScore {
  double value = 0.0;
};

LabelDistribution classify(const Tensor& cls_vector, const ClassifierHead& head);
// Probability of the relevant label.
RelevanceScore relevance_score(const LabelDistribution& dist);

struct BoundClassifier {
  Var weight;
  Var bias;  // invalid when the head has no bias
};

BoundClassifier bind_trainable(Graph& graph, ClassifierHead& head);
BoundClassifier bind_frozen(Graph& graph, const ClassifierHead& head);
// Row-wise label probabilities for a stack of [CLS] rows.
Var classify(Var cls_rows, const BoundClassifier& head);

enum class FinetuneMode { kFinetuneAll, kFrozenEncoder };
enum class SelectionMetric { kMap, kMrr };

std::string_view mode_name(FinetuneMode mode);
std::optional<FinetuneMode> parse_mode(std::string_view name);

struct FinetuneConfig {
  std::size_t batch_size = 16;
  std::size_t epochs = 2;
  double learning_rate = 2e-5;
  std::size_t max_len = kDefaultMaxLength;
  FinetuneMode mode = FinetuneMode::kFinetuneAll;
  SelectionMetric selection = SelectionMetric::kMap;
  std::uint64_t seed = 7;

  void validate() const;
};

struct EpochLog {
  std::size_t epoch = 0;
  double mean_train_loss = 0.0;
  double valid_map = 0.0;
  double valid_mrr = 0.0;
};

struct FinetuneResult {
  EncoderWeights encoder;
  ClassifierHead head;
  std::size_t best_epoch = 0;  // 0 when no epoch ran
  double best_valid_metric = 0.0;
  std::vector<EpochLog> epochs;
  std::vector<double> step_losses;
  std::size_t skipped_pairs = 0;  // training pairs that could not be packed

  Checkpoint to_checkpoint() const;
};

// Pointwise cross-entropy over shuffled (question, candidate, label) pairs
// with Adam. After each epoch the validation split is ranked and the state
// with the best selection metric is kept (earlier epoch on ties). In frozen
// mode the encoder runs once in eval mode to produce fixed [CLS] features and
// only the head trains.
FinetuneResult finetune(const DatasetSplit& train, const DatasetSplit& valid, const Vocab& vocab,
                        const EncoderConfig& encoder_config, EncoderWeights weights,
                        ClassifierHead head, const FinetuneConfig& config);

struct ScoredCandidate {
  std::size_t index = 0;  // position in the input candidate list
  double score = 0.0;
  bool flagged = false;  // pair could not be encoded; scored 0
};

using RankedList = std::vector<ScoredCandidate>;

// Sorts descending by score; equal scores keep input order.
RankedList order_by_score(std::span<const ScoredCandidate> scored);

// Scores every (question, candidate) pair and ranks them.
RankedList rank_candidates(std::string_view question, std::span<const std::string> candidates,
                           const EncoderWeights& weights, const EncoderConfig& config,
                           const ClassifierHead& head, const Vocab& vocab, std::size_t max_len);

// Ranks every question of a split; returns run-file lines in rank order.
std::vector<RunLine> rank_split(const DatasetSplit& split, const EncoderWeights& weights,
                                const EncoderConfig& config, const ClassifierHead& head,
                                const Vocab& vocab, std::size_t max_len);

Qrels qrels_from_split(const DatasetSplit& split);

// rank_split followed by evaluate_run against the split's own labels.
RunEvaluation evaluate_split(const DatasetSplit& split, const EncoderWeights& weights,
                             const EncoderConfig& config, const ClassifierHead& head,
                             const Vocab& vocab, std::size_t max_len);

}  // namespace ansel

#endif  // ANSEL_FINETUNE_H_
