#ifndef ANSEL_PRETRAINING_H_
#define ANSEL_PRETRAINING_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ansel/autograd.h"
#include "ansel/checkpoint.h"
#include "ansel/data_io.h"
#include "ansel/encoder.h"
#include "ansel/tokenizer.h"

namespace ansel {

// Output layers for the two pretraining objectives.
struct PretrainHeads {
  Parameter mlm_w;     // hidden x vocab_size
  Parameter mlm_bias;  // vocab_size
  Parameter nsp_w;     // 2 x hidden, applied as C W^T
  Parameter nsp_bias;  // 2

  static PretrainHeads initialize(const EncoderConfig& config, Rng& rng);
  NamedParameters named_parameters();
  Checkpoint to_checkpoint() const;
  static PretrainHeads from_checkpoint(const Checkpoint& checkpoint);
};

struct MlmTarget {
  std::size_t position = 0;
  int original_id = 0;

  friend bool operator==(const MlmTarget&, const MlmTarget&) = default;
};

struct MaskedBatch {
  TokenSequence input;
  std::vector<MlmTarget> mlm_targets;  // ascending position
  int nsp_label = 0;                   // 1 = b follows a

  friend bool operator==(const MaskedBatch&, const MaskedBatch&) = default;
};

struct MaskingOptions {
  // Off: every selected token becomes [MASK]. On: 80% [MASK], 10% random
  // non-special token, 10% unchanged.
  bool mixed_replacement = false;
  std::size_t vocab_size = 0;  // required when mixed_replacement is on
};

inline constexpr double kDefaultMaskRate = 0.15;

// Selects max(1, round(rate * maskable)) maskable positions (not special,
// not padding) uniformly without replacement.
MaskedBatch mask_tokens(const TokenSequence& seq, double rate, std::uint64_t seed,
                        const MaskingOptions& options = {});

struct NspPair {
  std::string first;
  std::string second;
  int label = 0;
};

// Draws next-sentence pairs. Anchors are sentences with a successor in the
// same document. Half the pairs (in expectation) take that true successor
// (label 1); the rest take a uniformly drawn sentence that is neither the
// anchor nor its successor (label 0).
class NspSampler {
 public:
  explicit NspSampler(const std::vector<Document>& corpus);
  NspPair draw(Rng& rng) const;

 private:
  std::vector<const std::string*> sentences_;
  std::vector<std::size_t> anchors_;
};

std::vector<NspPair> build_nsp_pairs(const std::vector<Document>& corpus, std::size_t count,
                                     std::uint64_t seed);

struct PretrainConfig {
  std::size_t steps = 300;
  std::size_t batch_size = 128;
  double learning_rate = 1e-2;
  std::size_t max_len = 32;
  double mask_rate = kDefaultMaskRate;
  bool mixed_replacement = false;
  std::uint64_t seed = 7;
};

// Masked, packed pretraining examples. Pairs that cannot be packed at
// max_len are skipped.
std::vector<MaskedBatch> make_pretraining_examples(const std::vector<Document>& corpus,
                                                   const Vocab& vocab, std::size_t count,
                                                   const PretrainConfig& config,
                                                   std::uint64_t seed);

struct PretrainLoss {
  LossValue mlm;
  LossValue nsp;
  LossValue total;  // mlm + nsp, weighted 1:1
};

struct BoundPretrainHeads {
  Var mlm_w, mlm_bias, nsp_w, nsp_bias;
};

BoundPretrainHeads bind_trainable(Graph& graph, PretrainHeads& heads);
BoundPretrainHeads bind_frozen(Graph& graph, const PretrainHeads& heads);

// MLM cross-entropy averaged over every masked position in the batch plus
// NSP cross-entropy on each [CLS] vector.
PretrainLoss pretraining_loss(Graph& graph, const BoundEncoder& encoder,
                              const BoundPretrainHeads& heads, const EncoderConfig& config,
                              std::span<const MaskedBatch> batch, const DropoutContext& dropout);

// Eval-mode (no dropout) loss of a fixed batch.
PretrainLoss evaluate_pretraining_loss(const EncoderWeights& weights, const PretrainHeads& heads,
                                       const EncoderConfig& config,
                                       std::span<const MaskedBatch> batch);

struct PretrainStepLog {
  std::size_t step = 0;
  double mlm_loss = 0.0;
  double nsp_loss = 0.0;
};

struct PretrainResult {
  EncoderWeights encoder;
  PretrainHeads heads;
  std::vector<PretrainStepLog> log;

  Checkpoint to_checkpoint() const;
};

// Deterministic given config.seed. A NaN loss raises NumericError naming
// the step.
PretrainResult pretrain(const std::vector<Document>& corpus, const Vocab& vocab,
                        const EncoderConfig& encoder_config, EncoderWeights weights,
                        PretrainHeads heads, const PretrainConfig& config);

// "step TAB mlm_loss TAB nsp_loss" lines.
std::string format_loss_log(std::span<const PretrainStepLog> log);
void write_loss_log(std::span<const PretrainStepLog> log, const std::filesystem::path& path);

}  // namespace ansel

#endif  // ANSEL_PRETRAINING_H_
