#ifndef ANSEL_ENCODER_H_
#define ANSEL_ENCODER_H_

#include <cstddef>
#include <span>
#include <vector>

#include "ansel/autograd.h"
#include "ansel/checkpoint.h"
#include "ansel/tensor.h"
#include "ansel/tokenizer.h"

namespace ansel {

class Rng;

struct EncoderConfig {
  std::size_t layers = 2;
  std::size_t hidden = 16;
  std::size_t heads = 2;
  std::size_t ffn = 32;
  std::size_t vocab_size = 200;
  std::size_t max_positions = kDefaultMaxLength;
  double dropout = 0.1;

  // 24 layers, hidden 1024, 16 heads, feed-forward 4096.
  static EncoderConfig bert_large(std::size_t vocab_size);

  void validate() const;
  std::size_t head_dim() const { return hidden / heads; }
  // Closed-form count of scalar weights allocated by EncoderWeights.
  std::size_t parameter_count() const;

  // Recovers the architecture from parameter shapes. Dropout is not stored
  // and is taken from `dropout`.
  static EncoderConfig from_checkpoint(const Checkpoint& checkpoint,
                                       double dropout = 0.1);

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

inline constexpr double kInitStddev = 0.02;
inline constexpr double kMaskPenalty = -1e9;
inline constexpr double kLayerNormEps = 1e-12;

struct AttentionHead {
  Parameter w_q;  // hidden x head_dim
  Parameter w_k;
  Parameter w_v;
};

struct EncoderLayer {
  std::vector<AttentionHead> heads;
  Parameter w_o;  // hidden x hidden
  Parameter b_o;
  Parameter ln1_gain;
  Parameter ln1_bias;
  Parameter w_1;  // hidden x ffn
  Parameter b_1;
  Parameter w_2;  // ffn x hidden
  Parameter b_2;
  Parameter ln2_gain;
  Parameter ln2_bias;
};

struct EncoderWeights {
  Parameter token_embedding;     // vocab_size x hidden
  Parameter segment_embedding;   // 2 x hidden
  Parameter position_embedding;  // max_positions x hidden
  Parameter embedding_ln_gain;
  Parameter embedding_ln_bias;
  std::vector<EncoderLayer> layers;

  // Truncated-normal(0.02) matrices and embeddings; zero biases; unit
  // layer-norm gains.
  static EncoderWeights initialize(const EncoderConfig& config, Rng& rng);
  static EncoderWeights from_checkpoint(const Checkpoint& checkpoint);

  // Stable hierarchical names, e.g. "layer.3.head.1.W_Q".
  NamedParameters named_parameters();
  Checkpoint to_checkpoint() const;
  std::size_t parameter_count() const;
};

struct EncodedSequence {
  Tensor hidden_states;  // seq_len x hidden
  Tensor cls_vector;     // hidden
};

// ---- Tape-level building blocks ------------------------------------------

struct BoundHead {
  Var w_q, w_k, w_v;
};

struct BoundLayer {
  std::vector<BoundHead> heads;
  Var w_o, b_o, ln1_gain, ln1_bias, w_1, b_1, w_2, b_2, ln2_gain, ln2_bias;
};

// Encoder weights placed on a tape once and shared by every sequence in a
// batch. Trainable binding routes gradients into the Parameters; frozen
// binding makes them constants.
struct BoundEncoder {
  Var token_embedding, segment_embedding, position_embedding;
  Var embedding_ln_gain, embedding_ln_bias;
  std::vector<BoundLayer> layers;
};

BoundEncoder bind_trainable(Graph& graph, EncoderWeights& weights);
BoundEncoder bind_frozen(Graph& graph, const EncoderWeights& weights);
BoundHead bind_frozen(Graph& graph, const AttentionHead& head);
BoundLayer bind_frozen(Graph& graph, const EncoderLayer& layer);

// Dropout source for train mode; nullptr or rate 0 disables dropout.
struct DropoutContext {
  double rate = 0.0;
  Rng* rng = nullptr;
};

// Additive attention mask over key positions: 0 where attended,
// kMaskPenalty where masked.
Tensor mask_penalty(std::span<const int> attention_mask);

Var embed(Graph& graph, const BoundEncoder& enc, const TokenSequence& seq);
// `weights_out`, when given, receives the softmax attention matrix.
Var attention_head(Var x, const BoundHead& head, const Tensor& penalty,
                   Tensor* weights_out = nullptr);
Var multi_head_attention(Var x, const BoundLayer& layer, const Tensor& penalty);
Var encoder_layer(Var x, const BoundLayer& layer, const Tensor& penalty,
                  const DropoutContext& dropout);
// Full stack; returns seq_len x hidden states. Non-finite intermediates
// raise NumericError naming the layer.
Var encode(Graph& graph, const BoundEncoder& enc, const EncoderConfig& config,
           const TokenSequence& seq, const DropoutContext& dropout);

// ---- Value-level convenience wrappers -----------------------------------

Tensor embed(const TokenSequence& seq, const EncoderWeights& weights);
Tensor attention_head(const Tensor& x, const AttentionHead& head,
                      std::span<const int> attention_mask);
Tensor attention_weights(const Tensor& x, const AttentionHead& head,
                         std::span<const int> attention_mask);
Tensor multi_head_attention(const Tensor& x, const EncoderLayer& layer,
                            std::span<const int> attention_mask);
// Inference when train_mode is false; train mode applies config.dropout
// drawn from `rng` (required then).
EncodedSequence encode(const TokenSequence& seq, const EncoderWeights& weights,
                       const EncoderConfig& config, bool train_mode = false,
                       Rng* rng = nullptr);

}  // namespace ansel

#endif  // ANSEL_ENCODER_H_
