#include "ansel/encoder.h"

#include <cmath>
#include <string>

#include "ansel/errors.h"
#include "ansel/rng.h"

namespace ansel {
namespace {

Tensor random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t({rows, cols});
  for (auto& v : t.data()) v = rng.truncated_normal(kInitStddev);
  return t;
}

Parameter random_param(std::size_t rows, std::size_t cols, Rng& rng) {
  return Parameter(random_matrix(rows, cols, rng));
}

Parameter zeros_param(std::size_t n) { return Parameter(Tensor::zeros({n})); }
Parameter ones_param(std::size_t n) { return Parameter(Tensor::filled({n}, 1.0)); }

std::string layer_prefix(std::size_t l) { return "layer." + std::to_string(l) + "."; }

// Visits every parameter with its checkpoint name; works for const and
// mutable weights.
template <typename Weights, typename Fn>
void for_each_parameter(Weights& w, Fn&& fn) {
  fn("embeddings.token", w.token_embedding);
  fn("embeddings.segment", w.segment_embedding);
  fn("embeddings.position", w.position_embedding);
  fn("embeddings.ln.gain", w.embedding_ln_gain);
  fn("embeddings.ln.bias", w.embedding_ln_bias);
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    auto& layer = w.layers[l];
    const std::string p = layer_prefix(l);
    for (std::size_t h = 0; h < layer.heads.size(); ++h) {
      const std::string hp = p + "head." + std::to_string(h) + ".";
      fn(hp + "W_Q", layer.heads[h].w_q);
      fn(hp + "W_K", layer.heads[h].w_k);
      fn(hp + "W_V", layer.heads[h].w_v);
    }
    fn(p + "attn.W_O", layer.w_o);
    fn(p + "attn.b_O", layer.b_o);
    fn(p + "attn.ln.gain", layer.ln1_gain);
    fn(p + "attn.ln.bias", layer.ln1_bias);
    fn(p + "ffn.W_1", layer.w_1);
    fn(p + "ffn.b_1", layer.b_1);
    fn(p + "ffn.W_2", layer.w_2);
    fn(p + "ffn.b_2", layer.b_2);
    fn(p + "ffn.ln.gain", layer.ln2_gain);
    fn(p + "ffn.ln.bias", layer.ln2_bias);
  }
}

const Tensor& require(const Checkpoint& checkpoint, const std::string& name) {
  auto it = checkpoint.find(name);
  if (it == checkpoint.end()) throw DataError("checkpoint lacks " + name);
  return it->second;
}

}  // namespace

EncoderConfig EncoderConfig::bert_large(std::size_t vocab_size) {
  EncoderConfig config;
  config.layers = 24;
  config.hidden = 1024;
  config.heads = 16;
  config.ffn = 4096;
  config.vocab_size = vocab_size;
  config.max_positions = 512;
  return config;
}

void EncoderConfig::validate() const {
  if (layers == 0 || hidden == 0 || heads == 0 || ffn == 0 || vocab_size == 0 ||
      max_positions == 0) {
    throw ConfigError("encoder layers, hidden, heads, ffn, vocab_size and "
                      "max_positions must all be positive");
  }
  if (hidden % heads != 0) {
    throw ConfigError("hidden size " + std::to_string(hidden) +
                      " is not divisible by head count " + std::to_string(heads));
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw ConfigError("dropout must lie in [0, 1), got " + std::to_string(dropout));
  }
}

std::size_t EncoderConfig::parameter_count() const {
  const std::size_t h = hidden, f = ffn;
  const std::size_t embeddings = (vocab_size + 2 + max_positions) * h + 2 * h;
  const std::size_t attention = 3 * h * h + h * h + h;  // heads, W_O, b_O
  const std::size_t feed_forward = h * f + f + f * h + h;
  const std::size_t norms = 4 * h;
  return embeddings + layers * (attention + feed_forward + norms);
}

EncoderConfig EncoderConfig::from_checkpoint(const Checkpoint& checkpoint,
                                             double dropout) {
  EncoderConfig config;
  const Tensor& token = require(checkpoint, "embeddings.token");
  config.vocab_size = token.rows();
  config.hidden = token.cols();
  config.max_positions = require(checkpoint, "embeddings.position").rows();
  config.layers = 0;
  while (checkpoint.contains(layer_prefix(config.layers) + "attn.W_O")) ++config.layers;
  config.heads = 0;
  while (checkpoint.contains("layer.0.head." + std::to_string(config.heads) + ".W_Q")) {
    ++config.heads;
  }
  if (config.layers > 0) config.ffn = require(checkpoint, "layer.0.ffn.W_1").cols();
  config.dropout = dropout;
  config.validate();
  return config;
}

EncoderWeights EncoderWeights::initialize(const EncoderConfig& config, Rng& rng) {
  config.validate();
  const std::size_t h = config.hidden, dk = config.head_dim();
  EncoderWeights w;
  w.token_embedding = random_param(config.vocab_size, h, rng);
  w.segment_embedding = random_param(2, h, rng);
  w.position_embedding = random_param(config.max_positions, h, rng);
  w.embedding_ln_gain = ones_param(h);
  w.embedding_ln_bias = zeros_param(h);
  for (std::size_t l = 0; l < config.layers; ++l) {
    EncoderLayer layer;
    for (std::size_t a = 0; a < config.heads; ++a) {
      AttentionHead head;
      head.w_q = random_param(h, dk, rng);
      head.w_k = random_param(h, dk, rng);
      head.w_v = random_param(h, dk, rng);
      layer.heads.push_back(std::move(head));
    }
    layer.w_o = random_param(h, h, rng);
    layer.b_o = zeros_param(h);
    layer.ln1_gain = ones_param(h);
    layer.ln1_bias = zeros_param(h);
    layer.w_1 = random_param(h, config.ffn, rng);
    layer.b_1 = zeros_param(config.ffn);
    layer.w_2 = random_param(config.ffn, h, rng);
    layer.b_2 = zeros_param(h);
    layer.ln2_gain = ones_param(h);
    layer.ln2_bias = zeros_param(h);
    w.layers.push_back(std::move(layer));
  }
  return w;
}

EncoderWeights EncoderWeights::from_checkpoint(const Checkpoint& checkpoint) {
  const EncoderConfig config = EncoderConfig::from_checkpoint(checkpoint);
  Rng unused(0);
  EncoderWeights w = initialize(config, unused);
  restore(checkpoint, w.named_parameters());
  return w;
}

NamedParameters EncoderWeights::named_parameters() {
  NamedParameters out;
  for_each_parameter(*this, [&](const std::string& name, Parameter& p) {
    out.emplace_back(name, &p);
  });
  return out;
}

Checkpoint EncoderWeights::to_checkpoint() const {
  Checkpoint out;
  for_each_parameter(*this, [&](const std::string& name, const Parameter& p) {
    out.emplace(name, p.value);
  });
  return out;
}

std::size_t EncoderWeights::parameter_count() const {
  std::size_t total = 0;
  for_each_parameter(*this, [&](const std::string&, const Parameter& p) {
    total += p.value.size();
  });
  return total;
}

BoundEncoder bind_trainable(Graph& graph, EncoderWeights& w) {
  BoundEncoder b;
  b.token_embedding = graph.parameter(w.token_embedding);
  b.segment_embedding = graph.parameter(w.segment_embedding);
  b.position_embedding = graph.parameter(w.position_embedding);
  b.embedding_ln_gain = graph.parameter(w.embedding_ln_gain);
  b.embedding_ln_bias = graph.parameter(w.embedding_ln_bias);
  for (auto& layer : w.layers) {
    BoundLayer bl;
    for (auto& head : layer.heads) {
      bl.heads.push_back({graph.parameter(head.w_q), graph.parameter(head.w_k),
                          graph.parameter(head.w_v)});
    }
    bl.w_o = graph.parameter(layer.w_o);
    bl.b_o = graph.parameter(layer.b_o);
    bl.ln1_gain = graph.parameter(layer.ln1_gain);
    bl.ln1_bias = graph.parameter(layer.ln1_bias);
    bl.w_1 = graph.parameter(layer.w_1);
    bl.b_1 = graph.parameter(layer.b_1);
    bl.w_2 = graph.parameter(layer.w_2);
    bl.b_2 = graph.parameter(layer.b_2);
    bl.ln2_gain = graph.parameter(layer.ln2_gain);
    bl.ln2_bias = graph.parameter(layer.ln2_bias);
    b.layers.push_back(std::move(bl));
  }
  return b;
}

BoundHead bind_frozen(Graph& graph, const AttentionHead& head) {
  return {graph.constant(head.w_q.value), graph.constant(head.w_k.value),
          graph.constant(head.w_v.value)};
}

BoundLayer bind_frozen(Graph& graph, const EncoderLayer& layer) {
  BoundLayer bl;
  for (const auto& head : layer.heads) bl.heads.push_back(bind_frozen(graph, head));
  bl.w_o = graph.constant(layer.w_o.value);
  bl.b_o = graph.constant(layer.b_o.value);
  bl.ln1_gain = graph.constant(layer.ln1_gain.value);
  bl.ln1_bias = graph.constant(layer.ln1_bias.value);
  bl.w_1 = graph.constant(layer.w_1.value);
  bl.b_1 = graph.constant(layer.b_1.value);
  bl.w_2 = graph.constant(layer.w_2.value);
  bl.b_2 = graph.constant(layer.b_2.value);
  bl.ln2_gain = graph.constant(layer.ln2_gain.value);
  bl.ln2_bias = graph.constant(layer.ln2_bias.value);
  return bl;
}

BoundEncoder bind_frozen(Graph& graph, const EncoderWeights& w) {
  BoundEncoder b;
  b.token_embedding = graph.constant(w.token_embedding.value);
  b.segment_embedding = graph.constant(w.segment_embedding.value);
  b.position_embedding = graph.constant(w.position_embedding.value);
  b.embedding_ln_gain = graph.constant(w.embedding_ln_gain.value);
  b.embedding_ln_bias = graph.constant(w.embedding_ln_bias.value);
  for (const auto& layer : w.layers) b.layers.push_back(bind_frozen(graph, layer));
  return b;
}

Tensor mask_penalty(std::span<const int> attention_mask) {
  const std::size_t s = attention_mask.size();
  Tensor penalty({s, s});
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = 0; j < s; ++j)
      if (attention_mask[j] == 0) penalty.at(i, j) = kMaskPenalty;
  return penalty;
}

Var embed(Graph& graph, const BoundEncoder& enc, const TokenSequence& seq) {
  const std::size_t s = seq.size();
  const Tensor& table = graph.value(enc.token_embedding);
  const std::size_t max_positions = graph.value(enc.position_embedding).rows();
  if (s == 0) throw DataError("embed: empty sequence");
  if (s > max_positions) {
    throw DataError("sequence length " + std::to_string(s) + " exceeds max_positions " +
                    std::to_string(max_positions));
  }
  for (std::size_t t = 0; t < s; ++t) {
    const int id = seq.token_ids[t];
    if (id < 0 || static_cast<std::size_t>(id) >= table.rows()) {
      throw DataError("token id " + std::to_string(id) + " at position " + std::to_string(t) +
                      " outside vocabulary of size " + std::to_string(table.rows()));
    }
    if (seq.segment_ids[t] != 0 && seq.segment_ids[t] != 1) {
      throw DataError("segment id " + std::to_string(seq.segment_ids[t]) + " at position " +
                      std::to_string(t) + " is not 0 or 1");
    }
  }
  std::vector<int> positions(s);
  for (std::size_t t = 0; t < s; ++t) positions[t] = static_cast<int>(t);
  Var sum = add(gather_rows(enc.token_embedding, seq.token_ids),
                gather_rows(enc.segment_embedding, seq.segment_ids));
  sum = add(sum, gather_rows(enc.position_embedding, positions));
  return layer_norm(sum, enc.embedding_ln_gain, enc.embedding_ln_bias, kLayerNormEps);
}

Var attention_head(Var x, const BoundHead& head, const Tensor& penalty,
                   Tensor* weights_out) {
  Var q = matmul(x, head.w_q);
  Var k = matmul(x, head.w_k);
  Var v = matmul(x, head.w_v);
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(q.value().cols()));
  Var scores = add_constant(scale(matmul_nt(q, k), inv_sqrt_dk), penalty);
  Var weights = softmax_rows(scores);
  if (weights_out) *weights_out = weights.value();
  return matmul(weights, v);
}

Var multi_head_attention(Var x, const BoundLayer& layer, const Tensor& penalty) {
  std::vector<Var> outputs;
  outputs.reserve(layer.heads.size());
  for (const auto& head : layer.heads) outputs.push_back(attention_head(x, head, penalty));
  Var concat = outputs.size() == 1 ? outputs.front() : concat_cols(outputs);
  return add_row_bias(matmul(concat, layer.w_o), layer.b_o);
}

Var encoder_layer(Var x, const BoundLayer& layer, const Tensor& penalty,
                  const DropoutContext& dropout) {
  auto drop = [&](Var v) {
    return (dropout.rng && dropout.rate > 0.0) ? ansel::dropout(v, dropout.rate, *dropout.rng) : v;
  };
  Var attended = drop(multi_head_attention(x, layer, penalty));
  x = layer_norm(add(x, attended), layer.ln1_gain, layer.ln1_bias, kLayerNormEps);
  Var inner = gelu(add_row_bias(matmul(x, layer.w_1), layer.b_1));
  Var ff = drop(add_row_bias(matmul(inner, layer.w_2), layer.b_2));
  return layer_norm(add(x, ff), layer.ln2_gain, layer.ln2_bias, kLayerNormEps);
}

Var encode(Graph& graph, const BoundEncoder& enc, const EncoderConfig& config,
           const TokenSequence& seq, const DropoutContext& dropout) {
  if (enc.layers.size() != config.layers) {
    throw ConfigError("encode: weights hold " + std::to_string(enc.layers.size()) +
                      " layers, config expects " + std::to_string(config.layers));
  }
  seq.validate();
  Var x;
  try {
    x = embed(graph, enc, seq);
  } catch (const NumericError& e) {
    throw NumericError(std::string("embedding: ") + e.what());
  }
  const Tensor penalty = mask_penalty(seq.attention_mask);
  for (std::size_t l = 0; l < enc.layers.size(); ++l) {
    try {
      x = encoder_layer(x, enc.layers[l], penalty, dropout);
    } catch (const NumericError& e) {
      throw NumericError("encoder layer " + std::to_string(l) + ": " + e.what());
    }
  }
  return x;
}

Tensor embed(const TokenSequence& seq, const EncoderWeights& weights) {
  Graph graph;
  const BoundEncoder enc = bind_frozen(graph, weights);
  return embed(graph, enc, seq).value();
}

Tensor attention_head(const Tensor& x, const AttentionHead& head,
                      std::span<const int> attention_mask) {
  Graph graph;
  return attention_head(graph.constant(x), bind_frozen(graph, head),
                        mask_penalty(attention_mask))
      .value();
}

Tensor attention_weights(const Tensor& x, const AttentionHead& head,
                         std::span<const int> attention_mask) {
  Graph graph;
  Tensor weights;
  attention_head(graph.constant(x), bind_frozen(graph, head), mask_penalty(attention_mask),
                 &weights);
  return weights;
}

Tensor multi_head_attention(const Tensor& x, const EncoderLayer& layer,
                            std::span<const int> attention_mask) {
  Graph graph;
  return multi_head_attention(graph.constant(x), bind_frozen(graph, layer),
                              mask_penalty(attention_mask))
      .value();
}

EncodedSequence encode(const TokenSequence& seq, const EncoderWeights& weights,
                       const EncoderConfig& config, bool train_mode, Rng* rng) {
  if (train_mode && rng == nullptr && config.dropout > 0.0) {
    throw ConfigError("encode: train mode with dropout needs a random source");
  }
  Graph graph;
  const BoundEncoder enc = bind_frozen(graph, weights);
  const DropoutContext dropout{train_mode ? config.dropout : 0.0, train_mode ? rng : nullptr};
  EncodedSequence out;
  out.hidden_states = encode(graph, enc, config, seq, dropout).value();
  out.cls_vector = Tensor({out.hidden_states.cols()},
                          std::vector<double>(out.hidden_states.row(0).begin(),
                                              out.hidden_states.row(0).end()));
  return out;
}

}  // namespace ansel
