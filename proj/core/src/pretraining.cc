#include "ansel/pretraining.h"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "ansel/errors.h"
#include "ansel/optimizer.h"
#include "ansel/rng.h"

namespace ansel {
namespace {

Tensor random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t({rows, cols});
  for (auto& v : t.data()) v = rng.truncated_normal(kInitStddev);
  return t;
}

const Tensor& require(const Checkpoint& checkpoint, const std::string& name) {
  auto it = checkpoint.find(name);
  if (it == checkpoint.end()) throw DataError("checkpoint lacks " + name);
  return it->second;
}

}  // namespace

PretrainHeads PretrainHeads::initialize(const EncoderConfig& config, Rng& rng) {
  PretrainHeads heads;
  heads.mlm_w = Parameter(random_matrix(config.hidden, config.vocab_size, rng));
  heads.mlm_bias = Parameter(Tensor::zeros({config.vocab_size}));
  heads.nsp_w = Parameter(random_matrix(2, config.hidden, rng));
  heads.nsp_bias = Parameter(Tensor::zeros({2}));
  return heads;
}

NamedParameters PretrainHeads::named_parameters() {
  return {{"mlm.W", &mlm_w}, {"mlm.bias", &mlm_bias}, {"nsp.W", &nsp_w}, {"nsp.bias", &nsp_bias}};
}

Checkpoint PretrainHeads::to_checkpoint() const {
  return {{"mlm.W", mlm_w.value},
          {"mlm.bias", mlm_bias.value},
          {"nsp.W", nsp_w.value},
          {"nsp.bias", nsp_bias.value}};
}

PretrainHeads PretrainHeads::from_checkpoint(const Checkpoint& checkpoint) {
  PretrainHeads heads;
  heads.mlm_w = Parameter(require(checkpoint, "mlm.W"));
  heads.mlm_bias = Parameter(require(checkpoint, "mlm.bias"));
  heads.nsp_w = Parameter(require(checkpoint, "nsp.W"));
  heads.nsp_bias = Parameter(require(checkpoint, "nsp.bias"));
  return heads;
}

MaskedBatch mask_tokens(const TokenSequence& seq, double rate, std::uint64_t seed,
                        const MaskingOptions& options) {
  if (!(rate > 0.0 && rate <= 1.0)) {
    throw ConfigError("mask rate must lie in (0, 1], got " + std::to_string(rate));
  }
  std::vector<std::size_t> maskable;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (seq.attention_mask[i] == 1 && !Vocab::is_special(seq.token_ids[i])) maskable.push_back(i);
  }
  if (maskable.empty()) throw DataError("sequence has no maskable tokens");
  const auto wanted = static_cast<std::size_t>(
      std::max<long>(1, std::lround(rate * static_cast<double>(maskable.size()))));
  Rng rng(seed);
  std::vector<std::size_t> chosen;
  for (auto k : rng.sample_without_replacement(maskable.size(), wanted)) {
    chosen.push_back(maskable[k]);
  }
  std::sort(chosen.begin(), chosen.end());

  MaskedBatch out;
  out.input = seq;
  for (auto pos : chosen) {
    out.mlm_targets.push_back({pos, seq.token_ids[pos]});
    int replacement = Vocab::kMask;
    if (options.mixed_replacement) {
      if (options.vocab_size <= static_cast<std::size_t>(Vocab::kSpecialCount)) {
        throw ConfigError("mixed replacement needs the vocabulary size");
      }
      const double u = rng.uniform();
      if (u >= 0.9) {
        replacement = seq.token_ids[pos];
      } else if (u >= 0.8) {
        replacement = Vocab::kSpecialCount +
                      static_cast<int>(rng.below(options.vocab_size - Vocab::kSpecialCount));
      }
    }
    out.input.token_ids[pos] = replacement;
  }
  return out;
}

NspSampler::NspSampler(const std::vector<Document>& corpus) {
  for (const auto& doc : corpus) {
    for (std::size_t i = 0; i < doc.size(); ++i) {
      if (i + 1 < doc.size()) anchors_.push_back(sentences_.size());
      sentences_.push_back(&doc[i]);
    }
  }
  if (sentences_.size() < 3) {
    throw DataError("next-sentence pairs need at least 3 sentences, corpus has " +
                    std::to_string(sentences_.size()));
  }
  if (anchors_.empty()) throw DataError("no document has two consecutive sentences");
}

NspPair NspSampler::draw(Rng& rng) const {
  const std::size_t a = anchors_[rng.below(anchors_.size())];
  NspPair pair;
  pair.first = *sentences_[a];
  if (rng.bernoulli(0.5)) {
    pair.second = *sentences_[a + 1];
    pair.label = 1;
  } else {
    std::size_t pick = rng.below(sentences_.size() - 2);
    if (pick >= a) pick += 2;
    pair.second = *sentences_[pick];
    pair.label = 0;
  }
  return pair;
}

std::vector<NspPair> build_nsp_pairs(const std::vector<Document>& corpus, std::size_t count,
                                     std::uint64_t seed) {
  const NspSampler sampler(corpus);
  Rng rng(seed);
  std::vector<NspPair> pairs;
  pairs.reserve(count);
  for (std::size_t p = 0; p < count; ++p) pairs.push_back(sampler.draw(rng));
  return pairs;
}

std::vector<MaskedBatch> make_pretraining_examples(const std::vector<Document>& corpus,
                                                   const Vocab& vocab, std::size_t count,
                                                   const PretrainConfig& config,
                                                   std::uint64_t seed) {
  const NspSampler sampler(corpus);
  Rng rng(seed);
  MaskingOptions options{config.mixed_replacement, vocab.size()};
  std::vector<MaskedBatch> out;
  std::size_t attempts = 0;
  while (out.size() < count) {
    if (++attempts > 100 * (count + 1)) {
      throw DataError("corpus yields no pairs that fit max_len " + std::to_string(config.max_len));
    }
    const NspPair pair = sampler.draw(rng);
    const std::uint64_t mask_seed = rng.fork();
    TokenSequence seq;
    try {
      seq = trim_padding(encode_pair(pair.first, pair.second, vocab, config.max_len));
    } catch (const DataError&) {
      continue;
    }
    MaskedBatch masked;
    try {
      masked = mask_tokens(seq, config.mask_rate, mask_seed, options);
    } catch (const DataError&) {
      continue;  // nothing maskable
    }
    masked.nsp_label = pair.label;
    out.push_back(std::move(masked));
  }
  return out;
}

BoundPretrainHeads bind_trainable(Graph& graph, PretrainHeads& heads) {
  return {graph.parameter(heads.mlm_w), graph.parameter(heads.mlm_bias),
          graph.parameter(heads.nsp_w), graph.parameter(heads.nsp_bias)};
}

BoundPretrainHeads bind_frozen(Graph& graph, const PretrainHeads& heads) {
  return {graph.constant(heads.mlm_w.value), graph.constant(heads.mlm_bias.value),
          graph.constant(heads.nsp_w.value), graph.constant(heads.nsp_bias.value)};
}

PretrainLoss pretraining_loss(Graph& graph, const BoundEncoder& encoder,
                              const BoundPretrainHeads& heads, const EncoderConfig& config,
                              std::span<const MaskedBatch> batch, const DropoutContext& dropout) {
  if (batch.empty()) throw DataError("empty pretraining batch");
  std::vector<Var> mlm_rows, cls_rows;
  std::vector<int> mlm_labels, nsp_labels;
  static constexpr int kFirstRow[] = {0};
  for (const auto& example : batch) {
    Var hidden = encode(graph, encoder, config, example.input, dropout);
    std::vector<int> positions;
    for (const auto& t : example.mlm_targets) {
      positions.push_back(static_cast<int>(t.position));
      mlm_labels.push_back(t.original_id);
    }
    mlm_rows.push_back(gather_rows(hidden, positions));
    cls_rows.push_back(gather_rows(hidden, kFirstRow));
    nsp_labels.push_back(example.nsp_label);
  }
  Var masked_hidden = concat_rows(mlm_rows);
  Var mlm_probs = softmax_rows(add_row_bias(matmul(masked_hidden, heads.mlm_w), heads.mlm_bias));
  Var cls = concat_rows(cls_rows);
  Var nsp_probs = softmax_rows(add_row_bias(matmul_nt(cls, heads.nsp_w), heads.nsp_bias));
  PretrainLoss loss;
  loss.mlm = cross_entropy(mlm_probs, mlm_labels);
  loss.nsp = cross_entropy(nsp_probs, nsp_labels);
  Var total = add(loss.mlm.var, loss.nsp.var);
  loss.total = LossValue{total, total.value()[0], batch.size()};
  return loss;
}

PretrainLoss evaluate_pretraining_loss(const EncoderWeights& weights, const PretrainHeads& heads,
                                       const EncoderConfig& config,
                                       std::span<const MaskedBatch> batch) {
  Graph graph;
  const BoundEncoder enc = bind_frozen(graph, weights);
  const BoundPretrainHeads h = bind_frozen(graph, heads);
  return pretraining_loss(graph, enc, h, config, batch, DropoutContext{});
}

Checkpoint PretrainResult::to_checkpoint() const {
  Checkpoint out = encoder.to_checkpoint();
  for (auto& [name, value] : heads.to_checkpoint()) out.emplace(name, value);
  return out;
}

PretrainResult pretrain(const std::vector<Document>& corpus, const Vocab& vocab,
                        const EncoderConfig& encoder_config, EncoderWeights weights,
                        PretrainHeads heads, const PretrainConfig& config) {
  encoder_config.validate();
  if (vocab.size() > encoder_config.vocab_size) {
    throw ConfigError("vocabulary has " + std::to_string(vocab.size()) +
                      " entries but the encoder embeds only " +
                      std::to_string(encoder_config.vocab_size));
  }
  if (config.batch_size == 0) throw ConfigError("pretraining batch size must be positive");
  AdamConfig adam;
  adam.learning_rate = config.learning_rate;
  adam.validate();

  PretrainResult result{std::move(weights), std::move(heads), {}};
  NamedParameters params = result.encoder.named_parameters();
  for (auto& entry : result.heads.named_parameters()) params.push_back(entry);
  for (auto& [name, p] : params) p->reset_optimizer_state();

  Rng rng(config.seed);
  for (std::size_t step = 0; step < config.steps; ++step) {
    const auto batch =
        make_pretraining_examples(corpus, vocab, config.batch_size, config, rng.fork());
    Rng dropout_rng(rng.fork());
    try {
      Graph graph;
      const BoundEncoder enc = bind_trainable(graph, result.encoder);
      const BoundPretrainHeads h = bind_trainable(graph, result.heads);
      const PretrainLoss loss = pretraining_loss(graph, enc, h, encoder_config, batch,
                                                 DropoutContext{encoder_config.dropout, &dropout_rng});
      backward(loss.total);
      adam_step(params, adam);
      result.log.push_back({step, loss.mlm.scalar, loss.nsp.scalar});
    } catch (const NumericError& e) {
      throw NumericError("pretraining diverged at step " + std::to_string(step) + ": " + e.what());
    }
  }
  return result;
}

std::string format_loss_log(std::span<const PretrainStepLog> log) {
  std::string out;
  char buf[96];
  for (const auto& entry : log) {
    std::snprintf(buf, sizeof(buf), "%zu\t%.17g\t%.17g\n", entry.step, entry.mlm_loss,
                  entry.nsp_loss);
    out += buf;
  }
  return out;
}

void write_loss_log(std::span<const PretrainStepLog> log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write loss log " + path.string());
  out << format_loss_log(log);
}

}  // namespace ansel
