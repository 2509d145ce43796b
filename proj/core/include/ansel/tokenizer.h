#ifndef ANSEL_TOKENIZER_H_
#define ANSEL_TOKENIZER_H_

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ansel/text.h"

namespace ansel {

// Subword vocabulary. Ids are dense; the first five are the special tokens
// in the fixed order below. Continuation pieces carry a "##" prefix.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr int kMask = 4;
  static constexpr int kSpecialCount = 5;
  static const std::vector<std::string>& special_tokens();

  // `tokens` must start with the five specials; duplicates are rejected, and
  // in uncased mode so is any entry containing an uppercase letter.
  Vocab(std::vector<std::string> tokens, CasingMode casing);

  std::size_t size() const { return tokens_.size(); }
  CasingMode casing() const { return casing_; }
  bool contains(std::string_view token) const;
  // Id of `token`, or kUnk when absent.
  int id(std::string_view token) const;
  const std::string& token(int id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  static bool is_special(int id) { return id >= 0 && id < kSpecialCount; }

  // One token per line, line number = id.
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path, CasingMode casing);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
  CasingMode casing_;
};

// Whitespace split, then every ASCII punctuation character becomes its own
// word. Applies lowercasing first in uncased mode.
std::vector<std::string> split_words(std::string_view text, CasingMode casing);

// Greedy frequency-driven subword vocabulary. Each round segments every
// corpus word with the current vocabulary (longest match from the left) and
// adds the prefix of an unsegmented remainder that covers the most corpus
// characters (frequency x length; ties by lexicographic order). Stops when
// every word is covered or `target_size` entries exist.
Vocab build_vocab(std::span<const std::string> corpus, std::size_t target_size,
                  CasingMode casing);

// Word-piece tokens. Each word is matched by greedy longest prefix; a word
// with any unmatchable remainder becomes a single [UNK].
std::vector<std::string> tokenize(std::string_view text, const Vocab& vocab);
std::vector<int> tokenize_ids(std::string_view text, const Vocab& vocab);

// Joins pieces back into words ("##" pieces glue onto the previous piece).
std::string decode(std::span<const int> ids, const Vocab& vocab);

// Packed [CLS] question [SEP] answer [SEP] [PAD]... input.
struct TokenSequence {
  std::vector<int> token_ids;
  std::vector<int> segment_ids;
  std::vector<int> attention_mask;

  std::size_t size() const { return token_ids.size(); }
  // Number of non-padding positions.
  std::size_t real_length() const;
  // Throws DataError when any layout invariant is broken.
  void validate() const;

  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

inline constexpr std::size_t kMinSequenceLength = 8;
inline constexpr std::size_t kDefaultMaxLength = 128;

// Packs two token-id lists. When m + n + 3 exceeds max_len, the longer list
// (the answer on ties) loses tokens from its end until the pair fits; if it
// would become empty the pair is unencodable and DataError is thrown.
TokenSequence pack_pair(std::span<const int> question_ids,
                        std::span<const int> answer_ids, std::size_t max_len);
TokenSequence encode_pair(std::string_view question, std::string_view answer,
                          const Vocab& vocab,
                          std::size_t max_len = kDefaultMaxLength);

// Drops the padding suffix. Encoder outputs on the remaining positions are
// unchanged because padding is masked out of attention.
TokenSequence trim_padding(const TokenSequence& seq);

}  // namespace ansel

#endif  // ANSEL_TOKENIZER_H_
