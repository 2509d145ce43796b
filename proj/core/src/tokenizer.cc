#include "ansel/tokenizer.h"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include "ansel/errors.h"

namespace ansel {
namespace {

constexpr std::string_view kContinuation = "##";
constexpr std::size_t kMaxWordBytes = 100;

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
         c == '\v';
}

bool is_punct(char c) {
  const auto u = static_cast<unsigned char>(c);
  return (u >= 33 && u <= 47) || (u >= 58 && u <= 64) || (u >= 91 && u <= 96) ||
         (u >= 123 && u <= 126);
}

bool is_boundary(std::string_view word, std::size_t pos) {
  return pos == 0 || pos >= word.size() ||
         (static_cast<unsigned char>(word[pos]) & 0xC0) != 0x80;
}

std::string piece_at(std::string_view word, std::size_t begin, std::size_t end) {
  std::string piece;
  if (begin > 0) piece = kContinuation;
  piece.append(word.substr(begin, end - begin));
  return piece;
}

// Longest-match segmentation. Returns the position of the first byte that
// no vocabulary piece covers (word.size() when fully covered).
template <typename Contains>
std::size_t segment(std::string_view word, const Contains& contains,
                    std::vector<std::string>* pieces) {
  std::size_t pos = 0;
  while (pos < word.size()) {
    std::size_t end = word.size();
    bool matched = false;
    for (; end > pos; --end) {
      if (!is_boundary(word, end)) continue;
      std::string piece = piece_at(word, pos, end);
      if (contains(piece)) {
        if (pieces) pieces->push_back(std::move(piece));
        matched = true;
        break;
      }
    }
    if (!matched) return pos;
    pos = end;
  }
  return pos;
}

}  // namespace

const std::vector<std::string>& Vocab::special_tokens() {
  static const std::vector<std::string> kSpecials = {"[PAD]", "[UNK]", "[CLS]",
                                                     "[SEP]", "[MASK]"};
  return kSpecials;
}

Vocab::Vocab(std::vector<std::string> tokens, CasingMode casing)
    : tokens_(std::move(tokens)), casing_(casing) {
  const auto& specials = special_tokens();
  if (tokens_.size() < specials.size() ||
      !std::equal(specials.begin(), specials.end(), tokens_.begin())) {
    throw DataError("vocabulary must begin with [PAD] [UNK] [CLS] [SEP] [MASK]");
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    const std::string& t = tokens_[i];
    if (t.empty()) throw DataError("empty vocabulary entry at id " + std::to_string(i));
    if (i >= specials.size() && casing_ == CasingMode::kUncased && to_lower(t) != t) {
      throw DataError("uncased vocabulary contains uppercase entry '" + t + "'");
    }
    if (!ids_.emplace(t, static_cast<int>(i)).second) {
      throw DataError("duplicate vocabulary entry '" + t + "'");
    }
  }
}

bool Vocab::contains(std::string_view token) const {
  return ids_.contains(std::string(token));
}

int Vocab::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw DataError("token id " + std::to_string(id) + " outside vocabulary of size " +
                    std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write vocabulary " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path, CasingMode casing) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open vocabulary " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return Vocab(std::move(tokens), casing);
}

std::vector<std::string> split_words(std::string_view text, CasingMode casing) {
  const std::string cased = apply_casing(text, casing);
  std::vector<std::string> words;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) words.push_back(std::move(current));
    current.clear();
  };
  for (char c : cased) {
    if (is_space(c)) {
      flush();
    } else if (is_punct(c)) {
      flush();
      words.emplace_back(1, c);
    } else {
      current.push_back(c);
    }
  }
  flush();
  return words;
}

Vocab build_vocab(std::span<const std::string> corpus, std::size_t target_size,
                  CasingMode casing) {
  if (target_size <= static_cast<std::size_t>(Vocab::kSpecialCount)) {
    throw ConfigError("vocabulary target size must exceed 5, got " +
                      std::to_string(target_size));
  }
  std::map<std::string, long long> counts;
  for (const auto& line : corpus) {
    for (auto& w : split_words(line, casing)) {
      if (w.size() <= kMaxWordBytes) counts[std::move(w)] += 1;
    }
  }
  if (counts.empty()) throw DataError("cannot build a vocabulary from an empty corpus");

  std::vector<std::string> words;
  std::vector<long long> freq;
  for (auto& [w, c] : counts) {
    words.push_back(w);
    freq.push_back(c);
  }

  std::vector<std::string> tokens = Vocab::special_tokens();
  std::set<std::string> pieces;
  auto contains = [&](const std::string& p) { return pieces.contains(p); };

  // Candidate scores, plus an ordered index for "highest score, then
  // lexicographically smallest".
  std::map<std::string, long long> score;
  std::set<std::pair<long long, std::string>> ranking;  // (-score, piece)
  std::vector<std::vector<std::pair<std::string, long long>>> contributions(words.size());

  auto adjust = [&](const std::string& piece, long long delta) {
    long long& s = score[piece];
    if (s != 0) ranking.erase({-s, piece});
    s += delta;
    if (s != 0) {
      ranking.insert({-s, piece});
    } else {
      score.erase(piece);
    }
  };
  auto refresh = [&](std::size_t i) {
    for (const auto& [piece, amount] : contributions[i]) adjust(piece, -amount);
    contributions[i].clear();
    const std::string& w = words[i];
    const std::size_t residual = segment(w, contains, nullptr);
    for (std::size_t end = residual + 1; end <= w.size(); ++end) {
      if (!is_boundary(w, end)) continue;
      const long long amount = freq[i] * static_cast<long long>(end - residual);
      std::string piece = piece_at(w, residual, end);
      adjust(piece, amount);
      contributions[i].emplace_back(std::move(piece), amount);
    }
  };

  for (std::size_t i = 0; i < words.size(); ++i) refresh(i);
  while (tokens.size() < target_size && !ranking.empty()) {
    const std::string best = ranking.begin()->second;
    tokens.push_back(best);
    pieces.insert(best);
    const std::string_view core = std::string_view(best).starts_with(kContinuation)
                                      ? std::string_view(best).substr(kContinuation.size())
                                      : std::string_view(best);
    // Only words containing the new piece can segment differently.
    for (std::size_t i = 0; i < words.size(); ++i) {
      if (words[i].find(core) != std::string::npos) refresh(i);
    }
  }
  return Vocab(std::move(tokens), casing);
}

std::vector<std::string> tokenize(std::string_view text, const Vocab& vocab) {
  std::vector<std::string> out;
  auto contains = [&](const std::string& p) { return vocab.contains(p); };
  for (const auto& word : split_words(text, vocab.casing())) {
    std::vector<std::string> pieces;
    if (word.size() <= kMaxWordBytes && segment(word, contains, &pieces) == word.size()) {
      for (auto& p : pieces) out.push_back(std::move(p));
    } else {
      out.push_back(Vocab::special_tokens()[Vocab::kUnk]);
    }
  }
  return out;
}

std::vector<int> tokenize_ids(std::string_view text, const Vocab& vocab) {
  std::vector<int> ids;
  for (const auto& t : tokenize(text, vocab)) ids.push_back(vocab.id(t));
  return ids;
}

std::string decode(std::span<const int> ids, const Vocab& vocab) {
  std::string out;
  for (int id : ids) {
    if (id == Vocab::kPad) continue;
    const std::string& t = vocab.token(id);
    if (!Vocab::is_special(id) && std::string_view(t).starts_with(kContinuation) && !out.empty()) {
      out.append(t, kContinuation.size());
    } else {
      if (!out.empty()) out.push_back(' ');
      out += t;
    }
  }
  return out;
}

std::size_t TokenSequence::real_length() const {
  return static_cast<std::size_t>(
      std::count(attention_mask.begin(), attention_mask.end(), 1));
}

void TokenSequence::validate() const {
  const std::size_t n = token_ids.size();
  if (segment_ids.size() != n || attention_mask.size() != n) {
    throw DataError("token sequence fields have unequal lengths");
  }
  if (n == 0 || token_ids[0] != Vocab::kCls) {
    throw DataError("token sequence must start with [CLS]");
  }
  const std::size_t real = real_length();
  for (std::size_t i = 0; i < n; ++i) {
    const int expect_mask = i < real ? 1 : 0;
    if (attention_mask[i] != expect_mask) {
      throw DataError("padding is not a contiguous suffix at position " + std::to_string(i));
    }
    if ((token_ids[i] == Vocab::kPad) != (i >= real)) {
      throw DataError("[PAD] token mismatch with attention mask at position " + std::to_string(i));
    }
  }
  std::vector<std::size_t> seps;
  for (std::size_t i = 0; i < real; ++i) {
    if (token_ids[i] == Vocab::kSep) seps.push_back(i);
  }
  if (seps.size() != 2 || seps[1] != real - 1 || seps[0] < 2 || seps[1] <= seps[0] + 1) {
    throw DataError("token sequence must hold exactly two non-empty [SEP]-terminated sentences");
  }
  for (std::size_t i = 0; i < n; ++i) {
    const int expect = (i <= seps[0] || i >= real) ? 0 : 1;
    if (segment_ids[i] != expect) {
      throw DataError("segment id mismatch at position " + std::to_string(i));
    }
  }
}

TokenSequence pack_pair(std::span<const int> question_ids,
                        std::span<const int> answer_ids, std::size_t max_len) {
  if (max_len < kMinSequenceLength) {
    throw ConfigError("max_len must be at least " + std::to_string(kMinSequenceLength) +
                      ", got " + std::to_string(max_len));
  }
  std::size_t m = question_ids.size();
  std::size_t n = answer_ids.size();
  if (m == 0 || n == 0) throw DataError("cannot encode a pair with an empty sentence");
  if (m + n + 3 > max_len) {
    const std::size_t budget = max_len - 3;
    std::size_t& longer = m > n ? m : n;
    const std::size_t shorter = m > n ? n : m;
    if (shorter >= budget) {
      throw DataError("pair unencodable at max_len " + std::to_string(max_len) +
                      ": truncation would empty the " +
                      std::string(m > n ? "question" : "answer"));
    }
    longer = budget - shorter;
  }
  TokenSequence seq;
  seq.token_ids.reserve(max_len);
  seq.token_ids.push_back(Vocab::kCls);
  seq.token_ids.insert(seq.token_ids.end(), question_ids.begin(),
                       question_ids.begin() + static_cast<std::ptrdiff_t>(m));
  seq.token_ids.push_back(Vocab::kSep);
  seq.token_ids.insert(seq.token_ids.end(), answer_ids.begin(),
                       answer_ids.begin() + static_cast<std::ptrdiff_t>(n));
  seq.token_ids.push_back(Vocab::kSep);
  const std::size_t real = seq.token_ids.size();
  seq.segment_ids.assign(max_len, 0);
  for (std::size_t i = m + 2; i < real; ++i) seq.segment_ids[i] = 1;
  seq.attention_mask.assign(max_len, 0);
  std::fill_n(seq.attention_mask.begin(), real, 1);
  seq.token_ids.resize(max_len, Vocab::kPad);
  return seq;
}

TokenSequence encode_pair(std::string_view question, std::string_view answer,
                          const Vocab& vocab, std::size_t max_len) {
  const auto q = tokenize_ids(question, vocab);
  const auto a = tokenize_ids(answer, vocab);
  return pack_pair(q, a, max_len);
}

TokenSequence trim_padding(const TokenSequence& seq) {
  const std::size_t real = seq.real_length();
  TokenSequence out;
  out.token_ids.assign(seq.token_ids.begin(), seq.token_ids.begin() + static_cast<std::ptrdiff_t>(real));
  out.segment_ids.assign(seq.segment_ids.begin(), seq.segment_ids.begin() + static_cast<std::ptrdiff_t>(real));
  out.attention_mask.assign(real, 1);
  return out;
}

}  // namespace ansel
