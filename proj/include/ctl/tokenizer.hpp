#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ctl {

using TokenId = std::int32_t;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr std::size_t kNumSpecials = 4;

// Fixed-length id sequence: BOS first, EOS before padding, PAD only as suffix.
struct TokenSequence {
  std::vector<TokenId> ids;

  std::size_t size() const { return ids.size(); }
  // Number of ids before the first PAD.
  std::size_t content_length() const;
  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

class Vocab {
 public:
  Vocab();  // specials only

  // Ids >= kNumSpecials in the given order.
  static Vocab from_words(const std::vector<std::string>& words);

  std::size_t size() const { return id_to_word_.size(); }
  TokenId id(std::string_view word) const;  // kUnk when absent
  const std::string& word(TokenId id) const;
  bool contains(std::string_view word) const;
  const std::vector<std::string>& words() const { return id_to_word_; }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.id_to_word_ == b.id_to_word_; }

 private:
  std::vector<std::string> id_to_word_;
  std::unordered_map<std::string, TokenId> word_to_id_;
};

// Lowercase, split on anything that is not an ASCII letter or digit.
std::vector<std::string> normalize_words(std::string_view text);
std::string join_words(const std::vector<std::string>& words);

// Words with frequency >= min_freq, ordered by (frequency desc, word asc).
Vocab build_vocab(const std::vector<std::string>& corpus, std::size_t min_freq = 1);

// BOS + words + EOS truncated (keeping EOS) then padded to exactly `length`.
TokenSequence encode(std::string_view text, const Vocab& vocab, std::size_t length);
// Words up to the first EOS with all special ids removed.
std::string decode(const std::vector<TokenId>& ids, const Vocab& vocab);
std::vector<std::string> decode_words(const std::vector<TokenId>& ids, const Vocab& vocab);

// Throws ParameterError when a sequence breaks the BOS/EOS/PAD layout or uses
// ids outside the vocabulary.
void validate_sequence(const TokenSequence& seq, std::size_t vocab_size);

void save_vocab(const Vocab& vocab, const std::filesystem::path& path);
Vocab load_vocab(const std::filesystem::path& path);

}  // namespace ctl
