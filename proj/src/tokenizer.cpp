#include "ctl/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

#include <json.hpp>

#include "ctl/error.hpp"

namespace ctl {

namespace {

const std::vector<std::string> kSpecialWords{"<pad>", "<bos>", "<eos>", "<unk>"};

}  // namespace

std::size_t TokenSequence::content_length() const {
  const auto it = std::find(ids.begin(), ids.end(), kPad);
  return static_cast<std::size_t>(it - ids.begin());
}

Vocab::Vocab() : id_to_word_(kSpecialWords) {
  for (std::size_t i = 0; i < id_to_word_.size(); ++i) word_to_id_[id_to_word_[i]] = static_cast<TokenId>(i);
}

Vocab Vocab::from_words(const std::vector<std::string>& words) {
  Vocab v;
  for (const auto& w : words) {
    if (w.empty() || v.word_to_id_.count(w)) throw ParameterError("vocabulary word '" + w + "' is empty or repeated");
    v.word_to_id_[w] = static_cast<TokenId>(v.id_to_word_.size());
    v.id_to_word_.push_back(w);
  }
  return v;
}

TokenId Vocab::id(std::string_view word) const {
  const auto it = word_to_id_.find(std::string(word));
  return it == word_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocab::word(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_word_.size()) {
    throw ParameterError("token id " + std::to_string(id) + " outside vocabulary of size " +
                         std::to_string(id_to_word_.size()));
  }
  return id_to_word_[static_cast<std::size_t>(id)];
}

bool Vocab::contains(std::string_view word) const { return word_to_id_.count(std::string(word)) > 0; }

std::vector<std::string> normalize_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

Vocab build_vocab(const std::vector<std::string>& corpus, std::size_t min_freq) {
  if (corpus.empty()) throw ParameterError("build_vocab: empty corpus");
  std::map<std::string, std::size_t> freq;
  for (const auto& line : corpus) {
    for (auto& w : normalize_words(line)) ++freq[w];
  }
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (const auto& [w, n] : freq) {
    if (n >= min_freq && std::find(kSpecialWords.begin(), kSpecialWords.end(), w) == kSpecialWords.end()) {
      kept.emplace_back(w, n);
    }
  }
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> words;
  words.reserve(kept.size());
  for (auto& [w, n] : kept) words.push_back(w);
  return Vocab::from_words(words);
}

TokenSequence encode(std::string_view text, const Vocab& vocab, std::size_t length) {
  if (length < 3) throw ParameterError("encode: sequence length must be >= 3");
  const auto words = normalize_words(text);
  TokenSequence seq;
  seq.ids.reserve(length);
  seq.ids.push_back(kBos);
  const std::size_t room = length - 2;
  for (std::size_t i = 0; i < words.size() && i < room; ++i) seq.ids.push_back(vocab.id(words[i]));
  seq.ids.push_back(kEos);
  seq.ids.resize(length, kPad);
  return seq;
}

std::vector<std::string> decode_words(const std::vector<TokenId>& ids, const Vocab& vocab) {
  std::vector<std::string> words;
  for (TokenId id : ids) {
    if (id == kEos) break;
    if (id >= 0 && static_cast<std::size_t>(id) < kNumSpecials) continue;
    words.push_back(vocab.word(id));
  }
  return words;
}

std::string decode(const std::vector<TokenId>& ids, const Vocab& vocab) { return join_words(decode_words(ids, vocab)); }

void validate_sequence(const TokenSequence& seq, std::size_t vocab_size) {
  if (seq.ids.empty() || seq.ids.front() != kBos) throw ParameterError("token sequence must start with BOS");
  bool seen_eos = false;
  bool seen_pad = false;
  for (std::size_t i = 0; i < seq.ids.size(); ++i) {
    const TokenId id = seq.ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
      throw ParameterError("token id " + std::to_string(id) + " at position " + std::to_string(i) +
                           " outside vocabulary");
    }
    if (seen_pad && id != kPad) throw ParameterError("PAD must only appear as a suffix");
    if (id == kPad) {
      if (!seen_eos) throw ParameterError("PAD before EOS");
      seen_pad = true;
    } else if (seen_eos) {
      throw ParameterError("content after EOS");
    }
    if (id == kEos) seen_eos = true;
  }
  if (!seen_eos) throw ParameterError("token sequence has no EOS");
}

void save_vocab(const Vocab& vocab, const std::filesystem::path& path) {
  nlohmann::json j;
  j["words"] = vocab.words();
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump() << "\n";
}

Vocab load_vocab(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string() + ": cannot open");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": byte " + std::to_string(e.byte) + ": " + e.what());
  }
  if (!j.contains("words") || !j["words"].is_array()) throw ParseError(path.string() + ": missing \"words\" array");
  auto words = j["words"].get<std::vector<std::string>>();
  if (words.size() < kNumSpecials || !std::equal(kSpecialWords.begin(), kSpecialWords.end(), words.begin())) {
    throw ParseError(path.string() + ": the first four words must be the special tokens");
  }
  return Vocab::from_words(std::vector<std::string>(words.begin() + kNumSpecials, words.end()));
}

}  // namespace ctl
