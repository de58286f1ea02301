// SPDX-License-Identifier: Apache-2.0
//
// Corpus handling: UTF-8 decoding, vocabularies, contiguous splits and
// truncated-BPTT batching.

#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace strnn {

enum class Level : std::uint8_t { character = 0, word = 1 };

inline std::string_view to_string(Level l) { return l == Level::character ? "char" : "word"; }

inline Level parse_level(std::string_view s) {
  if (s == "char") return Level::character;
  if (s == "word") return Level::word;
  throw std::invalid_argument("unknown level '" + std::string(s) + "' (expected char or word)");
}

class DataError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::string_view kUnk = "<unk>";

// ---------------------------------------------------------------------------
// UTF-8

/// Splits UTF-8 text into one string per Unicode scalar value.
inline std::vector<std::string> utf8_chars(std::string_view text) {
  std::vector<std::string> out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const auto b0 = static_cast<unsigned char>(text[i]);
    std::size_t len = 0;
    std::uint32_t cp = 0;
    if (b0 < 0x80) {
      len = 1;
      cp = b0;
    } else if ((b0 & 0xE0) == 0xC0) {
      len = 2;
      cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
      len = 3;
      cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
      len = 4;
      cp = b0 & 0x07;
    } else {
      throw DataError("invalid UTF-8 lead byte at offset " + std::to_string(i));
    }
    if (i + len > text.size()) throw DataError("truncated UTF-8 sequence at offset " + std::to_string(i));
    for (std::size_t k = 1; k < len; ++k) {
      const auto b = static_cast<unsigned char>(text[i + k]);
      if ((b & 0xC0) != 0x80) throw DataError("invalid UTF-8 continuation at offset " + std::to_string(i + k));
      cp = (cp << 6) | (b & 0x3F);
    }
    static constexpr std::uint32_t min_cp[] = {0, 0, 0x80, 0x800, 0x10000};
    if (cp < min_cp[len] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
      throw DataError("invalid UTF-8 code point at offset " + std::to_string(i));
    }
    out.emplace_back(text.substr(i, len));
    i += len;
  }
  return out;
}

inline std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  auto space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
  while (i < text.size()) {
    while (i < text.size() && space(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !space(text[j])) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::vector<std::string> tokenize(std::string_view text, Level level) {
  return level == Level::character ? utf8_chars(text) : split_words(text);
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// Vocabulary

class Vocab {
public:
  Vocab() = default;
  Vocab(Level level, std::vector<std::string> symbols) : level_(level), symbols_(std::move(symbols)) {
    for (std::size_t i = 0; i < symbols_.size(); ++i) {
      if (!index_.emplace(symbols_[i], static_cast<std::uint32_t>(i)).second) {
        throw DataError("duplicate vocabulary entry '" + symbols_[i] + "'");
      }
    }
  }

  Level level() const noexcept { return level_; }
  std::size_t size() const noexcept { return symbols_.size(); }
  const std::vector<std::string>& symbols() const noexcept { return symbols_; }
  const std::string& symbol(std::uint32_t id) const { return symbols_.at(id); }

  std::optional<std::uint32_t> find(std::string_view sym) const {
    auto it = index_.find(std::string(sym));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  std::optional<std::uint32_t> unk() const { return find(kUnk); }

  friend bool operator==(const Vocab& a, const Vocab& b) {
    return a.level_ == b.level_ && a.symbols_ == b.symbols_;
  }

private:
  Level level_ = Level::character;
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, std::uint32_t> index_;
};

/// Character level: distinct code points in order of first occurrence.
/// Word level: words by descending frequency, ties lexicographic, capped at
/// `max_words` entries including `<unk>`, which is always the last entry.
inline Vocab build_vocab(std::string_view text, Level level, std::optional<std::size_t> max_words = {}) {
  const auto toks = tokenize(text, level);
  if (toks.empty()) throw DataError("cannot build a vocabulary from empty text");
  if (level == Level::character) {
    std::vector<std::string> syms;
    std::unordered_map<std::string, bool> seen;
    for (const auto& t : toks)
      if (seen.emplace(t, true).second) syms.push_back(t);
    return Vocab(level, std::move(syms));
  }
  if (max_words && *max_words < 1) throw std::invalid_argument("build_vocab: word cap must be at least 1");
  std::map<std::string, std::size_t> counts;
  for (const auto& t : toks) ++counts[t];
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> syms;
  const std::size_t keep = max_words ? *max_words - 1 : ranked.size();
  for (const auto& [w, c] : ranked) {
    if (syms.size() >= keep) break;
    if (w != kUnk) syms.push_back(w);
  }
  syms.emplace_back(kUnk);
  return Vocab(level, std::move(syms));
}

/// Character level rejects unknown symbols; word level maps them to `<unk>`.
inline std::vector<std::uint32_t> encode(std::string_view text, const Vocab& vocab) {
  const auto toks = tokenize(text, vocab.level());
  std::vector<std::uint32_t> ids;
  ids.reserve(toks.size());
  std::vector<std::string> missing;
  const auto unk = vocab.unk();
  for (const auto& t : toks) {
    if (auto id = vocab.find(t)) {
      ids.push_back(*id);
    } else if (vocab.level() == Level::word && unk) {
      ids.push_back(*unk);
    } else if (std::find(missing.begin(), missing.end(), t) == missing.end()) {
      missing.push_back(t);
    }
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "'" : ", '") + m + "'";
    throw DataError("symbols not in the vocabulary: " + list);
  }
  return ids;
}

inline std::string decode(const std::vector<std::uint32_t>& ids, const Vocab& vocab) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (vocab.level() == Level::word && i > 0) out += ' ';
    out += vocab.symbol(ids[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splits

struct EncodedCorpus {
  Level level = Level::character;
  std::vector<std::uint32_t> train, valid, test;
  std::uint64_t digest = 0;  // FNV-1a of the source text(s)

  const std::vector<std::uint32_t>& split(std::string_view name) const {
    if (name == "train") return train;
    if (name == "valid") return valid;
    if (name == "test") return test;
    throw std::invalid_argument("unknown split '" + std::string(name) + "' (expected train, valid or test)");
  }
};

/// Contiguous prefix split: floor(0.8 N) / floor(0.1 N) / remainder.
inline EncodedCorpus encode_and_split(std::string_view text, const Vocab& vocab) {
  EncodedCorpus c;
  c.level = vocab.level();
  c.digest = fnv1a(text);
  auto ids = encode(text, vocab);
  const std::size_t n = ids.size();
  const std::size_t n_train = n * 8 / 10;
  const std::size_t n_valid = n / 10;
  c.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  c.valid.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train),
                 ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid));
  c.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid), ids.end());
  return c;
}

/// Three pre-split texts; no ratio splitting.
inline EncodedCorpus encode_presplit(std::string_view train, std::string_view valid, std::string_view test,
                                     const Vocab& vocab) {
  EncodedCorpus c;
  c.level = vocab.level();
  c.digest = fnv1a(test, fnv1a(valid, fnv1a(train)));
  c.train = encode(train, vocab);
  c.valid = encode(valid, vocab);
  c.test = encode(test, vocab);
  return c;
}

// ---------------------------------------------------------------------------
// Batching

/// `batch` contiguous streams of length N / batch; window k of stream b
/// covers tokens [k * seq_len, (k + 1) * seq_len] of that stream, inputs
/// first and targets shifted by one. The trailing partial window is dropped.
class BatchWindows {
public:
  BatchWindows(const std::vector<std::uint32_t>& tokens, std::size_t seq_len, std::size_t batch)
      : seq_len_(seq_len), batch_(batch) {
    if (seq_len == 0 || batch == 0) throw std::invalid_argument("batching: seq_len and batch must be positive");
    if (tokens.size() < batch * (seq_len + 1)) {
      throw DataError("split has " + std::to_string(tokens.size()) + " tokens, fewer than batch x (seq_len + 1) = " +
                      std::to_string(batch * (seq_len + 1)));
    }
    const std::size_t len = tokens.size() / batch;
    for (std::size_t b = 0; b < batch; ++b) {
      streams_.emplace_back(tokens.begin() + static_cast<std::ptrdiff_t>(b * len),
                            tokens.begin() + static_cast<std::ptrdiff_t>((b + 1) * len));
    }
    count_ = (len - 1) / seq_len;
  }

  std::size_t size() const noexcept { return count_; }
  std::size_t batch() const noexcept { return batch_; }
  std::size_t seq_len() const noexcept { return seq_len_; }
  const std::vector<std::vector<std::uint32_t>>& streams() const noexcept { return streams_; }

  struct Window {
    std::vector<std::vector<std::uint32_t>> inputs;   // [batch][seq_len]
    std::vector<std::vector<std::uint32_t>> targets;  // [batch][seq_len]
  };

  Window window(std::size_t k) const {
    if (k >= count_) throw std::out_of_range("batching: window index out of range");
    Window w;
    for (const auto& s : streams_) {
      const auto first = s.begin() + static_cast<std::ptrdiff_t>(k * seq_len_);
      w.inputs.emplace_back(first, first + static_cast<std::ptrdiff_t>(seq_len_));
      w.targets.emplace_back(first + 1, first + 1 + static_cast<std::ptrdiff_t>(seq_len_));
    }
    return w;
  }

private:
  std::size_t seq_len_;
  std::size_t batch_;
  std::vector<std::vector<std::uint32_t>> streams_;
  std::size_t count_ = 0;
};

}  // namespace strnn
