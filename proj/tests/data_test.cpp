// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "strnn/data.hpp"

namespace strnn {
namespace {

TEST(Vocab, CharFirstOccurrence) {
  const auto v = build_vocab("aba", Level::character);
  ASSERT_EQ(v.size(), 2u);
  EXPECT_EQ(v.symbol(0), "a");
  EXPECT_EQ(v.symbol(1), "b");
  EXPECT_EQ(encode("abba", v), (std::vector<std::uint32_t>{0, 1, 1, 0}));
}

TEST(Vocab, WordIncludesUnk) {
  const auto v = build_vocab("a b a", Level::word);
  ASSERT_EQ(v.size(), 3u);
  EXPECT_EQ(v.symbol(0), "a");
  EXPECT_EQ(v.symbol(1), "b");
  EXPECT_EQ(v.symbol(2), "<unk>");
  EXPECT_EQ(encode("a c b", v), (std::vector<std::uint32_t>{0, 2, 1}));
}

TEST(Vocab, WordCapKeepsMostFrequent) {
  const auto v = build_vocab("c c c b b a d", Level::word, 3);
  ASSERT_EQ(v.size(), 3u);
  EXPECT_EQ(v.symbol(0), "c");
  EXPECT_EQ(v.symbol(1), "b");
  EXPECT_EQ(v.symbol(2), "<unk>");
}

TEST(Vocab, WordTiesAreLexicographic) {
  const auto v = build_vocab("z y x", Level::word);
  EXPECT_EQ(v.symbols(), (std::vector<std::string>{"x", "y", "z", "<unk>"}));
}

TEST(Vocab, MultibyteCharacters) {
  const auto v = build_vocab("h\xC3\xA9h", Level::character);
  ASSERT_EQ(v.size(), 2u);
  EXPECT_EQ(v.symbol(1), "\xC3\xA9");
  EXPECT_THROW(utf8_chars("\xC3"), DataError);
  EXPECT_THROW(utf8_chars("\xC0\x80"), DataError);
}

TEST(Vocab, UnknownCharacterIsAnError) {
  const auto v = build_vocab("ab", Level::character);
  try {
    encode("abq", v);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("'q'"), std::string::npos);
  }
}

TEST(Vocab, RoundTrip) {
  const std::string text = "the quick brown fox";
  const auto cv = build_vocab(text, Level::character);
  EXPECT_EQ(decode(encode(text, cv), cv), text);
  const auto wv = build_vocab(text, Level::word);
  EXPECT_EQ(decode(encode(text, wv), wv), text);
}

TEST(Split, TenTokens) {
  const auto v = build_vocab("abcdefghij", Level::character);
  const auto c = encode_and_split("abcdefghij", v);
  EXPECT_EQ(c.train.size(), 8u);
  EXPECT_EQ(c.valid.size(), 1u);
  EXPECT_EQ(c.test.size(), 1u);
  EXPECT_EQ(c.valid[0], 8u);
  EXPECT_EQ(c.test[0], 9u);
}

TEST(Split, ThousandTokens) {
  const std::string text(1000, 'x');
  const auto c = encode_and_split(text, build_vocab(text, Level::character));
  EXPECT_EQ(c.train.size(), 800u);
  EXPECT_EQ(c.valid.size(), 100u);
  EXPECT_EQ(c.test.size(), 100u);
  EXPECT_EQ(c.digest, fnv1a(text));
}

TEST(Split, Presplit) {
  const auto v = build_vocab("abc", Level::character);
  const auto c = encode_presplit("aab", "c", "ba", v);
  EXPECT_EQ(c.train.size(), 3u);
  EXPECT_EQ(c.valid, (std::vector<std::uint32_t>{2}));
  EXPECT_EQ(c.test, (std::vector<std::uint32_t>{1, 0}));
  EXPECT_EQ(&c.split("test"), &c.test);
  EXPECT_THROW(c.split("dev"), std::invalid_argument);
}

TEST(Fnv, KnownValues) {
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
}

TEST(Batching, SingleStream) {
  std::vector<std::uint32_t> toks(10);
  for (std::uint32_t i = 0; i < 10; ++i) toks[i] = i;
  BatchWindows w(toks, 3, 1);
  ASSERT_EQ(w.size(), 3u);
  const auto last = w.window(2);
  EXPECT_EQ(last.inputs[0], (std::vector<std::uint32_t>{6, 7, 8}));
  EXPECT_EQ(last.targets[0], (std::vector<std::uint32_t>{7, 8, 9}));
  EXPECT_THROW(w.window(3), std::out_of_range);
}

TEST(Batching, StreamsAreDisjointAndContiguous) {
  std::vector<std::uint32_t> toks(20);
  for (std::uint32_t i = 0; i < 20; ++i) toks[i] = i;
  BatchWindows w(toks, 4, 2);
  ASSERT_EQ(w.size(), 2u);
  const auto first = w.window(0);
  EXPECT_EQ(first.inputs[0], (std::vector<std::uint32_t>{0, 1, 2, 3}));
  EXPECT_EQ(first.inputs[1], (std::vector<std::uint32_t>{10, 11, 12, 13}));
  const auto second = w.window(1);
  EXPECT_EQ(second.inputs[0].front(), first.targets[0].back());
}

TEST(Batching, TooShort) {
  std::vector<std::uint32_t> toks(7);
  EXPECT_THROW(BatchWindows(toks, 3, 2), DataError);
  EXPECT_THROW(BatchWindows(toks, 0, 1), std::invalid_argument);
}

}  // namespace
}  // namespace strnn
