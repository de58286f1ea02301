// SPDX-License-Identifier: Apache-2.0
//
// Deterministic synthetic English-like text for smoke runs: Zipf-distributed
// pseudo-words built from syllables, grouped into sentences and paragraphs.

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "strnn/core_math.hpp"

namespace strnn {

inline std::string synthetic_text(std::size_t bytes, std::uint64_t seed = 1, std::size_t words = 400) {
  static const char* const onsets[] = {"b", "c", "d", "f", "g", "h", "l", "m", "n", "p",
                                       "r", "s", "t", "v", "w", "st", "th", "ch", "tr", "pl"};
  static const char* const vowels[] = {"a", "e", "i", "o", "u", "ea", "ou", "ai"};
  static const char* const codas[] = {"", "", "", "n", "r", "s", "t", "nd", "ng", "ck"};
  Rng rng(seed);
  std::vector<std::string> lexicon;
  for (std::size_t i = 0; i < words; ++i) {
    std::string w;
    const std::size_t syl = 1 + rng.below(3);
    for (std::size_t s = 0; s < syl; ++s) {
      w += onsets[rng.below(std::size(onsets))];
      w += vowels[rng.below(std::size(vowels))];
    }
    w += codas[rng.below(std::size(codas))];
    lexicon.push_back(std::move(w));
  }
  std::vector<double> cdf(words);
  double z = 0.0;
  for (std::size_t i = 0; i < words; ++i) cdf[i] = (z += 1.0 / static_cast<double>(i + 1));
  auto pick = [&]() -> const std::string& {
    const double u = rng.uniform() * z;
    const auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
    return lexicon[std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), words - 1)];
  };

  std::string out;
  out.reserve(bytes + 128);
  std::size_t in_paragraph = 0;
  while (out.size() < bytes) {
    const std::size_t len = 4 + rng.below(10);
    for (std::size_t i = 0; i < len; ++i) {
      std::string w = pick();
      if (i == 0) w[0] = static_cast<char>(w[0] - 'a' + 'A');
      out += w;
      if (i + 1 < len) out += (rng.below(8) == 0 ? ", " : " ");
    }
    out += (rng.below(6) == 0 ? "? " : ". ");
    if (++in_paragraph == 5 + rng.below(4)) {
      out.back() = '\n';
      in_paragraph = 0;
    }
  }
  out.resize(bytes);
  return out;
}

}  // namespace strnn
