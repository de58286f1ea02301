// SPDX-License-Identifier: Apache-2.0
//
// Writes a synthetic pseudo-English corpus to stdout.
//
//   strnn_make_corpus [BYTES] [SEED]

#include <iostream>
#include <string>

#include "strnn/synthetic.hpp"

int main(int argc, char** argv) {
  try {
    const std::size_t bytes = argc > 1 ? std::stoul(argv[1]) : 200000;
    const std::uint64_t seed = argc > 2 ? std::stoull(argv[2]) : 1;
    std::cout << strnn::synthetic_text(bytes, seed);
  } catch (const std::exception& e) {
    std::cerr << "usage: strnn_make_corpus [BYTES] [SEED]\n" << e.what() << '\n';
    return 1;
  }
}
