#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

#include "ilora/matrix.hpp"

namespace ilora {

using Rng = std::mt19937_64;

/// Generator seeded from several integers at once (e.g. seed, client, round),
/// so independent streams never share state.
inline Rng make_rng(std::initializer_list<std::uint64_t> parts) {
  // seed_seq keeps 32 bits per entry, so feed both halves
  std::vector<std::uint32_t> words;
  words.reserve(2 * parts.size());
  for (std::uint64_t p : parts) {
    words.push_back(static_cast<std::uint32_t>(p));
    words.push_back(static_cast<std::uint32_t>(p >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

inline Matrix gaussian_matrix(std::size_t rows, std::size_t cols, Rng& rng, double stddev = 1.0) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (double& x : m.data()) x = dist(rng);
  return m;
}

}  // namespace ilora
