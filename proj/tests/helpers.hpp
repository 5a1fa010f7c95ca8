#pragma once

#include <cstdint>
#include <vector>

#include "selfbc/numerics.hpp"
#include "selfbc/rng.hpp"

namespace selfbc::testing {

inline MlpParams random_mlp(std::vector<int> sizes, std::uint64_t seed, OutputActivation act = OutputActivation::kIdentity,
                            bool layer_norm = false) {
  MlpParams p = make_mlp(std::move(sizes), act, 1.0, layer_norm);
  Rng rng(seed);
  init_uniform_fan_in(p, rng);
  // Move LN affine terms off their trivial init so their gradients are exercised.
  for (auto& g : p.ln_gains) {
    for (auto& x : g) x = rng.uniform(0.5, 1.5);
  }
  for (auto& b : p.ln_biases) {
    for (auto& x : b) x = rng.uniform(-0.2, 0.2);
  }
  return p;
}

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.uniform(lo, hi);
  }
  return m;
}

}  // namespace selfbc::testing
