#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "prefixlab/linalg.hpp"

namespace prefixlab {

/// Seeded generator; every stochastic routine in the library takes one so runs
/// are reproducible from a single integer seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  /// Uniform integer in [lo, hi].
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
  std::uint64_t next() { return engine_(); }

  Matrix normal_matrix(std::size_t rows, std::size_t cols, double stddev = 1.0) {
    Matrix m(rows, cols);
    for (double& v : m.data()) v = normal(0.0, stddev);
    return m;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    // Fisher-Yates with our own draws so the permutation does not depend on
    // the standard library's shuffle implementation.
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(engine_() % i);
      std::swap(v[i - 1], v[j]);
    }
  }

  /// `k` distinct indices from [0, n), in increasing order.
  std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    shuffle(idx);
    idx.resize(std::min(k, n));
    std::sort(idx.begin(), idx.end());
    return idx;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

/// Random subspace of dimension k in R^d (Gaussian spanning set).
inline Subspace random_subspace(Rng& rng, std::size_t d, std::size_t k) {
  return Subspace(d, rng.normal_matrix(d, k));
}

/// Random subspace of dimension k inside `host`.
inline Subspace random_subspace_within(Rng& rng, const Subspace& host, std::size_t k) {
  if (k > host.dim()) throw ShapeError("random_subspace_within: k exceeds host dim");
  return Subspace(host.ambient_dim(), matmul(host.basis(), rng.normal_matrix(host.dim(), k)));
}

}  // namespace prefixlab
