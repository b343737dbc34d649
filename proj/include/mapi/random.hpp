#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "mapi/matrix.hpp"

namespace mapi {

// Seeded RNG wrapper. All randomness in the project flows through one of
// these, seeded from a single user seed, so runs are reproducible.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(gen_);
  }

  double gaussian(double mean, double stddev) {
    return std::normal_distribution<double>(mean, stddev)(gen_);
  }

  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(gen_);
  }

  // Derive an independent stream (per fold, per module).
  Rng fork(std::uint64_t salt) {
    return Rng(gen_() ^ (0x9e3779b97f4a7c15ULL * (salt + 1)));
  }

  // Fisher-Yates; kept explicit so shuffles are stable across standard
  // library implementations.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  Matrix uniform_matrix(std::size_t r, std::size_t c, double lo, double hi) {
    Matrix m(r, c);
    for (double& x : m.data) x = uniform(lo, hi);
    return m;
  }

  Matrix gaussian_matrix(std::size_t r, std::size_t c, double mean,
                         double stddev) {
    Matrix m(r, c);
    for (double& x : m.data) x = gaussian(mean, stddev);
    return m;
  }

  // Glorot-uniform initialization for a fan_in x fan_out weight matrix.
  Matrix glorot(std::size_t fan_in, std::size_t fan_out) {
    double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    return uniform_matrix(fan_in, fan_out, -limit, limit);
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace mapi
