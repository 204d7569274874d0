// Portable sampling on top of std::mt19937_64. Standard-library
// distributions are implementation-defined, so every transform used for
// simulation lives here to keep outputs bit-identical across toolchains.
#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "ratingfilter/model.hpp"

namespace ratingfilter {

// Mixes a base seed with a stream tag (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  // Uniform on (0, 1].
  double uniform_open_left() { return 1.0 - uniform(); }
  double exponential(double rate);
  // Index drawn proportionally to nonnegative weights; throws on zero mass.
  int categorical(std::span<const double> weights);
  int categorical(const Eigen::Ref<const Vector>& weights);
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  // Uniform draw on the probability simplex of dimension n.
  Vector simplex(int n);

 private:
  std::mt19937_64 engine_;
};

}  // namespace ratingfilter
