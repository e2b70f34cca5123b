#pragma once

#include <cstdint>
#include <random>

namespace mirrorlab {

// splitmix64 finalizer, used to derive independent seed streams from
// (seed, tag...) tuples without sharing generator state.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a,
                                 std::uint64_t b = 0, std::uint64_t c = 0) {
  std::uint64_t s = splitmix64(seed ^ 0x6a09e667f3bcc909ULL);
  s = splitmix64(s ^ a);
  s = splitmix64(s ^ b);
  s = splitmix64(s ^ c);
  return s;
}

// Stream tags for seed derivation. Keeping them in one table avoids
// accidental collisions between modules.
enum StreamTag : std::uint64_t {
  kStreamEnv = 1,
  kStreamPolicyInit = 2,
  kStreamCriticInit = 3,
  kStreamShuffle = 4,
  kStreamCollect = 5,
  kStreamEval = 6,
  kStreamEsNoise = 7,
  kStreamEsFitness = 8,
  kStreamInnerTrain = 9,
  kStreamBaseline = 10,
};

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(gen_);
  }
  double normal() { return normal_(gen_); }
  // uniform over {0, ..., n-1}
  int uniform_int(int n) {
    return std::uniform_int_distribution<int>(0, n - 1)(gen_);
  }
  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace mirrorlab
