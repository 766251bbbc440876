#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string>

namespace s4al {

// 64-bit Mersenne Twister with helpers for the handful of draws the pipeline
// needs. Streams for independent consumers are derived from a root seed plus
// a key path, so a component's randomness never depends on how many numbers
// some other component consumed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  static Rng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> keys);

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  // Integer in [0, n).
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
  bool bernoulli(double p) { return uniform() < p; }
  double normal(double mean, double stddev) { return std::normal_distribution<double>(mean, stddev)(engine_); }

  std::mt19937_64& engine() { return engine_; }

  // Text round trip of the full engine state.
  std::string state() const;
  void restore(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace s4al
