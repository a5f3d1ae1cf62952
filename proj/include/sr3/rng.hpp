#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace sr3 {

/// Seeded random source. Uniforms come from a 64-bit Mersenne Twister (whose
/// output sequence is fixed by the standard), Gaussians from Box-Muller, so a
/// seed reproduces the same stream on every platform.
///
/// Not shareable between workers; derive independent substreams with fork().
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64();
  /// Uniform on [0, 1).
  double uniform();
  /// Uniform on (0, 1].
  double uniform_open_closed();
  /// Uniform integer on [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  double gaussian();
  bool bernoulli(double p) { return uniform() < p; }

  /// Child generator whose seed is drawn from this stream.
  Rng fork();

  /// Full generator state as text; restore() reproduces the exact stream position.
  std::string serialize() const;
  static Rng restore(const std::string& text);

  bool operator==(const Rng& other) const;

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace sr3
