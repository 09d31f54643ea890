#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace tiltlab {

/// Seeded random source addressed by a split path.
/// Equal (seed, path) pairs produce equal sequences; distinct paths seed
/// the engine from distinct seed sequences.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed, std::vector<std::uint64_t> path = {});

  /// Child stream with `label` appended to the path. Does not advance this stream.
  RandomStream split(std::uint64_t label) const;

  std::uint64_t seed() const { return seed_; }
  const std::vector<std::uint64_t>& path() const { return path_; }

  /// Uniform on [0, 1).
  double uniform();
  /// Uniform integer on [0, n). Requires n > 0.
  std::size_t below(std::size_t n);
  /// Index drawn proportionally to nonnegative weights with positive sum.
  std::size_t categorical(std::span<const double> weights);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::vector<std::uint64_t> path_;
  std::mt19937_64 engine_;
};

}  // namespace tiltlab
