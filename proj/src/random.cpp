#include "tiltlab/random.hpp"

#include <stdexcept>

namespace tiltlab {

namespace {

std::mt19937_64 seeded_engine(std::uint64_t seed, const std::vector<std::uint64_t>& path) {
  std::vector<std::uint32_t> words;
  words.reserve(3 + 2 * path.size());
  auto push64 = [&](std::uint64_t v) {
    words.push_back(static_cast<std::uint32_t>(v));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push64(seed);
  // Length marker keeps {a} and {a, 0} apart.
  words.push_back(static_cast<std::uint32_t>(path.size()));
  for (auto label : path) push64(label);
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

}  // namespace

RandomStream::RandomStream(std::uint64_t seed, std::vector<std::uint64_t> path)
    : seed_(seed), path_(std::move(path)), engine_(seeded_engine(seed_, path_)) {}

RandomStream RandomStream::split(std::uint64_t label) const {
  auto child = path_;
  child.push_back(label);
  return RandomStream(seed_, std::move(child));
}

double RandomStream::uniform() {
  return std::uniform_real_distribution<double>(0.0, 1.0)(engine_);
}

std::size_t RandomStream::below(std::size_t n) {
  if (n == 0) throw std::invalid_argument("below: empty range");
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
}

std::size_t RandomStream::categorical(std::span<const double> weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  if (!(total > 0.0)) throw std::invalid_argument("categorical: weights have no positive mass");
  double u = uniform() * total;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    last_positive = i;
    if (u < weights[i]) return i;
    u -= weights[i];
  }
  return last_positive;
}

}  // namespace tiltlab
