#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "tiltlab/access.hpp"
#include "tiltlab/distribution.hpp"
#include "tiltlab/model.hpp"
#include "tiltlab/random.hpp"

namespace tiltlab {

/// Uniform reference, T = 3m; twist ratio 1 on the first 2m levels, then r on
/// the branch below the hidden prefix u and 1/r elsewhere.
struct HardInstanceParams {
  int B = 2;
  double r = 2.0;
  int m = 1;
  /// Hidden prefix of length 2m; drawn from `seed` when absent.
  std::optional<Prefix> u;
  std::uint64_t seed = 0;
};

/// The hidden prefix, resolving a missing u from the seed.
Prefix hidden_prefix(const HardInstanceParams& params);
Instance make_hard_instance(const HardInstanceParams& params);
/// Inverse of the id written by make_hard_instance; u is always set.
std::optional<HardInstanceParams> parse_hard_id(std::string_view id);

/// r^{2m} / (r^{2m} + B^{2m} - 1).
double hard_mass_closed_form(int B, double r, int m);
/// Leaves whose first |u| symbols equal u.
std::vector<char> favored_leaves(const Shape& shape, const Prefix& u);
double set_mass(const TrajectoryDistribution& law, const std::vector<char>& mask);

class NoGuessViolation : public Error {
 public:
  using Error::Error;
};

/// Query-counted sampling access with a ledger of visited prefixes.
/// Draws come from the oracle's own stream; the caller's stream is not used.
class CountingOracle final : public ModelAccess {
 public:
  CountingOracle(const Instance& instance, RandomStream rng);

  const Shape& shape() const override { return instance_.shape(); }
  Symbol draw_next(Node prefix, RandomStream& rng) override;
  double twist(Node prefix) override;
  /// Always throws: the oracle model offers samples only.
  std::span<const double> next_row(Node prefix) override;
  QueryCounts counts() const override { return counts_; }

  std::uint64_t draws_at(Node prefix) const;
  bool visited(Node prefix) const;
  /// Throws NoGuessViolation unless every prefix of the leaf was visited.
  void emit(std::size_t leaf) const;

 private:
  std::size_t slot(Node prefix) const { return offsets_[static_cast<std::size_t>(prefix.t)] + prefix.index; }

  const Instance& instance_;
  RandomStream rng_;
  QueryCounts counts_;
  std::vector<std::size_t> offsets_;
  std::vector<std::uint64_t> tally_;
  std::vector<char> visited_;
};

enum class HitSampler { uniform_search, spgsmc, smc };
HitSampler parse_hit_sampler(std::string_view text);

struct HitSamplerSpec {
  HitSampler kind = HitSampler::uniform_search;
  /// Particles for smc.
  std::size_t N = 4;
  /// Pool size for spgsmc.
  std::size_t M = 4;
};

struct HitResult {
  /// Requested quantile of next-symbol draws until the first hit; infinite
  /// when exhausted repetitions dominate.
  double quantile = 0.0;
  /// Per-repetition totals; exhausted repetitions are absent.
  std::vector<std::uint64_t> queries;
  std::size_t exhausted = 0;
};

HitResult queries_to_hit(const Instance& instance, const HitSamplerSpec& sampler, const std::vector<char>& target,
                         double quantile, std::size_t repetitions, RandomStream& rng, std::size_t max_runs = 100000);

/// Linear-interpolation quantile of a sample; +inf entries are allowed.
double sample_quantile(std::vector<double> values, double q);

}  // namespace tiltlab
