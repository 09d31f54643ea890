#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tiltlab/access.hpp"
#include "tiltlab/fk.hpp"
#include "tiltlab/model.hpp"
#include "tiltlab/random.hpp"

namespace tiltlab {

class DegeneracyError : public Error {
 public:
  using Error::Error;
};

struct SamplerOutput {
  /// Rank of the emitted length-T prefix.
  std::size_t leaf = 0;
  std::uint64_t base_queries = 0;
  std::uint64_t reward_queries = 0;
  /// Set when a rejection-sampling call fell back to a plain base draw.
  bool failed = false;
  std::uint32_t proposals = 0;
  std::uint32_t accepted = 0;
  /// Pool mode only: per-step empirical normalizers and log of the cumulative weight.
  std::vector<double> pool_normalizers;
  double log_weight = 0.0;
  /// Largest relative error of an empirical normalizer against the exact one; -1 when not tracked.
  double max_normalizer_error = -1.0;
};

// ---- rejection sampling -------------------------------------------------

struct RejectionDraw {
  Symbol symbol = 0;
  bool accepted = false;
  std::uint64_t base_draws = 0;
  std::uint64_t score_evals = 0;
  std::uint64_t trials = 0;
};

/// ceil(4 M ln(4/delta)).
std::uint64_t rejection_trial_budget(double M, double delta);

/// Normalizer estimated from N base draws, then up to N trials accepting with
/// probability min{g/(M Zhat), 1}; on exhaustion one more base draw is returned
/// with accepted = false.
template <class Draw, class Score>
  requires std::invocable<Draw&>
RejectionDraw rejection_sample(Draw&& draw, Score&& score, double M, double delta, RandomStream& rng) {
  const std::uint64_t N = rejection_trial_budget(M, delta);
  RejectionDraw out;
  double sum = 0.0;
  for (std::uint64_t i = 0; i < N; ++i) sum += score(draw());
  out.base_draws = out.score_evals = N;
  const double zhat = sum / static_cast<double>(N);
  for (std::uint64_t k = 0; k < N; ++k) {
    const Symbol z = draw();
    const double g = score(z);
    ++out.base_draws;
    ++out.score_evals;
    ++out.trials;
    if (rng.uniform() < g / (M * zhat)) {
      out.symbol = z;
      out.accepted = true;
      return out;
    }
  }
  out.symbol = draw();
  ++out.base_draws;
  return out;
}

RejectionDraw rejection_sample(std::span<const double> scores, std::span<const double> row, double M, double delta,
                               RandomStream& rng);

// ---- empirical expectation ----------------------------------------------

template <class Draw, class Score>
  requires std::invocable<Draw&>
double empirical_expectation(Draw&& draw, Score&& score, std::size_t n) {
  if (n == 0) throw Error("empirical_expectation needs at least one sample");
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += score(draw());
  return sum / static_cast<double>(n);
}

double empirical_expectation(std::span<const double> scores, std::span<const double> row, std::size_t n,
                             RandomStream& rng);

/// Sample size n with n >= 8 c_act ln(4/delta).
std::size_t expectation_sample_size(double c_act, double delta);
/// Relative error radius 2 sqrt(2) sqrt(c_act ln(4/delta) / n).
double expectation_error_radius(double c_act, double delta, std::size_t n);

// ---- resampling ----------------------------------------------------------

/// N i.i.d. categorical ancestors. Throws DegeneracyError naming `step` on zero mass.
std::vector<std::size_t> resample_multinomial(std::span<const double> weights, std::size_t N, RandomStream& rng,
                                              int step = -1);

/// Atom of a discrete measure: `key` orders ties, `score` orders strata.
struct Atom {
  std::size_t key = 0;
  double mass = 0.0;
  double score = 0.0;
};

/// Sorts by (score, key), cuts the normalized mass into N strata of mass 1/N
/// (splitting boundary atoms) and draws one atom per stratum. Returns input positions.
std::vector<std::size_t> resample_stratified_quantile(std::span<const Atom> atoms, std::size_t N,
                                                      RandomStream& rng);
/// Conditional law of each stratum over the input positions.
std::vector<std::vector<double>> stratum_laws(std::span<const Atom> atoms, std::size_t N);

// ---- SMC -----------------------------------------------------------------

enum class ResampleScheme { multinomial, stratified };
enum class NormalizerMode { exact, monte_carlo };
std::string to_string(ResampleScheme scheme);
ResampleScheme parse_resample_scheme(std::string_view text);

struct SmcOptions {
  std::size_t N = 1;
  ResampleScheme scheme = ResampleScheme::multinomial;
  /// Monte-Carlo mode applies to the optimal proposal only.
  NormalizerMode normalizer = NormalizerMode::exact;
  std::size_t mc_samples = 0;
  double rs_threshold = 0.0;
  /// Total failure budget; each rejection call receives delta / (2 N T).
  double delta = 0.1;
};

SamplerOutput smc_run(const FKModel& fk, const SmcOptions& options, RandomStream& rng);
/// Naive and Monte-Carlo propagation and twist queries go through `access`.
SamplerOutput smc_run(const FKModel& fk, ModelAccess& access, const SmcOptions& options, RandomStream& rng);

// ---- single-particle guided SMC ------------------------------------------

struct SpgsmcMode {
  enum class Kind { exact_tilt, pool };
  Kind kind = Kind::exact_tilt;
  std::size_t M = 1;
};

SamplerOutput spgsmc_run(const Instance& instance, const SpgsmcMode& mode, RandomStream& rng);
SamplerOutput spgsmc_run(ModelAccess& access, const SpgsmcMode& mode, RandomStream& rng);

/// Pool-mode trajectory with the data needed for an MH correction.
struct AugmentedProposal {
  std::size_t leaf = 0;
  /// log V(s_{1:t}) for t = 1..T.
  std::vector<double> log_twist;
  /// Pool averages of candidate twists, t = 1..T.
  std::vector<double> pool_normalizers;
  /// log prod_t V(s_{1:t}) / Zbar_t.
  double log_weight = 0.0;
};

AugmentedProposal pool_proposal(ModelAccess& access, std::size_t M, RandomStream& rng);
/// log prod_t V(s_{1:t}) / Zbar_t recomputed from the twist table.
double recompute_log_weight(const Instance& instance, const AugmentedProposal& proposal);

}  // namespace tiltlab
