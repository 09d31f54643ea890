#pragma once

#include <Eigen/Dense>
#include <ostream>
#include <span>
#include <vector>

#include "tiltlab/access.hpp"
#include "tiltlab/model.hpp"
#include "tiltlab/samplers.hpp"

namespace tiltlab {

struct MHChainConfig {
  std::size_t H = 1;
  /// Pool variant.
  std::size_t M = 1;
  /// Rejection variant: samples per normalizer estimate; 0 selects exact normalizers.
  std::size_t mc_samples = 0;
  /// Rejection variant threshold; 0 selects 4 * ceil(c_act).
  double rs_threshold = 0.0;
  /// Rejection variant failure budget; each call receives delta / (T H).
  double delta = 0.1;
  /// Optional CSV trace: iteration,accepted,log_w,trajectory.
  std::ostream* trace = nullptr;
};

/// ceil(8 c_act T^2 ln(4/delta)).
std::size_t default_pool_size(double c_act, int T, double delta);
/// 4 * ceil(c_act).
double default_rs_threshold(double c_act);

SamplerOutput pool_mh_run(const Instance& instance, const MHChainConfig& config, RandomStream& rng);
/// `exact_normalizers`, when given, feeds the normalizer-error diagnostic.
SamplerOutput pool_mh_run(ModelAccess& access, const MHChainConfig& config, RandomStream& rng,
                          const std::vector<std::vector<double>>* exact_normalizers = nullptr);

/// `normalizers`, when given, replaces the per-call lookahead computation in exact mode.
SamplerOutput rejection_mh_run(const Instance& instance, const MHChainConfig& config, RandomStream& rng,
                               const std::vector<std::vector<double>>* normalizers = nullptr);

/// Independent MH matrix for target weights G and proposal weights R (both positive).
Eigen::MatrixXd independent_mh_kernel(std::span<const double> target, std::span<const double> proposal);
/// sqrt(max(G/R) / min(G/R)) for normalized G and R: the smallest b with G/R in [1/b, b] after rescaling.
double ratio_bound(std::span<const double> target, std::span<const double> proposal);
/// max over row pairs of their TV distance.
double dobrushin_coefficient(const Eigen::MatrixXd& kernel);

/// Full enumeration of the pool chain's augmented space.
struct AugmentedChain {
  Eigen::VectorXd target;
  Eigen::VectorXd proposal;
  Eigen::MatrixXd kernel;
  /// Leaf emitted by each augmented state.
  std::vector<std::size_t> leaf;
};

/// Throws Error when the state count exceeds `max_states`.
AugmentedChain pool_mh_augmented_chain(const Instance& instance, std::size_t M, std::size_t max_states = 4096);
/// Augmented-space ratio bound of the pool chain by recursion over the tree.
double pool_mh_ratio_bound(const Instance& instance, std::size_t M);

/// Leaf-space kernel of the rejection chain with exact normalizers and exact local tilts.
Eigen::MatrixXd rejection_mh_exact_kernel(const Instance& instance);

}  // namespace tiltlab
