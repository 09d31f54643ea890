#pragma once

#include <vector>

#include "tiltlab/distribution.hpp"
#include "tiltlab/fk.hpp"
#include "tiltlab/model.hpp"

namespace tiltlab {

/// Leaf law proportional to pi_ref times the terminal reward.
TrajectoryDistribution target_distribution(const Instance& instance);
/// Length-t law proportional to pi_ref(s_{1:t}) * V(s_{1:t}).
TrajectoryDistribution intermediate_target(const Instance& instance, int t);
/// Law of single-particle guided SMC: product of exact local tilts.
TrajectoryDistribution spgsmc_exact_law(const Instance& instance);

/// Z(s_{1:t}) = sum_c pi_ref(c | s_{1:t}) V(s_{1:t} c) for t = 0..T-1.
std::vector<std::vector<double>> lookahead_normalizers(const Instance& instance);
/// E[phi | s_{1:t}] under pi_ref for t = 0..T.
std::vector<std::vector<double>> terminal_lookahead(const Instance& instance);

/// sup over t in 1..T of V(s_{1:t}) / Z(s_{1:t-1}).
double activation_constant(const Instance& instance);

struct InstanceDiagnostics {
  double L = 1.0;
  double eps = 0.0;
  double eps_g = 0.0;
  double c_act = 1.0;
  ProposalTag proposal = ProposalTag::naive;
  RatioTable q{1};
};

/// Ratio bound, local and global Bellman errors over prefix lengths 0..T-1,
/// activation constant over lengths 1..T, and q_{p,n} for the FK model of `proposal`.
InstanceDiagnostics diagnostics(const Instance& instance, ProposalTag proposal = ProposalTag::naive);

}  // namespace tiltlab
