#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "tiltlab/distribution.hpp"
#include "tiltlab/model.hpp"

namespace tiltlab {

struct NaiveProposal {};
struct OptimalProposal {};
struct CustomProposal {
  ReferenceModel table;
};
using Proposal = std::variant<NaiveProposal, OptimalProposal, CustomProposal>;

enum class ProposalTag { naive, optimal, custom };
ProposalTag tag_of(const Proposal& proposal);
std::string to_string(ProposalTag tag);
ProposalTag parse_proposal_tag(std::string_view text);

class CoverageError : public Error {
 public:
  using Error::Error;
};

/// q_{p,n} for 1 <= p <= n <= T+1.
class RatioTable {
 public:
  explicit RatioTable(int T) : T_(T), q_(static_cast<std::size_t>((T + 2) * (T + 2)), 0.0) {}
  int T() const { return T_; }
  double operator()(int p, int n) const { return q_[static_cast<std::size_t>(p * (T_ + 2) + n)]; }
  double& operator()(int p, int n) { return q_[static_cast<std::size_t>(p * (T_ + 2) + n)]; }

 private:
  int T_;
  std::vector<double> q_;
};

/// Potentials G_1..G_T and kernels M_1..M_T; step T+1 has the identity kernel.
/// kernel(t) is indexed by length-t child rank, so the row of parent i is
/// entries i*B .. i*B+B-1; M_1 is the initial law from the root.
class FKModel {
 public:
  FKModel(std::shared_ptr<const Instance> instance, ProposalTag kind, std::vector<std::vector<double>> potentials,
          std::vector<std::vector<double>> kernels);

  const Instance& instance() const { return *instance_; }
  std::shared_ptr<const Instance> instance_ptr() const { return instance_; }
  const Shape& shape() const { return instance_->shape(); }
  ProposalTag kind() const { return kind_; }
  /// Number of FK steps, T+1.
  int horizon() const { return shape().T + 1; }

  double potential(Node x) const { return potentials_[static_cast<std::size_t>(x.t - 1)][x.index]; }
  std::span<const double> potentials(int t) const { return potentials_.at(static_cast<std::size_t>(t - 1)); }
  std::span<const double> kernel(int t) const { return kernels_.at(static_cast<std::size_t>(t - 1)); }
  std::span<const double> kernel_row(int t, std::size_t parent) const;
  /// Q_{p,T+1}(1) on E_p for p = 1..T; constant 1 at p = T+1.
  std::span<const double> value_to_go(int p) const { return value_to_go_.at(static_cast<std::size_t>(p - 1)); }

 private:
  std::shared_ptr<const Instance> instance_;
  ProposalTag kind_;
  std::vector<std::vector<double>> potentials_;
  std::vector<std::vector<double>> kernels_;
  std::vector<std::vector<double>> value_to_go_;
};

FKModel build_fk(std::shared_ptr<const Instance> instance, const Proposal& proposal);
FKModel build_fk(const Instance& instance, const Proposal& proposal);

/// Predictive laws eta_1..eta_{T+1}; entry k holds eta_{k+1}.
std::vector<TrajectoryDistribution> exact_flow(const FKModel& fk);

/// q_{p,n} = sup Q_{p,n}(1) / inf Q_{p,n}(1) over E_p, by backward recursion.
RatioTable ratio_constants(const FKModel& fk);

/// max over transitions of max{w, 1/w}, w = (pi_ref/pi_p) * twist ratio.
double proposal_coverage_bound(const Instance& instance, const Proposal& proposal);

enum class BudgetRegime { naive_local, optimal_local, arbitrary_local, naive_global, arbitrary_global };
std::string to_string(BudgetRegime regime);
BudgetRegime parse_budget_regime(std::string_view text);

struct BudgetInputs {
  /// L for naive regimes, L_p for arbitrary regimes; unused for optimal-local.
  double ratio = 1.0;
  /// Local error for local regimes, global error for global regimes.
  double bellman = 0.0;
  int T = 2;
  double delta_tv = 0.1;
};

/// Numerator of the TV bound: TV <= budget_constant / (2N).
double budget_constant(const BudgetInputs& in, BudgetRegime regime);
/// TV bound at N particles.
double particle_tv_bound(const BudgetInputs& in, BudgetRegime regime, std::int64_t N);
/// Smallest N with bound <= delta_tv, floored at 1. Requires delta_tv in (0,1), T >= 2.
std::int64_t particle_budget(const BudgetInputs& in, BudgetRegime regime);

}  // namespace tiltlab
