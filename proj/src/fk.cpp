#include "tiltlab/fk.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tiltlab/oracle.hpp"

namespace tiltlab {

ProposalTag tag_of(const Proposal& proposal) {
  if (std::holds_alternative<NaiveProposal>(proposal)) return ProposalTag::naive;
  if (std::holds_alternative<OptimalProposal>(proposal)) return ProposalTag::optimal;
  return ProposalTag::custom;
}

std::string to_string(ProposalTag tag) {
  switch (tag) {
    case ProposalTag::naive: return "naive";
    case ProposalTag::optimal: return "optimal";
    case ProposalTag::custom: return "custom";
  }
  return "?";
}

ProposalTag parse_proposal_tag(std::string_view text) {
  if (text == "naive") return ProposalTag::naive;
  if (text == "optimal") return ProposalTag::optimal;
  if (text == "custom") return ProposalTag::custom;
  throw Error("unknown proposal kind '" + std::string(text) + "'");
}

FKModel::FKModel(std::shared_ptr<const Instance> instance, ProposalTag kind,
                 std::vector<std::vector<double>> potentials, std::vector<std::vector<double>> kernels)
    : instance_(std::move(instance)), kind_(kind), potentials_(std::move(potentials)), kernels_(std::move(kernels)) {
  const int T = instance_->shape().T;
  if (static_cast<int>(potentials_.size()) != T || static_cast<int>(kernels_.size()) != T)
    throw Error("FK model needs T potential and kernel levels");
  for (int t = 1; t <= T; ++t) {
    const auto n = instance_->shape().count(t);
    if (potentials_[static_cast<std::size_t>(t - 1)].size() != n || kernels_[static_cast<std::size_t>(t - 1)].size() != n)
      throw Error("FK level " + std::to_string(t) + " has wrong size");
  }
  const auto B = static_cast<std::size_t>(instance_->shape().B);
  value_to_go_.resize(static_cast<std::size_t>(T));
  auto& last = value_to_go_.back();
  last = potentials_.back();
  for (int p = T - 1; p >= 1; --p) {
    const auto& g = potentials_[static_cast<std::size_t>(p - 1)];
    const auto& m = kernels_[static_cast<std::size_t>(p)];
    const auto& next = value_to_go_[static_cast<std::size_t>(p)];
    auto& h = value_to_go_[static_cast<std::size_t>(p - 1)];
    h.resize(g.size());
    for (std::size_t x = 0; x < h.size(); ++x) {
      double e = 0.0;
      for (std::size_t c = 0; c < B; ++c) e += m[x * B + c] * next[x * B + c];
      h[x] = g[x] * e;
    }
  }
}

std::span<const double> FKModel::kernel_row(int t, std::size_t parent) const {
  const auto B = static_cast<std::size_t>(shape().B);
  return kernel(t).subspan(parent * B, B);
}

FKModel build_fk(const Instance& instance, const Proposal& proposal) {
  return build_fk(std::make_shared<const Instance>(instance), proposal);
}

FKModel build_fk(std::shared_ptr<const Instance> instance, const Proposal& proposal) {
  const Shape& shape = instance->shape();
  const auto B = static_cast<std::size_t>(shape.B);
  const auto tag = tag_of(proposal);
  std::vector<std::vector<double>> G(static_cast<std::size_t>(shape.T)), M(static_cast<std::size_t>(shape.T));

  const CustomProposal* custom = std::get_if<CustomProposal>(&proposal);
  if (custom && !(custom->table.shape() == shape)) throw CoverageError("custom proposal shape differs from instance");
  const auto z = tag == ProposalTag::optimal ? lookahead_normalizers(*instance) : std::vector<std::vector<double>>{};

  for (int t = 1; t <= shape.T; ++t) {
    const auto ref = instance->reference.level(t - 1);
    const auto v = instance->twist.level(t);
    const auto vp = instance->twist.level(t - 1);
    auto& g = G[static_cast<std::size_t>(t - 1)];
    auto& m = M[static_cast<std::size_t>(t - 1)];
    g.resize(v.size());
    m.resize(v.size());
    for (std::size_t j = 0; j < v.size(); ++j) {
      const std::size_t parent = j / B;
      switch (tag) {
        case ProposalTag::naive:
          m[j] = ref[j];
          g[j] = v[j] / vp[parent];
          break;
        case ProposalTag::optimal: {
          const double zp = z[static_cast<std::size_t>(t - 1)][parent];
          m[j] = ref[j] * v[j] / zp;
          g[j] = zp / vp[parent];
          break;
        }
        case ProposalTag::custom: {
          const double pp = custom->table.level(t - 1)[j];
          m[j] = pp;
          if (pp > 0.0) {
            g[j] = ref[j] / pp * v[j] / vp[parent];
          } else if (ref[j] > 0.0) {
            throw CoverageError("custom proposal has no mass where the reference does, at prefix " +
                                to_prefix({t, j}, shape.B).to_string());
          } else {
            g[j] = v[j] / vp[parent];
          }
          break;
        }
      }
    }
  }
  return FKModel(std::move(instance), tag, std::move(G), std::move(M));
}

std::vector<TrajectoryDistribution> exact_flow(const FKModel& fk) {
  const Shape& shape = fk.shape();
  const auto B = static_cast<std::size_t>(shape.B);
  std::vector<TrajectoryDistribution> flow;
  auto k1 = fk.kernel(1);
  flow.push_back(TrajectoryDistribution::from_masses(shape, 1, {k1.begin(), k1.end()}));
  for (int t = 2; t <= shape.T; ++t) {
    const auto& prev = flow.back();
    const auto g = fk.potentials(t - 1);
    const auto m = fk.kernel(t);
    std::vector<double> mass(m.size());
    for (std::size_t j = 0; j < m.size(); ++j) mass[j] = prev[j / B] * g[j / B] * m[j];
    flow.push_back(TrajectoryDistribution::from_masses(shape, t, std::move(mass)));
  }
  const auto g = fk.potentials(shape.T);
  std::vector<double> mass(g.size());
  for (std::size_t j = 0; j < g.size(); ++j) mass[j] = flow.back()[j] * g[j];
  flow.push_back(TrajectoryDistribution::from_masses(shape, shape.T, std::move(mass)));
  return flow;
}

RatioTable ratio_constants(const FKModel& fk) {
  const Shape& shape = fk.shape();
  const int T = shape.T;
  const auto B = static_cast<std::size_t>(shape.B);
  RatioTable q(T);
  // E_{T+1} coincides with E_T.
  auto space = [&](int p) { return shape.count(std::min(p, T)); };
  for (int n = 1; n <= T + 1; ++n) {
    q(n, n) = 1.0;
    std::vector<double> h(space(n), 1.0);
    for (int k = n - 1; k >= 1; --k) {
      const auto g = fk.potentials(k);
      std::vector<double> hk(space(k));
      if (k + 1 <= T) {
        const auto m = fk.kernel(k + 1);
        for (std::size_t x = 0; x < hk.size(); ++x) {
          double e = 0.0;
          for (std::size_t c = 0; c < B; ++c) e += m[x * B + c] * h[x * B + c];
          hk[x] = g[x] * e;
        }
      } else {
        for (std::size_t x = 0; x < hk.size(); ++x) hk[x] = g[x] * h[x];
      }
      const auto [lo, hi] = std::minmax_element(hk.begin(), hk.end());
      q(k, n) = *lo > 0.0 ? *hi / *lo : std::numeric_limits<double>::infinity();
      h = std::move(hk);
    }
  }
  return q;
}

double proposal_coverage_bound(const Instance& instance, const Proposal& proposal) {
  const Shape& shape = instance.shape();
  const auto B = static_cast<std::size_t>(shape.B);
  const auto tag = tag_of(proposal);
  const CustomProposal* custom = std::get_if<CustomProposal>(&proposal);
  if (custom && !(custom->table.shape() == shape)) throw CoverageError("custom proposal shape differs from instance");
  const auto z = lookahead_normalizers(instance);
  double bound = 1.0;
  for (int t = 1; t <= shape.T; ++t) {
    const auto ref = instance.reference.level(t - 1);
    const auto v = instance.twist.level(t);
    const auto vp = instance.twist.level(t - 1);
    for (std::size_t j = 0; j < v.size(); ++j) {
      const std::size_t parent = j / B;
      double pp = ref[j];
      if (tag == ProposalTag::optimal) pp = ref[j] * v[j] / z[static_cast<std::size_t>(t - 1)][parent];
      if (tag == ProposalTag::custom) pp = custom->table.level(t - 1)[j];
      if (ref[j] == 0.0 && pp == 0.0) continue;
      if (pp == 0.0)
        throw CoverageError("proposal has no mass where the reference does, at prefix " +
                            to_prefix({t, j}, shape.B).to_string());
      if (ref[j] == 0.0) return std::numeric_limits<double>::infinity();
      const double w = ref[j] / pp * v[j] / vp[parent];
      bound = std::max({bound, w, 1.0 / w});
    }
  }
  return bound;
}

std::string to_string(BudgetRegime regime) {
  switch (regime) {
    case BudgetRegime::naive_local: return "naive-local";
    case BudgetRegime::optimal_local: return "optimal-local";
    case BudgetRegime::arbitrary_local: return "arbitrary-local";
    case BudgetRegime::naive_global: return "naive-global";
    case BudgetRegime::arbitrary_global: return "arbitrary-global";
  }
  return "?";
}

BudgetRegime parse_budget_regime(std::string_view text) {
  for (auto r : {BudgetRegime::naive_local, BudgetRegime::optimal_local, BudgetRegime::arbitrary_local,
                 BudgetRegime::naive_global, BudgetRegime::arbitrary_global})
    if (text == to_string(r)) return r;
  throw Error("unknown budget regime '" + std::string(text) + "'");
}

double budget_constant(const BudgetInputs& in, BudgetRegime regime) {
  if (in.T < 1) throw Error("horizon must be at least 1");
  if (!(in.ratio >= 1.0)) throw Error("ratio bound must be at least 1");
  if (!(in.bellman >= 0.0)) throw Error("Bellman error must be nonnegative");
  const double T = in.T;
  const double l6 = std::pow(in.ratio, 6);
  const double e = 1.0 + in.bellman;
  switch (regime) {
    case BudgetRegime::naive_local:
    case BudgetRegime::arbitrary_local: return l6 * T * std::pow(e, 6.0 * (T - 1));
    case BudgetRegime::optimal_local: return (std::pow(e, 4) - 1.0) * T * T * std::pow(e, 6.0 * T);
    case BudgetRegime::naive_global:
    case BudgetRegime::arbitrary_global: return l6 * T * std::pow(e, 6);
  }
  return 0.0;
}

double particle_tv_bound(const BudgetInputs& in, BudgetRegime regime, std::int64_t N) {
  if (N < 1) throw Error("particle count must be positive");
  return budget_constant(in, regime) / (2.0 * static_cast<double>(N));
}

std::int64_t particle_budget(const BudgetInputs& in, BudgetRegime regime) {
  if (!(in.delta_tv > 0.0 && in.delta_tv < 1.0)) throw Error("delta_tv must lie in (0,1)");
  if (in.T < 2) throw Error("particle budget requires T >= 2");
  const double x = budget_constant(in, regime) / (2.0 * in.delta_tv);
  if (!std::isfinite(x) || x > 9.0e18) throw Error("particle budget overflows");
  // Absorb rounding in the division so exact integers are not bumped up.
  const double n = std::ceil(x * (1.0 - 1e-12));
  return std::max<std::int64_t>(1, static_cast<std::int64_t>(n));
}

}  // namespace tiltlab
