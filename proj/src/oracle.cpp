#include "tiltlab/oracle.hpp"

#include <algorithm>

namespace tiltlab {

namespace {

double two_sided(double a, double b) { return std::max(a / b, b / a); }

}  // namespace

TrajectoryDistribution target_distribution(const Instance& instance) {
  return intermediate_target(instance, instance.shape().T);
}

TrajectoryDistribution intermediate_target(const Instance& instance, int t) {
  if (t < 0 || t > instance.shape().T) throw Error("intermediate_target: t out of range");
  auto mass = instance.reference.marginal(t);
  const auto v = instance.twist.level(t);
  for (std::size_t i = 0; i < mass.size(); ++i) mass[i] *= v[i];
  return TrajectoryDistribution::from_masses(instance.shape(), t, std::move(mass));
}

TrajectoryDistribution spgsmc_exact_law(const Instance& instance) {
  const Shape& shape = instance.shape();
  const auto z = lookahead_normalizers(instance);
  std::vector<double> law{1.0};
  for (int t = 0; t < shape.T; ++t) {
    const auto rows = instance.reference.level(t);
    const auto v = instance.twist.level(t + 1);
    std::vector<double> next(shape.count(t + 1));
    for (std::size_t j = 0; j < next.size(); ++j) {
      const std::size_t parent = j / static_cast<std::size_t>(shape.B);
      next[j] = law[parent] * rows[j] * v[j] / z[static_cast<std::size_t>(t)][parent];
    }
    law = std::move(next);
  }
  return TrajectoryDistribution::from_masses(shape, shape.T, std::move(law));
}

std::vector<std::vector<double>> lookahead_normalizers(const Instance& instance) {
  const Shape& shape = instance.shape();
  std::vector<std::vector<double>> z(static_cast<std::size_t>(shape.T));
  for (int t = 0; t < shape.T; ++t) {
    const auto rows = instance.reference.level(t);
    const auto v = instance.twist.level(t + 1);
    auto& level = z[static_cast<std::size_t>(t)];
    level.assign(shape.count(t), 0.0);
    for (std::size_t j = 0; j < v.size(); ++j) level[j / static_cast<std::size_t>(shape.B)] += rows[j] * v[j];
  }
  return z;
}

std::vector<std::vector<double>> terminal_lookahead(const Instance& instance) {
  const Shape& shape = instance.shape();
  std::vector<std::vector<double>> e(static_cast<std::size_t>(shape.T + 1));
  const auto phi = instance.twist.terminal();
  e.back().assign(phi.begin(), phi.end());
  for (int t = shape.T - 1; t >= 0; --t) {
    const auto rows = instance.reference.level(t);
    const auto& next = e[static_cast<std::size_t>(t + 1)];
    auto& level = e[static_cast<std::size_t>(t)];
    level.assign(shape.count(t), 0.0);
    for (std::size_t j = 0; j < next.size(); ++j) level[j / static_cast<std::size_t>(shape.B)] += rows[j] * next[j];
  }
  return e;
}

double activation_constant(const Instance& instance) {
  const auto z = lookahead_normalizers(instance);
  const auto B = static_cast<std::size_t>(instance.shape().B);
  double c = 0.0;
  for (int t = 1; t <= instance.shape().T; ++t) {
    const auto v = instance.twist.level(t);
    for (std::size_t j = 0; j < v.size(); ++j) c = std::max(c, v[j] / z[static_cast<std::size_t>(t - 1)][j / B]);
  }
  return c;
}

InstanceDiagnostics diagnostics(const Instance& instance, ProposalTag proposal) {
  const Shape& shape = instance.shape();
  const std::size_t B = static_cast<std::size_t>(shape.B);
  InstanceDiagnostics d;
  d.proposal = proposal;

  const auto z = lookahead_normalizers(instance);
  const auto g = terminal_lookahead(instance);
  double L = 1.0, eps = 1.0, eps_g = 1.0, c_act = 0.0;
  for (int t = 0; t < shape.T; ++t) {
    const auto v = instance.twist.level(t);
    const auto vn = instance.twist.level(t + 1);
    for (std::size_t i = 0; i < v.size(); ++i) {
      eps = std::max(eps, two_sided(v[i], z[static_cast<std::size_t>(t)][i]));
      eps_g = std::max(eps_g, two_sided(v[i], g[static_cast<std::size_t>(t)][i]));
    }
    for (std::size_t j = 0; j < vn.size(); ++j) {
      L = std::max(L, two_sided(vn[j], v[j / B]));
      c_act = std::max(c_act, vn[j] / z[static_cast<std::size_t>(t)][j / B]);
    }
  }
  d.L = L;
  d.eps = eps - 1.0;
  d.eps_g = eps_g - 1.0;
  d.c_act = c_act;

  Proposal p = NaiveProposal{};
  if (proposal == ProposalTag::optimal) p = OptimalProposal{};
  else if (proposal == ProposalTag::custom) throw Error("diagnostics: custom proposals need build_fk + ratio_constants");
  d.q = ratio_constants(build_fk(instance, p));
  return d;
}

}  // namespace tiltlab
