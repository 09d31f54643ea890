// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "tiltlab/fk.hpp"
#include "tiltlab/harness.hpp"
#include "tiltlab/lowerbound.hpp"
#include "tiltlab/mh.hpp"
#include "tiltlab/oracle.hpp"
#include "tiltlab/samplers.hpp"

using namespace tiltlab;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

struct Criterion {
  std::string name;
  double limit_s;
  std::function<Outcome()> run;
};

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

std::vector<double> random_simplex(RandomStream& rng, std::size_t n) {
  std::vector<double> v(n);
  double z = 0.0;
  for (double& x : v) z += x = -std::log(1.0 - rng.uniform());
  for (double& x : v) x /= z;
  return v;
}

double tv_span(std::span<const double> p, std::span<const double> q) {
  double d = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) d += std::abs(p[i] - q[i]);
  return 0.5 * d;
}

// Twist within 0.05 local error and a small ratio bound, so the particle budget stays affordable.
const RandomInstanceSpec kMildSpec{3, 4, 0.5, 0.03, 0.05, 1};
// Same shape with a sharp reward, so small-N bias is visible above sampling noise.
const RandomInstanceSpec kSharpSpec{3, 4, 6.0, 0.03, 0.05, 4};
constexpr std::size_t kBoundReplicates = 20000;
constexpr std::size_t kSlopeReplicates = 1000000;
constexpr double kDeltaTv = 0.2;

std::int64_t naive_budget(const Instance& inst, double delta_tv) {
  const auto d = diagnostics(inst);
  const std::int64_t local = particle_budget({d.L, d.eps, inst.shape().T, delta_tv}, BudgetRegime::naive_local);
  const std::int64_t global = particle_budget({d.L, d.eps_g, inst.shape().T, delta_tv}, BudgetRegime::naive_global);
  return std::min(local, global);
}

Outcome bound_at_budget(ResampleScheme scheme, std::uint64_t seed) {
  const auto inst = random_instance(kMildSpec);
  const auto d = diagnostics(inst);
  if (d.eps > 0.05) return {false, fmt("instance local error %.4f exceeds 0.05", d.eps)};
  const auto N = naive_budget(inst, kDeltaTv);
  SamplerSpec spec;
  spec.proposal = ProposalTag::naive;
  spec.scheme = scheme;
  spec.N = static_cast<std::size_t>(N);
  const auto law = estimate_output_law(spec, inst, kBoundReplicates, RandomStream(seed));
  const double tv = tv_distance(law.law, target_distribution(inst));
  const double se = tv_standard_error(law);
  return {tv <= kDeltaTv + 3 * se, fmt("N=%lld eps=%.4f TV=%.4f SE=%.4f", static_cast<long long>(N), d.eps, tv, se)};
}

Outcome check_exact_flow() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const int B = 2 + static_cast<int>(seed % 3), T = 2 + static_cast<int>(seed % 4);
    const auto inst = random_instance({B, T, 1.0, 0.2, 0.05, seed});
    const auto target = target_distribution(inst);
    const auto custom = random_instance({B, T, 0.0, 0.0, 0.05, seed + 1000}).reference;
    for (const Proposal& p : {Proposal{NaiveProposal{}}, Proposal{OptimalProposal{}}, Proposal{CustomProposal{custom}}}) {
      const auto flow = exact_flow(build_fk(inst, p));
      worst = std::max(worst, tv_distance(flow.back(), target));
    }
  }
  return {worst <= 1e-10, fmt("max TV %.3g over 150 flows", worst)};
}

Outcome check_guided_law_error() {
  double worst_ratio = 0.0, worst_exact = 0.0;
  bool ok = true;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const int B = 2 + static_cast<int>(seed % 3), T = 2 + static_cast<int>(seed % 4);
    const double gamma = seed % 5 == 0 ? 0.0 : 0.05 * static_cast<double>(seed % 7);
    const auto inst = random_instance({B, T, 1.0, gamma, 0.05, seed});
    const double eps = diagnostics(inst).eps;
    const auto law = spgsmc_exact_law(inst);
    for (int t = 1; t <= T; ++t) {
      const double tv = tv_distance(intermediate_target(inst, t), law.marginal(t));
      if (gamma == 0.0) {
        worst_exact = std::max(worst_exact, tv);
        ok = ok && tv <= 1e-10;
      } else {
        ok = ok && tv <= 2 * t * eps;
        worst_ratio = std::max(worst_ratio, tv / (2 * t * eps));
      }
    }
  }
  return {ok, fmt("max TV/(2 t eps) %.3f; max TV without Bellman error %.3g", worst_ratio, worst_exact)};
}

Outcome check_hard_family() {
  double worst_mass = 0.0, worst_eps = 0.0;
  for (int r : {2, 3})
    for (int m : {1, 2}) {
      const auto inst = make_hard_instance({r, static_cast<double>(r), m, std::nullopt, static_cast<std::uint64_t>(r + m)});
      const auto u = hidden_prefix(*parse_hard_id(inst.id));
      const double mass = set_mass(target_distribution(inst), favored_leaves(inst.shape(), u));
      worst_mass = std::max(worst_mass, std::abs(mass - 1.0 / (2.0 - std::pow(r, -2.0 * m))));
    }
  for (double e : {0.1, 0.5})
    for (int m : {1, 2})
      worst_eps = std::max(worst_eps, std::abs(diagnostics(make_hard_instance({2, 1.0 + e, m, std::nullopt, 7})).eps - e));
  return {worst_mass <= 1e-12 && worst_eps <= 1e-12,
          fmt("mass error %.3g; local error deviation %.3g", worst_mass, worst_eps)};
}

Outcome check_particle_budget_bound() {
  auto out = bound_at_budget(ResampleScheme::multinomial, 41);
  const auto sharp = random_instance(kSharpSpec);
  const auto target = target_distribution(sharp);
  std::vector<double> x, y;
  std::string points;
  for (std::size_t N : {4u, 16u, 64u, 256u}) {
    SamplerSpec spec;
    spec.N = N;
    const auto law = estimate_output_law(spec, sharp, kSlopeReplicates, RandomStream(43).split(N));
    const double tv = tv_distance(law.law, target), se = tv_standard_error(law);
    points += fmt(" N=%zu:%.4f", N, tv);
    if (tv > 3 * se) {
      x.push_back(std::log(static_cast<double>(N)));
      y.push_back(std::log(tv));
    }
  }
  const bool enough = x.size() >= 3;
  const double slope = enough ? fit_slope(x, y) : std::numeric_limits<double>::quiet_NaN();
  out.pass = out.pass && enough && slope <= -0.5;
  out.detail += fmt("; sharp-instance TV%s; slope %.3f over %zu signal points", points.c_str(), slope, x.size());
  return out;
}

Outcome check_mh_contraction() {
  double stationarity = 0.0, excess = -1.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto chain = pool_mh_augmented_chain(random_instance({2, 2, 1.5, 0.3, 0.05, seed}), 2);
    const Eigen::RowVectorXd pi = chain.target.transpose();
    stationarity = std::max(stationarity, 0.5 * (pi * chain.kernel - pi).cwiseAbs().sum());
  }
  RandomStream rng(51);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto inst = random_instance({2, 3, 1.5, 0.3, 0.05, seed});
    const auto target = target_distribution(inst), proposal = spgsmc_exact_law(inst);
    const auto K = independent_mh_kernel(target.probs(), proposal.probs());
    const double b = ratio_bound(target.probs(), proposal.probs());
    const double c = 1.0 - 1.0 / (b * b);
    const Eigen::Map<const Eigen::RowVectorXd> pi(target.probs().data(), static_cast<Eigen::Index>(target.size()));
    for (int k = 0; k < 20; ++k) {
      const auto v = random_simplex(rng, target.size());
      Eigen::RowVectorXd mu = Eigen::Map<const Eigen::RowVectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
      const double d0 = 0.5 * (mu - pi).cwiseAbs().sum();
      for (int H = 1; H <= 10; ++H) {
        mu = mu * K;
        excess = std::max(excess, 0.5 * (mu - pi).cwiseAbs().sum() - std::pow(c, H) * d0);
      }
    }
  }

  const auto inst = random_instance({2, 3, 2.0, 0.3, 0.05, 3});
  const auto target = target_distribution(inst);
  const double b = pool_mh_ratio_bound(inst, 2);
  SamplerSpec spec;
  spec.kind = SamplerKind::pool_mh;
  spec.M = 2;
  std::vector<double> tv, se, x, y;
  for (std::size_t H = 1; H <= 8; ++H) {
    spec.H = H;
    const auto law = estimate_output_law(spec, inst, 100000, RandomStream(53).split(H));
    tv.push_back(tv_distance(law.law, target));
    se.push_back(tv_standard_error(law));
    if (tv.back() > 3 * se.back()) {
      x.push_back(static_cast<double>(H));
      y.push_back(std::log(tv.back()));
    }
  }
  const double slack = 3 * *std::max_element(se.begin(), se.end());
  bool monotone = true;
  for (std::size_t i = 1; i < tv.size(); ++i) monotone = monotone && tv[i] <= tv[i - 1] + slack;
  const double ratio = x.size() >= 2 ? std::exp(fit_slope(x, y)) : std::numeric_limits<double>::quiet_NaN();
  const double limit = 1.0 - 1.0 / (b * b) + 0.1;
  const bool pass = stationarity <= 1e-10 && excess <= 1e-12 && monotone && x.size() >= 2 && ratio <= limit;
  return {pass, fmt("stationarity %.3g; contraction excess %.3g; H-curve %s, ratio %.3f vs %.3f",
                    stationarity, excess, monotone ? "nonincreasing" : "increasing", ratio, limit)};
}

Outcome check_rejection_conditional() {
  const std::vector<double> row{0.2, 0.3, 0.5}, g{1.0, 2.0, 4.0};
  const double M = 8.0, delta = 0.1;
  double z = 0.0;
  for (std::size_t i = 0; i < 3; ++i) z += row[i] * g[i];
  std::vector<double> tilted(3), freq(3, 0.0);
  for (std::size_t i = 0; i < 3; ++i) tilted[i] = row[i] * g[i] / z;
  const auto budget = rejection_trial_budget(M, delta);
  const auto expected = static_cast<std::uint64_t>(std::ceil(4 * M * std::log(4 / delta)));
  RandomStream rng(61);
  std::size_t accepted = 0;
  bool within_budget = true;
  while (accepted < 100000) {
    const auto d = rejection_sample(g, row, M, delta, rng);
    within_budget = within_budget && d.trials <= budget;
    if (!d.accepted) continue;
    ++accepted;
    freq[static_cast<std::size_t>(d.symbol)] += 1.0 / 100000.0;
  }
  const double tv = tv_span(freq, tilted);
  return {tv <= 0.02 && budget == expected && within_budget,
          fmt("TV %.4f over 1e5 accepted draws; budget %llu (expected %llu)", tv,
              static_cast<unsigned long long>(budget), static_cast<unsigned long long>(expected))};
}

Outcome check_expectation_concentration() {
  const std::vector<double> row{1.0 / 3.0, 2.0 / 3.0}, g{4.0, 1.0};
  const double z = 2.0, c_act = 4.0 / z, delta = 0.4;
  const auto n = expectation_sample_size(c_act, delta);
  const auto expected_n = static_cast<std::size_t>(std::ceil(8 * c_act * std::log(4 / delta)));
  const double radius = expectation_error_radius(c_act, delta, n);
  RandomStream rng(71);
  int hits = 0;
  for (int k = 0; k < 1000; ++k)
    if (std::abs(empirical_expectation(g, row, n, rng) / z - 1.0) <= radius) ++hits;
  const double freq = hits / 1000.0;
  return {n == expected_n && freq >= 1.0 - delta - 0.05,
          fmt("N_m=%zu radius %.4f frequency %.3f (need %.3f)", n, radius, freq, 1.0 - delta - 0.05)};
}

Outcome check_lower_bound_growth() {
  bool ok = true;
  std::string detail;
  for (const HitSamplerSpec sampler : {HitSamplerSpec{HitSampler::uniform_search}, HitSamplerSpec{HitSampler::spgsmc, 4, 4}}) {
    double median[2];
    for (int m : {1, 2}) {
      const auto inst = make_hard_instance({2, 2.0, m, std::nullopt, static_cast<std::uint64_t>(80 + m)});
      const auto mask = favored_leaves(inst.shape(), hidden_prefix(*parse_hard_id(inst.id)));
      RandomStream rng(RandomStream(81).split(static_cast<std::uint64_t>(m)));
      median[m - 1] = queries_to_hit(inst, sampler, mask, 0.5, 200, rng).quantile;
    }
    ok = ok && std::isfinite(median[1]) && median[1] >= 2 * median[0];
    detail += fmt("%s%s median %.1f -> %.1f", detail.empty() ? "" : "; ",
                  sampler.kind == HitSampler::uniform_search ? "uniform search" : "guided pool", median[0], median[1]);
  }
  return {ok, detail};
}

Outcome check_stratified_consistency() {
  RandomStream rng(91);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(12);
    std::vector<Atom> atoms(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      atoms[i] = {i, rng.uniform() < 0.1 ? 0.0 : rng.uniform(), std::floor(rng.uniform() * 4)};
      total += atoms[i].mass;
    }
    if (total == 0.0) atoms[0].mass = total = 1.0;
    const std::size_t N = 1 + rng.below(8);
    const auto laws = stratum_laws(atoms, N);
    for (std::size_t i = 0; i < n; ++i) {
      double mix = 0.0;
      for (const auto& l : laws) mix += l[i] / static_cast<double>(N);
      worst = std::max(worst, std::abs(mix - atoms[i].mass / total));
    }
  }
  auto out = bound_at_budget(ResampleScheme::stratified, 93);
  out.pass = out.pass && worst <= 1e-12;
  out.detail = fmt("mixture error %.3g; ", worst) + out.detail;
  return out;
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {"exact flow terminal law equals the target for three proposals", 5, check_exact_flow},
      {"guided single-particle marginals stay within 2 t eps of the intermediate targets", 10, check_guided_law_error},
      {"hard family favored mass and near-flat local error are exact", 5, check_hard_family},
      {"naive smc meets the TV target at its particle budget and decays in N", 600, check_particle_budget_bound},
      {"pool chain stationarity, independent kernel contraction and chain-length decay", 600, check_mh_contraction},
      {"rejection sampling is exact conditional on acceptance with the fixed trial budget", 60, check_rejection_conditional},
      {"empirical expectation meets its relative error radius", 60, check_expectation_concentration},
      {"queries to hit the hidden branch grow with its depth", 300, check_lower_bound_growth},
      {"stratum laws mix to the measure and stratified smc meets the TV target", 600, check_stratified_consistency},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs <= c.limit_s;
    const bool pass = out.pass && in_time;
    failures += !pass;
    std::printf("%s  %s  [%s; %.1fs of %.0fs%s]\n", pass ? "PASS" : "FAIL", c.name.c_str(), out.detail.c_str(), secs,
                c.limit_s, in_time ? "" : ", over time limit");
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria pass\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
