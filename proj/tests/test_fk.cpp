#include <doctest.h>

#include <cmath>

#include "support.hpp"
#include "tiltlab/fk.hpp"
#include "tiltlab/oracle.hpp"

using namespace tiltlab;

namespace {

ReferenceModel uniform_table(Shape shape) {
  std::vector<std::vector<double>> rows(static_cast<std::size_t>(shape.T));
  for (int t = 0; t < shape.T; ++t) rows[static_cast<std::size_t>(t)].assign(shape.count(t + 1), 1.0 / shape.B);
  return ReferenceModel(shape, std::move(rows));
}

}  // namespace

TEST_SUITE("fk") {

TEST_CASE("constant twist gives unit naive potentials and reference marginals") {
  const auto base = random_instance({3, 3, 1.0, 0.0, 0.05, 1});
  const Instance inst("flat", base.reference, optimal_twist(base.reference, std::vector<double>(27, 1.0)));
  const auto fk = build_fk(inst, NaiveProposal{});
  for (int t = 1; t <= 3; ++t)
    for (double g : fk.potentials(t)) CHECK(g == doctest::Approx(1.0).epsilon(1e-15));
  const auto flow = exact_flow(fk);
  for (int t = 1; t <= 3; ++t) {
    const auto m = inst.reference.marginal(t);
    CHECK(bf::tv(m, flow[static_cast<std::size_t>(t - 1)].probs()) <= 1e-14);
  }
}

TEST_CASE("naive potentials telescope to the leaf reward") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto inst = random_instance({3, 4, 1.5, 0.3, 0.05, seed});
    const auto fk = build_fk(inst, NaiveProposal{});
    for (std::size_t leaf = 0; leaf < inst.shape().leaves(); ++leaf) {
      double prod = 1.0;
      for (int t = 1; t <= 4; ++t) prod *= fk.potential({t, ancestor({4, leaf}, t, 3)});
      const double v = inst.twist.terminal()[leaf];
      CHECK(std::abs(prod - v) <= 1e-12 * v);
    }
  }
}

TEST_CASE("optimal potentials match brute-force lookahead ratios") {
  const auto inst = random_instance({3, 3, 1.0, 0.3, 0.05, 5});
  const auto fk = build_fk(inst, OptimalProposal{});
  for (int t = 1; t <= 3; ++t)
    for (std::size_t j = 0; j < inst.shape().count(t); ++j) {
      auto s = bf::digits(j, t, 3);
      s.pop_back();
      const double expected = bf::lookahead(inst, s) / bf::twist(inst, s);
      CHECK(fk.potential({t, j}) == doctest::Approx(expected).epsilon(1e-14));
    }
}

TEST_CASE("exact flow ends at the target for every proposal kind") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto inst = random_instance({2 + static_cast<int>(seed % 3), 2 + static_cast<int>(seed % 3), 1.0, 0.2,
                                       0.05, seed});
    const auto target = target_distribution(inst);
    const auto custom = random_instance({inst.shape().B, inst.shape().T, 1.0, 0.0, 0.2, seed + 1000}).reference;
    for (const Proposal& p : {Proposal{NaiveProposal{}}, Proposal{OptimalProposal{}}, Proposal{CustomProposal{custom}}}) {
      const auto flow = exact_flow(build_fk(inst, p));
      CHECK(flow.size() == static_cast<std::size_t>(inst.shape().T + 1));
      CHECK(tv_distance(flow.back(), target) <= 1e-10);
    }
  }
}

TEST_CASE("naive flow reweighted by the potential gives intermediate targets") {
  const auto inst = random_instance({3, 4, 1.0, 0.3, 0.05, 9});
  const auto fk = build_fk(inst, NaiveProposal{});
  const auto flow = exact_flow(fk);
  for (int t = 1; t <= 4; ++t) {
    const auto& eta = flow[static_cast<std::size_t>(t - 1)];
    std::vector<double> m(eta.size());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = eta[i] * fk.potentials(t)[i];
    CHECK(bf::tv(bf::normalize(m), intermediate_target(inst, t).probs()) <= 1e-13);
  }
}

TEST_CASE("custom proposal without coverage is rejected") {
  const auto inst = random_instance({2, 2, 1.0, 0.0, 0.05, 1});
  ReferenceModel gap(Shape{2, 2}, {{1.0, 0.0}, {0.5, 0.5, 0.5, 0.5}});
  CHECK_THROWS_AS(build_fk(inst, CustomProposal{gap}), CoverageError);
  CHECK_THROWS_AS(proposal_coverage_bound(inst, CustomProposal{gap}), CoverageError);
  ReferenceModel other(Shape{2, 3}, {{0.5, 0.5}, std::vector<double>(4, 0.5), std::vector<double>(8, 0.5)});
  CHECK_THROWS_AS(build_fk(inst, CustomProposal{other}), CoverageError);
}

TEST_CASE("coverage bound: naive equals L, optimal within 1+eps, uniform matches a scan") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto inst = random_instance({3, 3, 1.0, 0.2, 0.05, seed});
    const auto d = diagnostics(inst);
    CHECK(proposal_coverage_bound(inst, NaiveProposal{}) == doctest::Approx(d.L).epsilon(1e-14));
    CHECK(proposal_coverage_bound(inst, OptimalProposal{}) <= (1 + d.eps) * (1 + 1e-12));
    const auto uni = uniform_table(inst.shape());
    double scan = 1.0;
    for (int t = 1; t <= 3; ++t)
      for (std::size_t j = 0; j < inst.shape().count(t); ++j) {
        auto s = bf::digits(j, t, 3);
        const double v = bf::twist(inst, s);
        const int c = s.back();
        s.pop_back();
        const double w = inst.reference.row(bf::node_of(s, 3))[static_cast<std::size_t>(c)] * 3.0 * v /
                         bf::twist(inst, s);
        scan = std::max({scan, w, 1.0 / w});
      }
    CHECK(proposal_coverage_bound(inst, CustomProposal{uni}) == doctest::Approx(scan).epsilon(1e-14));
  }
}

TEST_CASE("particle budget formulas") {
  CHECK(particle_budget({2.0, 0.0, 3, 0.1}, BudgetRegime::naive_local) == 960);
  CHECK(particle_budget({2.0, 0.0, 3, 0.1}, BudgetRegime::naive_global) == 960);
  CHECK(particle_budget({2.0, 0.0, 3, 0.1}, BudgetRegime::arbitrary_local) == 960);
  CHECK(particle_budget({1.0, 0.0, 3, 0.1}, BudgetRegime::optimal_local) == 1);
  CHECK_THROWS_AS(particle_budget({2.0, 0.0, 3, 0.0}, BudgetRegime::naive_local), Error);
  CHECK_THROWS_AS(particle_budget({2.0, 0.0, 3, 1.0}, BudgetRegime::naive_local), Error);
  CHECK_THROWS_AS(particle_budget({2.0, 0.0, 1, 0.1}, BudgetRegime::naive_local), Error);
  CHECK(parse_budget_regime("arbitrary-global") == BudgetRegime::arbitrary_global);
  CHECK(particle_tv_bound({2.0, 0.0, 3, 0.1}, BudgetRegime::naive_local, 960) == doctest::Approx(0.1));
}

TEST_CASE("particle budget is monotone in its inputs") {
  for (auto regime : {BudgetRegime::naive_local, BudgetRegime::optimal_local, BudgetRegime::arbitrary_local,
                      BudgetRegime::naive_global, BudgetRegime::arbitrary_global}) {
    std::int64_t prev = 0;
    for (double L : {1.0, 1.2, 1.5, 2.0}) {
      const auto n = particle_budget({L, 0.1, 3, 0.1}, regime);
      CHECK(n >= prev);
      prev = n;
    }
    prev = 0;
    for (double e : {0.0, 0.05, 0.1, 0.3}) {
      const auto n = particle_budget({1.5, e, 3, 0.1}, regime);
      CHECK(n >= prev);
      prev = n;
    }
    prev = 0;
    for (int T : {2, 3, 5, 8}) {
      const auto n = particle_budget({1.5, 0.1, T, 0.1}, regime);
      CHECK(n >= prev);
      prev = n;
    }
    prev = std::numeric_limits<std::int64_t>::max();
    for (double d : {0.01, 0.05, 0.2, 0.9}) {
      const auto n = particle_budget({1.5, 0.1, 3, d}, regime);
      CHECK(n <= prev);
      prev = n;
    }
  }
}

TEST_CASE("value to go is the product of future potentials in expectation") {
  const auto inst = random_instance({2, 3, 1.0, 0.3, 0.05, 2});
  const auto fk = build_fk(inst, NaiveProposal{});
  // Under the naive proposal Q_{p,T+1}(1) = V(s_{1:T}) expectation / V(s_{1:p-1}).
  const auto h = fk.value_to_go(1);
  for (std::size_t j = 0; j < h.size(); ++j) {
    const auto s = bf::digits(j, 1, 2);
    double e = 0.0;
    for (std::size_t leaf = 0; leaf < inst.shape().leaves(); ++leaf) {
      const auto full = bf::digits(leaf, 3, 2);
      if (full[0] != s[0]) continue;
      e += bf::path_prob(inst, full) / inst.reference.row({0, 0})[static_cast<std::size_t>(s[0])] *
           inst.twist.terminal()[leaf];
    }
    CHECK(h[j] == doctest::Approx(e).epsilon(1e-13));
  }
}

}  // TEST_SUITE
