#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "tiltlab/harness.hpp"
#include "tiltlab/mh.hpp"
#include "tiltlab/oracle.hpp"

using namespace tiltlab;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "tiltlab_harness_tests";
  fs::create_directories(dir);
  return dir / name;
}

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.instance.random = RandomInstanceSpec{2, 3, 1.5, 0.2, 0.05, 4};
  c.sampler.kind = SamplerKind::smc;
  c.grid_N = {4, 16, 64};
  c.R = 2000;
  c.seed = 17;
  return c;
}

ResultRecord record(std::size_t N, double tv, double se, double bound) {
  ResultRecord r;
  r.instance_id = "inst";
  r.sampler = "smc/naive/multinomial";
  r.N = N;
  r.tv = tv;
  r.se = se;
  r.bound = bound;
  r.bound_name = "naive-local";
  return r;
}

const nlohmann::json kDiag = {{"inst", {{"L", 2.0}, {"pool_mh_ratio_bound", {{"4", 1.5}}}}}};

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("one replication gives a point mass") {
  const auto inst = random_instance({2, 3, 1.0, 0.2, 0.05, 1});
  SamplerSpec s;
  s.N = 4;
  const auto law = estimate_output_law(s, inst, 1, RandomStream(3));
  int ones = 0;
  for (double p : law.law.probs()) {
    CHECK((p == 0.0 || p == 1.0));
    ones += p == 1.0;
  }
  CHECK(ones == 1);
  CHECK(tv_standard_error(law) == 0.0);
}

TEST_CASE("deterministic instance gives an exact point mass") {
  const Shape shape{2, 2};
  ReferenceModel ref(shape, {{0.0, 1.0}, {1.0, 0.0, 1.0, 0.0}});
  const Instance inst("point", ref, optimal_twist(ref, std::vector<double>{1.0, 2.0, 3.0, 4.0}));
  for (auto kind : {SamplerKind::smc, SamplerKind::spgsmc}) {
    SamplerSpec s;
    s.kind = kind;
    s.N = 3;
    const auto law = estimate_output_law(s, inst, 500, RandomStream(4));
    CHECK(law.law[2] == 1.0);
    CHECK(tv_standard_error(law) == 0.0);
  }
}

TEST_CASE("standard error of a fair two-cell law") {
  const TrajectoryDistribution law(Shape{2, 1}, 1, {0.5, 0.5});
  const auto se = cell_standard_errors(law, 10000);
  CHECK(se[0] == doctest::Approx(0.005).epsilon(1e-15));
  CHECK(se[1] == doctest::Approx(0.005).epsilon(1e-15));
}

TEST_CASE("naive smc replicate query totals") {
  const auto inst = random_instance({2, 2, 1.0, 0.2, 0.05, 2});
  SamplerSpec s;
  s.N = 16;
  const auto law = estimate_output_law(s, inst, 20000, RandomStream(5), 4);
  CHECK(law.base_queries == 640000);
  CHECK(law.reward_queries == 20000u * 16u * 3u);
  CHECK(tv_distance(law.law, target_distribution(inst)) <= 3 * tv_standard_error(law) + 0.02);
}

TEST_CASE("estimates do not depend on the thread count") {
  const auto inst = random_instance({3, 3, 1.0, 0.2, 0.05, 3});
  SamplerSpec s;
  s.kind = SamplerKind::pool_mh;
  s.M = 3;
  s.H = 4;
  const auto a = estimate_output_law(s, inst, 3000, RandomStream(6), 1);
  const auto b = estimate_output_law(s, inst, 3000, RandomStream(6), 5);
  CHECK(std::equal(a.law.probs().begin(), a.law.probs().end(), b.law.probs().begin()));
  CHECK(a.base_queries == b.base_queries);
}

TEST_CASE("empirical law of the guided sampler converges to its exact law") {
  const auto inst = random_instance({3, 2, 1.0, 0.3, 0.05, 7});
  const auto exact = spgsmc_exact_law(inst);
  SamplerSpec s;
  s.kind = SamplerKind::spgsmc;
  for (std::size_t R : {1000u, 10000u, 100000u}) {
    const auto law = estimate_output_law(s, inst, R, RandomStream(R), 4);
    CHECK(tv_distance(law.law, exact) <= 2.0 * std::sqrt(9.0 / static_cast<double>(R)));
  }
}

TEST_CASE("sweep with one cell yields one record") {
  auto c = small_config();
  c.grid_N = {8};
  const auto records = run_sweep(c);
  REQUIRE(records.size() == 1);
  CHECK(records[0].N == 8);
  CHECK(records[0].tv >= 0.0);
  CHECK(records[0].tv <= 1.0);
  CHECK(records[0].se >= 0.0);
  CHECK(records[0].bound_name != "");
}

TEST_CASE("sweep over N yields records with shared instance and distinct N") {
  auto c = small_config();
  c.output = scratch("sweep_n.csv");
  std::vector<ResultRecord> streamed;
  const auto records = run_sweep(c, [&](const ResultRecord& r) { streamed.push_back(r); });
  REQUIRE(records.size() == 3);
  CHECK(streamed.size() == 3);
  CHECK(records[0].instance_id == records[2].instance_id);
  CHECK(records[0].N == 4);
  CHECK(records[1].N == 16);
  CHECK(records[2].N == 64);
  const auto back = read_records(c.output);
  REQUIRE(back.size() == 3);
  CHECK(back[1].tv == records[1].tv);
  CHECK(back[1].base_queries == records[1].base_queries);
  std::ifstream meta(metadata_path(c.output));
  const auto j = nlohmann::json::parse(meta);
  CHECK(j["diagnostics"].contains(records[0].instance_id));
  CHECK(j["config"]["seed"] == 17);
  CHECK(j.contains("versions"));
}

TEST_CASE("sweeps are reproducible") {
  auto c = small_config();
  const auto a = run_sweep(c);
  c.threads = 3;
  const auto b = run_sweep(c);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto x = a[i], y = b[i];
    x.wall_clock_s = y.wall_clock_s = 0.0;
    CHECK(to_csv_row(x) == to_csv_row(y));
  }
}

TEST_CASE("pool chain error does not grow with chain length") {
  ExperimentConfig c;
  c.instance.random = RandomInstanceSpec{2, 3, 2.0, 0.3, 0.05, 8};
  c.sampler.kind = SamplerKind::pool_mh;
  c.sampler.M = 2;
  c.grid_H = {1, 2, 4, 8};
  c.R = 20000;
  c.threads = 4;
  const auto records = run_sweep(c);
  for (std::size_t i = 0; i + 1 < records.size(); ++i)
    CHECK(records[i + 1].tv <= records[i].tv + 3 * std::max(records[i].se, records[i + 1].se));
  CHECK(records[0].bound_name == "pool-mh-contraction");
}

TEST_CASE("unwritable output path is an error") {
  auto c = small_config();
  std::ofstream(scratch("blocker")) << "x";
  c.output = scratch("blocker") / "out.csv";
  CHECK_THROWS_AS(run_sweep(c), Error);
}

TEST_CASE("config parsing") {
  const auto c = parse_config(R"(
instance:
  random: {B: 3, T: 4, gamma: 0.02, seed: 5}
sampler:
  kind: pool-mh
  M: 6
grid:
  H: [1, 2, 4]
replications: 500
seed: 9
threads: 2
output: out/results.csv
)",
                              "/base");
  REQUIRE(c.instance.random);
  CHECK(c.instance.random->B == 3);
  CHECK(c.instance.random->gamma == 0.02);
  CHECK(c.sampler.kind == SamplerKind::pool_mh);
  CHECK(c.sampler.M == 6);
  CHECK(c.grid_H == std::vector<std::size_t>{1, 2, 4});
  CHECK(c.R == 500);
  CHECK(c.seed == 9);
  CHECK(c.threads == 2);
  CHECK(c.output == fs::path("/base/out/results.csv"));
  CHECK(config_to_json(c)["sampler"]["kind"] == "pool-mh");

  CHECK_THROWS_AS(parse_config("instance: {random: {}}\nsampler: {kind: smc}\ngrid: {}\n"), Error);
  CHECK_THROWS_AS(parse_config("instance: {random: {}}\nsampler: {kind: smc}\ngrid: {N: [1]}\nreplications: 0\n"),
                  Error);
  CHECK_THROWS_AS(parse_config("instance: {random: {}}\nsampler: {knd: smc}\ngrid: {N: [1]}\n"), Error);
  CHECK_THROWS_AS(parse_config("instance: {random: {}}\nsampler: {kind: bogus}\ngrid: {N: [1]}\n"), Error);
  CHECK_THROWS_AS(parse_config("instance: [\n"), ParseError);
  const auto hard = parse_config("instance: {hard: {B: 2, r: 2, m: 1, u: '0.1'}}\nsampler: {kind: spgsmc}\ngrid: {N: [1]}\n");
  CHECK(load_instance(hard.instance).id == "hard;B=2;r=2;m=1;u=0.1");
}

TEST_CASE("csv rows round trip with quoting") {
  const auto path = scratch("quoted.csv");
  ResultRecord r = record(4, 0.125, 0.01, std::numeric_limits<double>::quiet_NaN());
  r.instance_id = "odd,\"id\"";
  r.bound_name = "none";
  r.base_queries = 123;
  std::ofstream(path) << csv_header() << '\n' << to_csv_row(r) << '\n';
  const auto back = read_records(path);
  REQUIRE(back.size() == 1);
  CHECK(back[0].instance_id == r.instance_id);
  CHECK(std::isnan(back[0].bound));
  CHECK(back[0].tv == 0.125);
  CHECK(back[0].base_queries == 123);
  std::ofstream(path) << "wrong,header\n";
  CHECK_THROWS_AS(read_records(path), ParseError);
  CHECK(metadata_path("a/b/results.csv") == fs::path("a/b/results.json"));
}

TEST_CASE("bounds attached to each sampler") {
  const auto inst = random_instance({2, 3, 1.0, 0.1, 0.05, 9});
  SamplerSpec s;
  s.N = 100;
  const auto naive = theoretical_bound(s, inst);
  CHECK((naive.name == "naive-local" || naive.name == "naive-global"));
  CHECK(naive.value > 0.0);
  s.proposal = ProposalTag::optimal;
  CHECK(theoretical_bound(s, inst).name == "optimal-local");
  s.kind = SamplerKind::spgsmc;
  const auto sp = theoretical_bound(s, inst);
  CHECK(sp.name == "spgsmc-local");
  CHECK(sp.value == doctest::Approx(2 * 3 * diagnostics(inst).eps));
  s.mode = SpgsmcMode::Kind::pool;
  CHECK(std::isnan(theoretical_bound(s, inst).value));
  s.kind = SamplerKind::pool_mh;
  s.M = 4;
  s.H = 1;
  CHECK(theoretical_bound(s, inst).value == 1.0);
  s.kind = SamplerKind::rejection_mh;
  s.H = 5;
  const auto exact = theoretical_bound(s, inst);
  s.mc_samples = 100000;
  const auto mc = theoretical_bound(s, inst);
  CHECK(mc.value > exact.value);
  CHECK(mc.name == "rejection-mh-perturbed");
}

TEST_CASE("defaults are filled from the instance") {
  const auto inst = random_instance({2, 3, 1.0, 0.1, 0.05, 9});
  SamplerSpec s;
  s.kind = SamplerKind::pool_mh;
  const auto r = resolve_defaults(s, inst);
  CHECK(r.M == default_pool_size(activation_constant(inst), 3, 0.1));
  s.kind = SamplerKind::smc;
  s.N = 0;
  CHECK_THROWS_AS(resolve_defaults(s, inst), Error);
}

TEST_CASE("verify flags a record far above its bound") {
  const auto bad = verify_report({record(16, 0.2 + 10 * 0.01, 0.01, 0.2)}, kDiag);
  CHECK_FALSE(bad.all_pass());
  const auto good = verify_report({record(16, 0.1, 0.01, 0.2)}, kDiag);
  CHECK(good.all_pass());
  CHECK(good.to_text().find("PASS") != std::string::npos);
}

TEST_CASE("verify fits the slope of noiseless inverse-N data") {
  std::vector<ResultRecord> rs;
  for (std::size_t N : {4u, 16u, 64u, 256u}) rs.push_back(record(N, 0.8 / static_cast<double>(N), 1e-6, 1.0));
  const auto report = verify_report(rs, kDiag);
  const Check* slope = nullptr;
  for (const auto& c : report.checks)
    if (c.name.rfind("N-sweep", 0) == 0) slope = &c;
  REQUIRE(slope);
  CHECK(slope->conclusive);
  CHECK(slope->value == doctest::Approx(-1.0).epsilon(0.01));
  CHECK(report.all_pass());
  std::vector<double> x{1, 2, 3}, y{2, 4, 6};
  CHECK(fit_slope(x, y) == doctest::Approx(2.0));
}

TEST_CASE("verify checks chain-length sweeps") {
  std::vector<ResultRecord> rs;
  for (std::size_t H : {1u, 2u, 3u, 4u}) {
    ResultRecord r = record(0, 0.5 * std::pow(0.3, static_cast<double>(H - 1)), 1e-4, 1.0);
    r.sampler = "pool-mh";
    r.M = 4;
    r.H = H;
    rs.push_back(r);
  }
  auto report = verify_report(rs, kDiag);
  CHECK(report.all_pass());
  rs[2].tv = 0.4;
  report = verify_report(rs, kDiag);
  CHECK_FALSE(report.all_pass());
}

TEST_CASE("verify needs records and diagnostics") {
  CHECK_THROWS_WITH_AS(verify_report({}, kDiag), "no records", Error);
  CHECK_THROWS_AS(verify_report({record(4, 0.1, 0.01, 1.0)}, nlohmann::json::object()), Error);
}

}  // TEST_SUITE
