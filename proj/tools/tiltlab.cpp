#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "tiltlab/harness.hpp"
#include "tiltlab/lowerbound.hpp"
#include "tiltlab/mh.hpp"
#include "tiltlab/oracle.hpp"

namespace fs = std::filesystem;
using namespace tiltlab;

namespace {

/// Relative output paths resolve against $TILTLAB_OUT_DIR when it is set.
fs::path output_path(const std::string& out) {
  fs::path p = out;
  if (const char* dir = std::getenv("TILTLAB_OUT_DIR"); dir && *dir && p.is_relative()) p = fs::path(dir) / p;
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  return p;
}

/// Writes to --out when given, otherwise to stdout.
void emit(const std::string& out, const std::string& text) {
  if (out.empty()) {
    std::cout << text;
    return;
  }
  const auto p = output_path(out);
  std::ofstream f(p);
  if (!f) throw Error("cannot write " + p.string());
  f << text;
}

struct SamplerFlags {
  std::string kind = "smc", proposal = "naive", scheme = "multinomial", normalizer = "exact", mode = "exact-tilt";
  std::size_t N = 16, M = 0, H = 10, mc_samples = 0;
  double rs_threshold = 0.0, delta = 0.1;

  void add(CLI::App* app) {
    app->add_option("--sampler", kind, "smc | spgsmc | pool-mh | rejection-mh")->capture_default_str();
    app->add_option("--proposal", proposal, "naive | optimal (smc)")->capture_default_str();
    app->add_option("--scheme", scheme, "multinomial | stratified (smc)")->capture_default_str();
    app->add_option("--normalizer", normalizer, "exact | monte-carlo (smc)")->capture_default_str();
    app->add_option("--mode", mode, "exact-tilt | pool (spgsmc)")->capture_default_str();
    app->add_option("--N", N, "particles (smc)")->capture_default_str();
    app->add_option("--M", M, "pool size; 0 selects the default")->capture_default_str();
    app->add_option("--H", H, "chain length (MH)")->capture_default_str();
    app->add_option("--mc-samples", mc_samples, "normalizer samples; 0 selects exact (rejection-mh)")
        ->capture_default_str();
    app->add_option("--rs-threshold", rs_threshold, "rejection threshold; 0 selects the default")
        ->capture_default_str();
    app->add_option("--delta", delta, "failure budget")->capture_default_str();
  }

  SamplerSpec spec() const {
    SamplerSpec s;
    s.kind = parse_sampler_kind(kind);
    s.proposal = parse_proposal_tag(proposal);
    s.scheme = parse_resample_scheme(scheme);
    if (normalizer == "exact") s.normalizer = NormalizerMode::exact;
    else if (normalizer == "monte-carlo") s.normalizer = NormalizerMode::monte_carlo;
    else throw Error("unknown normalizer mode '" + normalizer + "'");
    if (mode == "exact-tilt") s.mode = SpgsmcMode::Kind::exact_tilt;
    else if (mode == "pool") s.mode = SpgsmcMode::Kind::pool;
    else throw Error("unknown spgsmc mode '" + mode + "'");
    s.N = N;
    s.M = M;
    s.H = H;
    s.mc_samples = mc_samples;
    s.rs_threshold = rs_threshold;
    s.delta = delta;
    return s;
  }
};

nlohmann::json diagnostics_json(const Instance& instance, ProposalTag proposal) {
  const auto d = diagnostics(instance, proposal);
  const int T = instance.shape().T;
  nlohmann::json q = nlohmann::json::array();
  for (int p = 1; p <= T + 1; ++p) {
    nlohmann::json row = nlohmann::json::array();
    for (int n = p; n <= T + 1; ++n) row.push_back(d.q(p, n));
    q.push_back(row);
  }
  nlohmann::json j = {{"id", instance.id},
                      {"B", instance.shape().B},
                      {"T", T},
                      {"proposal", to_string(d.proposal)},
                      {"L", d.L},
                      {"eps", d.eps},
                      {"eps_g", d.eps_g},
                      {"c_act", d.c_act},
                      {"q", q}};
  if (const auto hard = parse_hard_id(instance.id)) {
    j["hidden_prefix"] = hard->u->to_string();
    j["mass_Au"] = set_mass(target_distribution(instance), favored_leaves(instance.shape(), *hard->u));
    j["mass_Au_closed_form"] = hard_mass_closed_form(hard->B, hard->r, hard->m);
  }
  return j;
}

void print_records(const std::vector<ResultRecord>& records) {
  std::cout << csv_header() << '\n';
  for (const auto& r : records) std::cout << to_csv_row(r) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reward-tilted sampling laboratory"};
  app.require_subcommand(1, 1);
  app.get_formatter()->column_width(36);

  std::uint64_t seed = 0;
  std::string out;
  unsigned threads = 1;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "random seed")->capture_default_str();
    sub->add_option("--out", out, "output path (relative paths honor TILTLAB_OUT_DIR)");
    sub->add_option("--threads", threads, "worker threads")->capture_default_str();
  };

  // gen
  auto* gen = app.add_subcommand("gen", "Write a random or hard instance");
  common(gen);
  bool hard = false;
  int B = 2, T = 3, m = 1;
  double spread = 1.0, gamma = 0.0, row_floor = 0.05, r = 2.0;
  std::string u;
  gen->add_flag("--hard", hard, "hard family instead of a random instance");
  gen->add_option("--B", B, "alphabet size")->capture_default_str();
  gen->add_option("--T", T, "horizon (random)")->capture_default_str();
  gen->add_option("--spread", spread, "log-reward spread (random)")->capture_default_str();
  gen->add_option("--gamma", gamma, "twist perturbation (random)")->capture_default_str();
  gen->add_option("--row-floor", row_floor, "smallest unnormalized row entry (random)")->capture_default_str();
  gen->add_option("--r", r, "reward ratio (hard)")->capture_default_str();
  gen->add_option("--m", m, "hidden block length (hard)")->capture_default_str();
  gen->add_option("--u", u, "hidden prefix, e.g. 0.1 (hard; drawn from the seed when absent)");

  // diag
  auto* diag = app.add_subcommand("diag", "Print instance diagnostics as JSON");
  common(diag);
  std::string instance_path, proposal = "naive";
  diag->add_option("--instance", instance_path, "instance file")->required();
  diag->add_option("--proposal", proposal, "naive | optimal")->capture_default_str();

  // oracle
  auto* oracle = app.add_subcommand("oracle", "Write an exact distribution as CSV");
  common(oracle);
  std::string law = "target";
  int length = 0;
  oracle->add_option("--instance", instance_path, "instance file")->required();
  oracle->add_option("--law", law, "target | intermediate | spgsmc")->capture_default_str();
  oracle->add_option("--t", length, "prefix length (intermediate)");

  // sample
  auto* sample = app.add_subcommand("sample", "Run one sampler R times and print the empirical TV");
  common(sample);
  SamplerFlags flags;
  std::size_t R = 1000;
  sample->add_option("--instance", instance_path, "instance file")->required();
  sample->add_option("--R", R, "replications")->capture_default_str();
  flags.add(sample);

  // sweep, mh-curve
  auto* sweep = app.add_subcommand("sweep", "Run a configured parameter sweep");
  common(sweep);
  std::string config_path;
  sweep->add_option("--config", config_path, "YAML experiment config")->required();
  auto* curve = app.add_subcommand("mh-curve", "TV against chain length for an MH sampler");
  common(curve);
  std::size_t h_max = 10;
  std::string trace_path;
  curve->add_option("--config", config_path, "YAML experiment config")->required();
  curve->add_option("--H-max", h_max, "largest chain length")->capture_default_str();
  curve->add_option("--trace", trace_path, "CSV trace of one chain of length H-max");

  // verify
  auto* verify = app.add_subcommand("verify", "Check sweep records against their bounds");
  common(verify);
  std::string records_path, metadata;
  verify->add_option("--records", records_path, "results CSV")->required();
  verify->add_option("--metadata", metadata, "diagnostics JSON (default: next to the CSV)");

  // lb-queries
  auto* lb = app.add_subcommand("lb-queries", "Queries until a hard instance's favored set is hit");
  common(lb);
  std::string hit_sampler = "uniform-search";
  std::size_t reps = 200, max_runs = 100000, lb_N = 4, lb_M = 4;
  double quantile = 0.5;
  lb->add_option("--B", B, "alphabet size")->capture_default_str();
  lb->add_option("--r", r, "reward ratio")->capture_default_str();
  lb->add_option("--m", m, "hidden block length")->capture_default_str();
  lb->add_option("--u", u, "hidden prefix (drawn from the seed when absent)");
  lb->add_option("--sampler", hit_sampler, "uniform-search | spgsmc | smc")->capture_default_str();
  lb->add_option("--N", lb_N, "particles (smc)")->capture_default_str();
  lb->add_option("--M", lb_M, "pool size (spgsmc)")->capture_default_str();
  lb->add_option("--reps", reps, "independent repetitions")->capture_default_str();
  lb->add_option("--quantile", quantile, "reported quantile")->capture_default_str();
  lb->add_option("--max-runs", max_runs, "sampler runs per repetition before giving up")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  const auto* sub = app.get_subcommands().front();
  try {
    if (sub == gen) {
      Instance inst = [&] {
        if (hard) {
          HardInstanceParams p{B, r, m, std::nullopt, seed};
          if (!u.empty()) p.u = Prefix::parse(u);
          return make_hard_instance(p);
        }
        return random_instance({B, T, spread, gamma, row_floor, seed});
      }();
      emit(out, serialize_instance(inst));
      if (!out.empty()) std::cout << inst.id << '\n';
    } else if (sub == diag) {
      const auto inst = read_instance(instance_path);
      emit(out, diagnostics_json(inst, parse_proposal_tag(proposal)).dump(2) + "\n");
    } else if (sub == oracle) {
      const auto inst = read_instance(instance_path);
      if (law == "target") emit(out, target_distribution(inst).to_csv());
      else if (law == "spgsmc") emit(out, spgsmc_exact_law(inst).to_csv());
      else if (law == "intermediate") emit(out, intermediate_target(inst, length).to_csv());
      else throw Error("unknown law '" + law + "'");
    } else if (sub == sample) {
      const auto inst = read_instance(instance_path);
      const auto spec = resolve_defaults(flags.spec(), inst);
      const auto emp = estimate_output_law(spec, inst, R, RandomStream(seed), threads);
      const auto bound = theoretical_bound(spec, inst);
      nlohmann::json j = {{"instance_id", inst.id},
                          {"sampler", describe(spec)},
                          {"N", spec.N},
                          {"M", spec.M},
                          {"H", spec.H},
                          {"R", R},
                          {"seed", seed},
                          {"tv", tv_distance(emp.law, target_distribution(inst))},
                          {"se", tv_standard_error(emp)},
                          {"bound", std::isnan(bound.value) ? nlohmann::json(nullptr) : nlohmann::json(bound.value)},
                          {"bound_name", bound.name},
                          {"base_queries", emp.base_queries},
                          {"reward_queries", emp.reward_queries},
                          {"rejection_failures", emp.failures}};
      std::cout << j.dump(2) << '\n';
      if (!out.empty()) emit(out, emp.law.to_csv());
    } else if (sub == sweep || sub == curve) {
      auto cfg = load_config(config_path);
      if (sweep->count("--seed") || curve->count("--seed")) cfg.seed = seed;
      if (sweep->count("--threads") || curve->count("--threads")) cfg.threads = threads;
      if (!out.empty()) cfg.output = output_path(out);
      else if (!cfg.output.empty()) cfg.output = output_path(cfg.output.string());
      if (sub == curve) {
        if (cfg.sampler.kind != SamplerKind::pool_mh && cfg.sampler.kind != SamplerKind::rejection_mh)
          throw Error("mh-curve needs an MH sampler");
        if (h_max == 0) throw Error("--H-max must be at least 1");
        cfg.grid_H.clear();
        for (std::size_t h = 1; h <= h_max; ++h) cfg.grid_H.push_back(h);
      }
      print_records(run_sweep(cfg));
      if (sub == curve && !trace_path.empty()) {
        const auto inst = load_instance(cfg.instance);
        const auto spec = resolve_defaults(cfg.sampler, inst);
        const auto p = output_path(trace_path);
        std::ofstream trace(p);
        if (!trace) throw Error("cannot write " + p.string());
        trace << "iteration,accepted,log_w,trajectory\n";
        MHChainConfig mc{h_max, spec.M, spec.mc_samples, spec.rs_threshold, spec.delta, &trace};
        RandomStream rng = RandomStream(cfg.seed).split(0xC0FFEE);
        if (spec.kind == SamplerKind::pool_mh) pool_mh_run(inst, mc, rng);
        else rejection_mh_run(inst, mc, rng);
      }
    } else if (sub == verify) {
      const auto records = read_records(records_path);
      if (records.empty()) throw Error("no records");
      const fs::path meta = metadata.empty() ? metadata_path(records_path) : fs::path(metadata);
      std::ifstream in(meta);
      if (!in) throw Error("missing diagnostics: cannot read " + meta.string());
      const auto j = nlohmann::json::parse(in);
      const auto report = verify_report(records, j.contains("diagnostics") ? j["diagnostics"] : j);
      std::cout << report.to_text();
      if (!out.empty()) emit(out, report.to_text());
      return report.all_pass() ? 0 : 2;
    } else if (sub == lb) {
      HardInstanceParams p{B, r, m, std::nullopt, seed};
      if (!u.empty()) p.u = Prefix::parse(u);
      const auto inst = make_hard_instance(p);
      const auto mask = favored_leaves(inst.shape(), hidden_prefix(p));
      RandomStream rng(seed);
      const auto res = queries_to_hit(inst, {parse_hit_sampler(hit_sampler), lb_N, lb_M}, mask, quantile, reps, rng,
                                      max_runs);
      nlohmann::json j = {{"instance_id", inst.id},
                          {"sampler", hit_sampler},
                          {"repetitions", reps},
                          {"quantile_level", quantile},
                          {"quantile", std::isinf(res.quantile) ? nlohmann::json(nullptr) : nlohmann::json(res.quantile)},
                          {"exhausted", res.exhausted},
                          {"queries", res.queries},
                          {"mass_Au", hard_mass_closed_form(p.B, p.r, p.m)},
                          {"seed", seed}};
      std::cout << j.dump(2) << '\n';
      if (!out.empty()) emit(out, j.dump(2) + "\n");
    }
  } catch (const std::exception& e) {
    std::cerr << "tiltlab " << sub->get_name() << ": " << e.what() << '\n';
    return 1;
  }
  return 0;
}
