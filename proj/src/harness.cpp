#include "tiltlab/harness.hpp"

#include <Eigen/Core>
#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include "tiltlab/mh.hpp"
#include "tiltlab/oracle.hpp"

namespace tiltlab {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fmt_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

double parse_double(const std::string& s) {
  if (s == "nan") return kNaN;
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  std::size_t pos = 0;
  const double x = std::stod(s, &pos);
  if (pos != s.size()) throw ParseError("malformed number '" + s + "'");
  return x;
}

std::uint64_t parse_u64(const std::string& s) {
  std::size_t pos = 0;
  const auto x = std::stoull(s, &pos);
  if (pos != s.size()) throw ParseError("malformed integer '" + s + "'");
  return x;
}

std::string normalizer_name(NormalizerMode mode) {
  return mode == NormalizerMode::exact ? "exact" : "monte-carlo";
}

NormalizerMode parse_normalizer(const std::string& text) {
  if (text == "exact") return NormalizerMode::exact;
  if (text == "monte-carlo") return NormalizerMode::monte_carlo;
  throw Error("unknown normalizer mode '" + text + "'");
}

std::string mode_name(SpgsmcMode::Kind kind) { return kind == SpgsmcMode::Kind::pool ? "pool" : "exact-tilt"; }

SpgsmcMode::Kind parse_mode(const std::string& text) {
  if (text == "exact-tilt") return SpgsmcMode::Kind::exact_tilt;
  if (text == "pool") return SpgsmcMode::Kind::pool;
  throw Error("unknown spgsmc mode '" + text + "'");
}

bool uses_pool(const SamplerSpec& s) {
  return s.kind == SamplerKind::pool_mh || (s.kind == SamplerKind::spgsmc && s.mode == SpgsmcMode::Kind::pool);
}

bool uses_mc(const SamplerSpec& s) {
  return (s.kind == SamplerKind::rejection_mh && s.mc_samples > 0) ||
         (s.kind == SamplerKind::smc && s.normalizer == NormalizerMode::monte_carlo);
}

bool is_mh(const SamplerSpec& s) { return s.kind == SamplerKind::pool_mh || s.kind == SamplerKind::rejection_mh; }

}  // namespace

std::string to_string(SamplerKind kind) {
  switch (kind) {
    case SamplerKind::smc: return "smc";
    case SamplerKind::spgsmc: return "spgsmc";
    case SamplerKind::pool_mh: return "pool-mh";
    case SamplerKind::rejection_mh: return "rejection-mh";
  }
  return "?";
}

SamplerKind parse_sampler_kind(std::string_view text) {
  for (auto k : {SamplerKind::smc, SamplerKind::spgsmc, SamplerKind::pool_mh, SamplerKind::rejection_mh})
    if (text == to_string(k)) return k;
  throw Error("unknown sampler '" + std::string(text) + "'");
}

std::string describe(const SamplerSpec& spec) {
  switch (spec.kind) {
    case SamplerKind::smc: {
      std::string s = "smc/" + to_string(spec.proposal) + "/" + to_string(spec.scheme);
      if (spec.normalizer == NormalizerMode::monte_carlo) s += "/monte-carlo";
      return s;
    }
    case SamplerKind::spgsmc: return "spgsmc/" + mode_name(spec.mode);
    case SamplerKind::pool_mh: return "pool-mh";
    case SamplerKind::rejection_mh: return spec.mc_samples > 0 ? "rejection-mh/monte-carlo" : "rejection-mh";
  }
  return "?";
}

SamplerSpec resolve_defaults(const SamplerSpec& spec, const Instance& instance) {
  SamplerSpec s = spec;
  if (!(s.delta > 0.0 && s.delta < 1.0)) throw Error("sampler delta must lie in (0,1)");
  if (s.kind == SamplerKind::smc && s.N == 0) throw Error("smc needs N >= 1");
  if (is_mh(s) && s.H == 0) throw Error("MH chain needs H >= 1");
  if (s.kind == SamplerKind::smc && s.proposal == ProposalTag::custom)
    throw Error("the harness runs naive and optimal proposals only");
  if (s.kind == SamplerKind::smc && s.normalizer == NormalizerMode::monte_carlo && s.proposal != ProposalTag::optimal)
    throw Error("Monte-Carlo normalizers apply to the optimal proposal only");
  const bool need_c = (uses_pool(s) && s.M == 0) || (uses_mc(s) && s.kind == SamplerKind::smc && s.mc_samples == 0) ||
                      ((uses_mc(s) || s.kind == SamplerKind::rejection_mh) && s.rs_threshold == 0.0);
  if (!need_c) return s;
  const double c = activation_constant(instance);
  if (uses_pool(s) && s.M == 0) s.M = default_pool_size(c, instance.shape().T, s.delta);
  if (s.kind == SamplerKind::smc && s.normalizer == NormalizerMode::monte_carlo) {
    if (s.mc_samples == 0) s.mc_samples = expectation_sample_size(c, s.delta);
    if (s.rs_threshold == 0.0) s.rs_threshold = default_rs_threshold(c);
  }
  if (s.kind == SamplerKind::rejection_mh && s.rs_threshold == 0.0) s.rs_threshold = default_rs_threshold(c);
  return s;
}

SamplerContext make_context(const SamplerSpec& spec, const Instance& instance) {
  SamplerContext ctx;
  ctx.instance = &instance;
  if (spec.kind == SamplerKind::smc) {
    const Proposal p = spec.proposal == ProposalTag::optimal ? Proposal{OptimalProposal{}} : Proposal{NaiveProposal{}};
    ctx.fk.emplace(build_fk(instance, p));
  }
  if (spec.kind == SamplerKind::rejection_mh && spec.mc_samples == 0) ctx.normalizers = lookahead_normalizers(instance);
  return ctx;
}

SamplerOutput run_sampler(const SamplerSpec& spec, const SamplerContext& ctx, RandomStream& rng) {
  const Instance& instance = *ctx.instance;
  switch (spec.kind) {
    case SamplerKind::smc: {
      SmcOptions o;
      o.N = spec.N;
      o.scheme = spec.scheme;
      o.normalizer = spec.normalizer;
      o.mc_samples = spec.mc_samples;
      o.rs_threshold = spec.rs_threshold;
      o.delta = spec.delta;
      return smc_run(*ctx.fk, o, rng);
    }
    case SamplerKind::spgsmc: return spgsmc_run(instance, SpgsmcMode{spec.mode, spec.M}, rng);
    case SamplerKind::pool_mh: {
      MHChainConfig cfg;
      cfg.H = spec.H;
      cfg.M = spec.M;
      TabularAccess access(instance);
      return pool_mh_run(access, cfg, rng);
    }
    case SamplerKind::rejection_mh: {
      MHChainConfig cfg;
      cfg.H = spec.H;
      cfg.mc_samples = spec.mc_samples;
      cfg.rs_threshold = spec.rs_threshold;
      cfg.delta = spec.delta;
      return rejection_mh_run(instance, cfg, rng, ctx.normalizers.empty() ? nullptr : &ctx.normalizers);
    }
  }
  throw Error("unknown sampler kind");
}

EmpiricalLaw estimate_output_law(const SamplerSpec& spec, const Instance& instance, std::size_t R,
                                 const RandomStream& rng, unsigned threads) {
  if (R == 0) throw Error("estimate_output_law needs R >= 1");
  const SamplerContext ctx = make_context(spec, instance);
  const std::size_t leaves = instance.shape().leaves();
  const std::size_t workers = std::clamp<std::size_t>(threads, 1, R);

  struct Tally {
    std::vector<std::uint64_t> hits;
    std::uint64_t base = 0, reward = 0, failures = 0;
    std::exception_ptr error;
  };
  std::vector<Tally> tallies(workers);
  auto work = [&](std::size_t w) {
    Tally& tally = tallies[w];
    tally.hits.assign(leaves, 0);
    const std::size_t begin = R * w / workers, end = R * (w + 1) / workers;
    for (std::size_t r = begin; r < end; ++r) {
      try {
        RandomStream stream = rng.split(r);
        const auto out = run_sampler(spec, ctx, stream);
        ++tally.hits[out.leaf];
        tally.base += out.base_queries;
        tally.reward += out.reward_queries;
        if (out.failed) ++tally.failures;
      } catch (const DegeneracyError& e) {
        tally.error = std::make_exception_ptr(
            DegeneracyError(describe(spec) + ", replicate " + std::to_string(r) + ": " + e.what()));
        return;
      } catch (...) {
        tally.error = std::current_exception();
        return;
      }
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
  }

  std::vector<std::uint64_t> hits(leaves, 0);
  EmpiricalLaw out{TrajectoryDistribution::from_masses(instance.shape(), instance.shape().T,
                                                       std::vector<double>(leaves, 1.0)),
                   {}, R};
  for (auto& t : tallies) {
    if (t.error) std::rethrow_exception(t.error);
    for (std::size_t i = 0; i < leaves; ++i) hits[i] += t.hits[i];
    out.base_queries += t.base;
    out.reward_queries += t.reward;
    out.failures += t.failures;
  }
  std::vector<double> p(leaves);
  for (std::size_t i = 0; i < leaves; ++i) p[i] = static_cast<double>(hits[i]) / static_cast<double>(R);
  out.law = TrajectoryDistribution::from_masses(instance.shape(), instance.shape().T, std::move(p));
  out.se = cell_standard_errors(out.law, R);
  return out;
}

std::vector<double> cell_standard_errors(const TrajectoryDistribution& law, std::size_t R) {
  if (R == 0) throw Error("standard errors need R >= 1");
  std::vector<double> se(law.size());
  for (std::size_t i = 0; i < se.size(); ++i) se[i] = std::sqrt(law[i] * (1.0 - law[i]) / static_cast<double>(R));
  return se;
}

double tv_standard_error(const EmpiricalLaw& law) {
  double s = 0.0;
  for (double x : law.se) s += x;
  return 0.5 * s;
}

Instance load_instance(const InstanceSource& source) {
  const int n = static_cast<int>(source.file.has_value()) + static_cast<int>(source.random.has_value()) +
                static_cast<int>(source.hard.has_value());
  if (n != 1) throw Error("instance source must name exactly one of file, random, hard");
  if (source.file) return read_instance(*source.file);
  if (source.random) return random_instance(*source.random);
  return make_hard_instance(*source.hard);
}

// ---- configuration -------------------------------------------------------

namespace {

template <class T>
T get_or(const YAML::Node& node, const char* key, T fallback) {
  const auto child = node[key];
  return child ? child.as<T>() : fallback;
}

std::vector<std::size_t> get_list(const YAML::Node& node, const char* key) {
  const auto child = node[key];
  if (!child) return {};
  if (child.IsScalar()) return {child.as<std::size_t>()};
  if (!child.IsSequence()) throw Error(std::string("grid.") + key + " must be a list");
  std::vector<std::size_t> out;
  for (const auto& x : child) out.push_back(x.as<std::size_t>());
  return out;
}

void check_keys(const YAML::Node& node, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!node.IsMap()) throw Error(where + " must be a mapping");
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      throw Error("unknown key '" + key + "' in " + where);
  }
}

}  // namespace

ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
  ExperimentConfig cfg;
  try {
    const YAML::Node root = YAML::Load(text);
    if (!root || !root.IsMap()) throw Error("config must be a mapping");
    check_keys(root, "config", {"instance", "sampler", "grid", "replications", "seed", "output", "threads"});

    const auto inst = root["instance"];
    if (!inst) throw Error("config lacks an instance section");
    check_keys(inst, "instance", {"file", "random", "hard"});
    if (inst["file"]) {
      std::filesystem::path p = inst["file"].as<std::string>();
      cfg.instance.file = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
    }
    if (const auto r = inst["random"]) {
      check_keys(r, "instance.random", {"B", "T", "spread", "gamma", "row_floor", "seed"});
      RandomInstanceSpec s;
      s.B = get_or(r, "B", s.B);
      s.T = get_or(r, "T", s.T);
      s.spread = get_or(r, "spread", s.spread);
      s.gamma = get_or(r, "gamma", s.gamma);
      s.row_floor = get_or(r, "row_floor", s.row_floor);
      s.seed = get_or<std::uint64_t>(r, "seed", s.seed);
      cfg.instance.random = s;
    }
    if (const auto h = inst["hard"]) {
      check_keys(h, "instance.hard", {"B", "r", "m", "u", "seed"});
      HardInstanceParams p;
      p.B = get_or(h, "B", p.B);
      p.r = get_or(h, "r", p.r);
      p.m = get_or(h, "m", p.m);
      if (h["u"]) p.u = Prefix::parse(h["u"].as<std::string>());
      p.seed = get_or<std::uint64_t>(h, "seed", p.seed);
      cfg.instance.hard = p;
    }

    const auto smp = root["sampler"];
    if (!smp) throw Error("config lacks a sampler section");
    check_keys(smp, "sampler",
               {"kind", "proposal", "scheme", "normalizer", "mode", "N", "M", "H", "mc_samples", "rs_threshold",
                "delta"});
    SamplerSpec& s = cfg.sampler;
    s.kind = parse_sampler_kind(get_or<std::string>(smp, "kind", "smc"));
    s.proposal = parse_proposal_tag(get_or<std::string>(smp, "proposal", "naive"));
    s.scheme = parse_resample_scheme(get_or<std::string>(smp, "scheme", "multinomial"));
    s.normalizer = parse_normalizer(get_or<std::string>(smp, "normalizer", "exact"));
    s.mode = parse_mode(get_or<std::string>(smp, "mode", "exact-tilt"));
    s.N = get_or(smp, "N", s.N);
    s.M = get_or(smp, "M", s.M);
    s.H = get_or(smp, "H", s.H);
    s.mc_samples = get_or(smp, "mc_samples", s.mc_samples);
    s.rs_threshold = get_or(smp, "rs_threshold", s.rs_threshold);
    s.delta = get_or(smp, "delta", s.delta);

    const auto grid = root["grid"];
    if (!grid) throw Error("config lacks a grid section");
    check_keys(grid, "grid", {"N", "M", "H", "N_m"});
    cfg.grid_N = get_list(grid, "N");
    cfg.grid_M = get_list(grid, "M");
    cfg.grid_H = get_list(grid, "H");
    cfg.grid_Nm = get_list(grid, "N_m");

    cfg.R = get_or(root, "replications", cfg.R);
    cfg.seed = get_or<std::uint64_t>(root, "seed", cfg.seed);
    cfg.threads = get_or(root, "threads", cfg.threads);
    if (root["output"]) {
      std::filesystem::path p = root["output"].as<std::string>();
      cfg.output = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
    }
  } catch (const YAML::Exception& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  if (cfg.R == 0) throw Error("config: replications must be at least 1");
  if (cfg.grid_N.empty() && cfg.grid_M.empty() && cfg.grid_H.empty() && cfg.grid_Nm.empty())
    throw Error("config: grid is empty");
  if (cfg.threads == 0) cfg.threads = 1;
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), path.parent_path());
}

nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  auto& inst = j["instance"];
  if (c.instance.file) inst["file"] = c.instance.file->string();
  if (c.instance.random) {
    const auto& r = *c.instance.random;
    inst["random"] = {{"B", r.B}, {"T", r.T}, {"spread", r.spread}, {"gamma", r.gamma}, {"row_floor", r.row_floor},
                      {"seed", r.seed}};
  }
  if (c.instance.hard) {
    const auto& h = *c.instance.hard;
    inst["hard"] = {{"B", h.B}, {"r", h.r}, {"m", h.m}, {"u", hidden_prefix(h).to_string()}, {"seed", h.seed}};
  }
  const auto& s = c.sampler;
  j["sampler"] = {{"kind", to_string(s.kind)},
                  {"proposal", to_string(s.proposal)},
                  {"scheme", to_string(s.scheme)},
                  {"normalizer", normalizer_name(s.normalizer)},
                  {"mode", mode_name(s.mode)},
                  {"N", s.N},
                  {"M", s.M},
                  {"H", s.H},
                  {"mc_samples", s.mc_samples},
                  {"rs_threshold", s.rs_threshold},
                  {"delta", s.delta}};
  j["grid"] = {{"N", c.grid_N}, {"M", c.grid_M}, {"H", c.grid_H}, {"N_m", c.grid_Nm}};
  j["replications"] = c.R;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["output"] = c.output.string();
  return j;
}

// ---- records ---------------------------------------------------------------

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else {
      out.back() += c;
    }
  }
  if (quoted) throw ParseError("unterminated quoted CSV field");
  return out;
}

}  // namespace

std::string csv_header() {
  return "instance_id,sampler,N,M,H,N_m,tv,se,bound,bound_name,seed,wall_clock_s,base_queries,reward_queries";
}

std::string to_csv_row(const ResultRecord& r) {
  std::ostringstream o;
  o << csv_field(r.instance_id) << ',' << csv_field(r.sampler) << ',' << r.N << ',' << r.M << ',' << r.H << ','
    << r.N_m << ',' << fmt_double(r.tv) << ',' << fmt_double(r.se) << ',' << fmt_double(r.bound) << ','
    << csv_field(r.bound_name) << ',' << r.seed << ',' << fmt_double(r.wall_clock_s) << ',' << r.base_queries << ','
    << r.reward_queries;
  return o.str();
}

std::vector<ResultRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::vector<ResultRecord> out;
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header) {
      if (line != csv_header()) throw ParseError(path.string() + ": unexpected CSV header");
      header = true;
      continue;
    }
    const auto f = split_csv_line(line);
    if (f.size() != 14) throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected 14 fields");
    try {
      ResultRecord r;
      r.instance_id = f[0];
      r.sampler = f[1];
      r.N = parse_u64(f[2]);
      r.M = parse_u64(f[3]);
      r.H = parse_u64(f[4]);
      r.N_m = parse_u64(f[5]);
      r.tv = parse_double(f[6]);
      r.se = parse_double(f[7]);
      r.bound = parse_double(f[8]);
      r.bound_name = f[9];
      r.seed = parse_u64(f[10]);
      r.wall_clock_s = parse_double(f[11]);
      r.base_queries = parse_u64(f[12]);
      r.reward_queries = parse_u64(f[13]);
      out.push_back(std::move(r));
    } catch (const std::logic_error& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::filesystem::path metadata_path(const std::filesystem::path& csv) {
  auto p = csv;
  return p.replace_extension(".json");
}

// ---- bounds ----------------------------------------------------------------

BoundValue theoretical_bound(const SamplerSpec& spec, const Instance& instance) {
  const int T = instance.shape().T;
  switch (spec.kind) {
    case SamplerKind::smc: {
      if (spec.normalizer == NormalizerMode::monte_carlo) return {kNaN, "none"};
      const auto d = diagnostics(instance, spec.proposal);
      const auto N = static_cast<std::int64_t>(spec.N);
      if (spec.proposal == ProposalTag::optimal)
        return {particle_tv_bound({d.L, d.eps, T, 0.5}, BudgetRegime::optimal_local, N), "optimal-local"};
      const double local = particle_tv_bound({d.L, d.eps, T, 0.5}, BudgetRegime::naive_local, N);
      const double global = particle_tv_bound({d.L, d.eps_g, T, 0.5}, BudgetRegime::naive_global, N);
      return global < local ? BoundValue{global, "naive-global"} : BoundValue{local, "naive-local"};
    }
    case SamplerKind::spgsmc: {
      if (spec.mode == SpgsmcMode::Kind::pool) return {kNaN, "none"};
      return {2.0 * T * diagnostics(instance).eps, "spgsmc-local"};
    }
    case SamplerKind::pool_mh: {
      const double b = pool_mh_ratio_bound(instance, spec.M);
      return {std::pow(1.0 - 1.0 / (b * b), static_cast<double>(spec.H) - 1.0), "pool-mh-contraction"};
    }
    case SamplerKind::rejection_mh: {
      const auto target = target_distribution(instance);
      const auto proposal = spgsmc_exact_law(instance);
      const double b = ratio_bound(target.probs(), proposal.probs());
      const double H = static_cast<double>(spec.H);
      const double exact = std::pow(1.0 - 1.0 / (b * b), H - 1.0) + spec.delta;
      if (spec.mc_samples == 0) return {exact, "rejection-mh-contraction"};
      const double c = activation_constant(instance);
      const bool enough = static_cast<double>(spec.mc_samples) >= 8.0 * c * std::log(4.0 / spec.delta);
      const double xi = enough ? expectation_error_radius(c, spec.delta, spec.mc_samples) : 1.0;
      const double rho = xi < 1.0 ? std::pow((1.0 + xi) / (1.0 - xi), 2.0 * T) : std::numeric_limits<double>::infinity();
      return {exact + H * (rho - 1.0) + 2.0 * T * H * spec.delta, "rejection-mh-perturbed"};
    }
  }
  return {kNaN, "none"};
}

nlohmann::json diagnostics_snapshot(const Instance& instance, const std::vector<std::size_t>& pool_sizes) {
  const auto d = diagnostics(instance);
  nlohmann::json entry = {{"L", d.L}, {"eps", d.eps}, {"eps_g", d.eps_g}, {"c_act", d.c_act}};
  nlohmann::json pool = nlohmann::json::object();
  for (std::size_t M : std::set<std::size_t>(pool_sizes.begin(), pool_sizes.end()))
    pool[std::to_string(M)] = pool_mh_ratio_bound(instance, M);
  entry["pool_mh_ratio_bound"] = pool;
  const auto target = target_distribution(instance);
  entry["rejection_mh_ratio_bound"] = ratio_bound(target.probs(), spgsmc_exact_law(instance).probs());
  if (const auto hard = parse_hard_id(instance.id))
    entry["mass_Au"] = set_mass(target, favored_leaves(instance.shape(), *hard->u));
  return nlohmann::json{{instance.id, entry}};
}

// ---- sweeps ------------------------------------------------------------------

std::vector<ResultRecord> run_sweep(const ExperimentConfig& config,
                                    const std::function<void(const ResultRecord&)>& on_record) {
  if (config.R == 0) throw Error("sweep needs replications >= 1");
  const Instance instance = load_instance(config.instance);
  const auto target = target_distribution(instance);

  auto axis = [](const std::vector<std::size_t>& grid, std::size_t fallback) {
    return grid.empty() ? std::vector<std::size_t>{fallback} : grid;
  };
  const auto Ns = axis(config.grid_N, config.sampler.N), Ms = axis(config.grid_M, config.sampler.M),
             Hs = axis(config.grid_H, config.sampler.H), Nms = axis(config.grid_Nm, config.sampler.mc_samples);

  std::vector<SamplerSpec> cells;
  for (auto N : Ns)
    for (auto M : Ms)
      for (auto H : Hs)
        for (auto Nm : Nms) {
          SamplerSpec s = config.sampler;
          s.N = N;
          s.M = M;
          s.H = H;
          s.mc_samples = Nm;
          cells.push_back(resolve_defaults(s, instance));
        }

  std::ofstream csv;
  if (!config.output.empty()) {
    std::error_code ec;
    if (config.output.has_parent_path()) std::filesystem::create_directories(config.output.parent_path(), ec);
    std::vector<std::size_t> pools;
    for (const auto& s : cells)
      if (s.kind == SamplerKind::pool_mh) pools.push_back(s.M);
    nlohmann::json meta;
    meta["config"] = config_to_json(config);
    meta["versions"] = {{"tiltlab", "1.0.0"},
                        {"compiler", __VERSION__},
                        {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                                      "." + std::to_string(EIGEN_MINOR_VERSION)},
                        {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                              std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                              std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
    meta["diagnostics"] = diagnostics_snapshot(instance, pools);
    meta["notes"] = {{"rejection_delta_split", "each rejection call inside SMC receives delta/(2NT)"},
                     {"replicate_stream", "replicate r of cell k uses RandomStream(seed).split(k).split(r)"}};
    std::ofstream js(metadata_path(config.output));
    if (!js) throw Error("cannot write " + metadata_path(config.output).string());
    js << meta.dump(2) << '\n';
    csv.open(config.output);
    if (!csv) throw Error("cannot write " + config.output.string());
    csv << csv_header() << '\n' << std::flush;
  }

  const RandomStream root(config.seed);
  std::vector<ResultRecord> records;
  for (std::size_t k = 0; k < cells.size(); ++k) {
    const auto& s = cells[k];
    const auto start = std::chrono::steady_clock::now();
    const auto law = estimate_output_law(s, instance, config.R, root.split(k), config.threads);
    const auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const auto bound = theoretical_bound(s, instance);
    ResultRecord r;
    r.instance_id = instance.id;
    r.sampler = describe(s);
    r.N = s.kind == SamplerKind::smc ? s.N : 0;
    r.M = uses_pool(s) ? s.M : 0;
    r.H = is_mh(s) ? s.H : 0;
    r.N_m = uses_mc(s) ? s.mc_samples : 0;
    r.tv = tv_distance(law.law, target);
    r.se = tv_standard_error(law);
    r.bound = bound.value;
    r.bound_name = bound.name;
    r.seed = config.seed;
    r.wall_clock_s = elapsed;
    r.base_queries = law.base_queries;
    r.reward_queries = law.reward_queries;
    if (csv.is_open()) {
      csv << to_csv_row(r) << '\n' << std::flush;
      if (!csv) throw Error("write failed on " + config.output.string());
    }
    if (on_record) on_record(r);
    records.push_back(std::move(r));
  }
  return records;
}

// ---- verification ------------------------------------------------------------

bool VerifyReport::all_pass() const {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
}

std::string VerifyReport::to_text() const {
  std::ostringstream o;
  for (const auto& c : checks) {
    o << (c.pass ? (c.conclusive ? "PASS" : "SKIP") : "FAIL") << "  " << c.name << "  value=" << fmt_double(c.value)
      << " threshold=" << fmt_double(c.threshold);
    if (!c.detail.empty()) o << "  " << c.detail;
    o << '\n';
  }
  o << (all_pass() ? "all checks pass" : "some checks fail") << '\n';
  return o.str();
}

double fit_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw Error("fit_slope needs two or more paired points");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i], my += y[i];
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  if (sxx == 0.0) throw Error("fit_slope: x values coincide");
  return sxy / sxx;
}

VerifyReport verify_report(const std::vector<ResultRecord>& records, const nlohmann::json& diagnostics) {
  if (records.empty()) throw Error("no records");
  VerifyReport report;
  for (const auto& r : records)
    if (!diagnostics.contains(r.instance_id)) throw Error("missing diagnostics for instance " + r.instance_id);

  auto label = [](const ResultRecord& r) {
    std::ostringstream o;
    o << r.sampler << " N=" << r.N << " M=" << r.M << " H=" << r.H << " N_m=" << r.N_m;
    return o.str();
  };

  for (const auto& r : records) {
    if (std::isnan(r.bound)) continue;
    Check c;
    c.name = "bound " + r.bound_name + " [" + label(r) + "]";
    c.value = r.tv - 3.0 * r.se;
    c.threshold = r.bound;
    c.pass = c.value <= c.threshold;
    c.detail = "tv=" + fmt_double(r.tv) + " se=" + fmt_double(r.se) + " margin=" + fmt_double(r.bound - c.value);
    report.checks.push_back(std::move(c));
  }

  // N-sweeps: SMC records differing only in N.
  using NKey = std::tuple<std::string, std::string, std::size_t, std::size_t, std::size_t>;
  std::map<NKey, std::vector<const ResultRecord*>> n_groups;
  for (const auto& r : records)
    if (r.sampler.rfind("smc", 0) == 0) n_groups[{r.instance_id, r.sampler, r.M, r.H, r.N_m}].push_back(&r);
  for (auto& [key, group] : n_groups) {
    std::set<std::size_t> distinct;
    for (auto* r : group) distinct.insert(r->N);
    if (distinct.size() < 2) continue;
    std::vector<double> x, y;
    for (auto* r : group)
      if (r->tv > 3.0 * r->se && r->tv > 0.0) x.push_back(std::log(static_cast<double>(r->N))), y.push_back(std::log(r->tv));
    Check c;
    c.name = "N-sweep slope [" + std::get<1>(key) + " " + std::get<0>(key) + "]";
    c.threshold = -0.5;
    std::set<double> xs(x.begin(), x.end());
    if (xs.size() < 3) {
      c.conclusive = false;
      c.value = kNaN;
      c.detail = "fewer than 3 points resolve TV above 3 SE";
    } else {
      c.value = fit_slope(x, y);
      c.pass = c.value <= c.threshold;
      c.detail = "points=" + std::to_string(x.size());
    }
    report.checks.push_back(std::move(c));
  }

  // H-sweeps: MH records differing only in H.
  using HKey = std::tuple<std::string, std::string, std::size_t, std::size_t, std::size_t>;
  std::map<HKey, std::vector<const ResultRecord*>> h_groups;
  for (const auto& r : records)
    if (r.sampler.find("-mh") != std::string::npos) h_groups[{r.instance_id, r.sampler, r.N, r.M, r.N_m}].push_back(&r);
  for (auto& [key, group] : h_groups) {
    std::sort(group.begin(), group.end(), [](auto* a, auto* b) { return a->H < b->H; });
    if (group.front()->H == group.back()->H) continue;
    const std::string tag = std::get<1>(key) + " M=" + std::to_string(std::get<3>(key)) + " " + std::get<0>(key);

    Check mono;
    mono.name = "H-sweep monotone [" + tag + "]";
    mono.threshold = 0.0;
    mono.value = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i + 1 < group.size(); ++i) {
      const double excess = group[i + 1]->tv - group[i]->tv - 3.0 * std::max(group[i]->se, group[i + 1]->se);
      mono.value = std::max(mono.value, excess);
    }
    mono.pass = mono.value <= 0.0;
    mono.detail = "largest rise beyond 3 SE";
    report.checks.push_back(std::move(mono));

    Check ratio;
    ratio.name = "H-sweep ratio [" + tag + "]";
    const auto& diag = diagnostics.at(std::get<0>(key));
    double b = kNaN;
    if (std::get<1>(key).rfind("pool-mh", 0) == 0) {
      const auto M = std::to_string(std::get<3>(key));
      if (diag.contains("pool_mh_ratio_bound") && diag["pool_mh_ratio_bound"].contains(M))
        b = diag["pool_mh_ratio_bound"][M].get<double>();
    } else if (diag.contains("rejection_mh_ratio_bound")) {
      b = diag["rejection_mh_ratio_bound"].get<double>();
    }
    std::vector<double> x, y;
    for (auto* r : group)
      if (r->tv > 3.0 * r->se && r->tv > 0.0) x.push_back(static_cast<double>(r->H)), y.push_back(std::log(r->tv));
    std::set<double> xs(x.begin(), x.end());
    if (std::isnan(b)) {
      ratio.conclusive = false;
      ratio.value = kNaN;
      ratio.threshold = kNaN;
      ratio.detail = "no ratio bound in diagnostics";
    } else if (xs.size() < 2) {
      ratio.conclusive = false;
      ratio.value = kNaN;
      ratio.threshold = 1.0 - 1.0 / (b * b) + 0.1;
      ratio.detail = "fewer than 2 points resolve TV above 3 SE";
    } else {
      ratio.threshold = 1.0 - 1.0 / (b * b) + 0.1;
      ratio.value = std::exp(fit_slope(x, y));
      ratio.pass = ratio.value <= ratio.threshold;
      ratio.detail = "b=" + fmt_double(b) + " points=" + std::to_string(x.size());
    }
    report.checks.push_back(std::move(ratio));
  }
  return report;
}

}  // namespace tiltlab
