#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tiltlab/distribution.hpp"
#include "tiltlab/fk.hpp"
#include "tiltlab/lowerbound.hpp"
#include "tiltlab/model.hpp"
#include "tiltlab/random.hpp"
#include "tiltlab/samplers.hpp"

namespace tiltlab {

enum class SamplerKind { smc, spgsmc, pool_mh, rejection_mh };
std::string to_string(SamplerKind kind);
SamplerKind parse_sampler_kind(std::string_view text);

/// Sampler and knob values. Zero knobs select defaults derived from the instance.
struct SamplerSpec {
  SamplerKind kind = SamplerKind::smc;
  ProposalTag proposal = ProposalTag::naive;
  ResampleScheme scheme = ResampleScheme::multinomial;
  NormalizerMode normalizer = NormalizerMode::exact;
  SpgsmcMode::Kind mode = SpgsmcMode::Kind::exact_tilt;
  std::size_t N = 1;
  std::size_t M = 0;
  std::size_t H = 1;
  std::size_t mc_samples = 0;
  double rs_threshold = 0.0;
  double delta = 0.1;
};

/// Label such as "smc/naive/multinomial" or "pool-mh".
std::string describe(const SamplerSpec& spec);

/// Sampler spec with every zero knob replaced by its instance-derived default.
SamplerSpec resolve_defaults(const SamplerSpec& spec, const Instance& instance);

/// Per-instance tables shared by every run of one sampler configuration.
struct SamplerContext {
  const Instance* instance = nullptr;
  std::optional<FKModel> fk;
  std::vector<std::vector<double>> normalizers;
};
SamplerContext make_context(const SamplerSpec& spec, const Instance& instance);

/// One run of the sampler described by `spec` (defaults must be resolved).
SamplerOutput run_sampler(const SamplerSpec& spec, const SamplerContext& context, RandomStream& rng);

struct EmpiricalLaw {
  TrajectoryDistribution law;
  /// sqrt(p(1-p)/R) per leaf.
  std::vector<double> se;
  std::size_t R = 0;
  std::uint64_t base_queries = 0;
  std::uint64_t reward_queries = 0;
  std::uint64_t failures = 0;
};

/// Leaf frequencies over R runs; replicate r uses rng.split(r). Results do not
/// depend on `threads`.
EmpiricalLaw estimate_output_law(const SamplerSpec& spec, const Instance& instance, std::size_t R,
                                 const RandomStream& rng, unsigned threads = 1);

/// sqrt(p(1-p)/R) for every cell of an empirical law.
std::vector<double> cell_standard_errors(const TrajectoryDistribution& law, std::size_t R);

/// Half the sum of per-leaf standard errors: scale of the plug-in TV noise.
double tv_standard_error(const EmpiricalLaw& law);

struct InstanceSource {
  std::optional<std::filesystem::path> file;
  std::optional<RandomInstanceSpec> random;
  std::optional<HardInstanceParams> hard;
};
Instance load_instance(const InstanceSource& source);

struct ExperimentConfig {
  InstanceSource instance;
  SamplerSpec sampler;
  std::vector<std::size_t> grid_N, grid_M, grid_H, grid_Nm;
  std::size_t R = 1000;
  std::uint64_t seed = 0;
  std::filesystem::path output;
  unsigned threads = 1;
};

/// YAML document with sections instance, sampler and grid.
ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json config_to_json(const ExperimentConfig& config);

struct ResultRecord {
  std::string instance_id;
  std::string sampler;
  std::size_t N = 0;
  std::size_t M = 0;
  std::size_t H = 0;
  std::size_t N_m = 0;
  double tv = 0.0;
  double se = 0.0;
  double bound = 0.0;
  std::string bound_name;
  std::uint64_t seed = 0;
  double wall_clock_s = 0.0;
  std::uint64_t base_queries = 0;
  std::uint64_t reward_queries = 0;
};

std::string csv_header();
std::string to_csv_row(const ResultRecord& record);
std::vector<ResultRecord> read_records(const std::filesystem::path& path);
/// Path of the JSON metadata adjacent to a results CSV.
std::filesystem::path metadata_path(const std::filesystem::path& csv);

struct BoundValue {
  double value = 0.0;
  std::string name;
};
/// The tightest applicable TV bound for one sampler configuration; NaN value when none applies.
BoundValue theoretical_bound(const SamplerSpec& spec, const Instance& instance);

/// Diagnostics snapshot keyed by instance id: L, eps, eps_g, c_act and MH ratio bounds.
nlohmann::json diagnostics_snapshot(const Instance& instance, const std::vector<std::size_t>& pool_sizes);

/// Runs every grid cell, streaming records to config.output when it is set.
std::vector<ResultRecord> run_sweep(const ExperimentConfig& config,
                                    const std::function<void(const ResultRecord&)>& on_record = {});

struct Check {
  std::string name;
  bool pass = true;
  /// False when the data cannot decide the check; such checks count as passing.
  bool conclusive = true;
  double value = 0.0;
  double threshold = 0.0;
  std::string detail;
};

struct VerifyReport {
  std::vector<Check> checks;
  bool all_pass() const;
  std::string to_text() const;
};

/// Least-squares slope of y on x.
double fit_slope(const std::vector<double>& x, const std::vector<double>& y);

VerifyReport verify_report(const std::vector<ResultRecord>& records, const nlohmann::json& diagnostics);

}  // namespace tiltlab
