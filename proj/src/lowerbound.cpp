#include "tiltlab/lowerbound.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "tiltlab/fk.hpp"
#include "tiltlab/samplers.hpp"

namespace tiltlab {

Prefix hidden_prefix(const HardInstanceParams& params) {
  if (params.B < 2) throw Error("hard instance needs B >= 2");
  if (params.m < 1) throw Error("hard instance needs m >= 1");
  if (params.u) {
    if (params.u->length() != 2 * params.m) throw Error("hidden prefix must have length 2m");
    for (Symbol s : params.u->symbols)
      if (s < 0 || s >= params.B) throw Error("hidden prefix symbol out of range");
    return *params.u;
  }
  RandomStream rng(params.seed);
  Prefix u;
  for (int i = 0; i < 2 * params.m; ++i) u.symbols.push_back(static_cast<Symbol>(rng.below(static_cast<std::size_t>(params.B))));
  return u;
}

Instance make_hard_instance(const HardInstanceParams& params) {
  if (!(params.r >= 1.0) || !std::isfinite(params.r)) throw Error("hard instance needs a finite ratio r >= 1");
  const Prefix u = hidden_prefix(params);
  Shape shape{params.B, 3 * params.m};
  shape.validate();
  const int split = 2 * params.m;
  const std::size_t u_rank = to_node(u, shape.B).index;

  std::vector<std::vector<double>> rows(static_cast<std::size_t>(shape.T));
  for (int t = 0; t < shape.T; ++t) rows[static_cast<std::size_t>(t)].assign(shape.count(t + 1), 1.0 / shape.B);
  std::vector<std::vector<double>> v(static_cast<std::size_t>(shape.T + 1));
  for (int t = 0; t <= shape.T; ++t) {
    auto& level = v[static_cast<std::size_t>(t)];
    level.assign(shape.count(t), 1.0);
    if (t <= split) continue;
    const std::size_t stride = shape.count(t - split);
    const double up = std::pow(params.r, t - split);
    for (std::size_t i = 0; i < level.size(); ++i) level[i] = i / stride == u_rank ? up : 1.0 / up;
  }
  std::ostringstream id;
  id << "hard;B=" << params.B << ";r=" << std::setprecision(17) << params.r << ";m=" << params.m
     << ";u=" << u.to_string();
  return Instance(id.str(), ReferenceModel(shape, std::move(rows)), TwistModel(shape, std::move(v)));
}

std::optional<HardInstanceParams> parse_hard_id(std::string_view id) {
  if (id.substr(0, 5) != "hard;") return std::nullopt;
  HardInstanceParams p;
  bool has_b = false, has_r = false, has_m = false;
  std::string rest(id.substr(5));
  std::istringstream in(rest);
  std::string field;
  try {
    while (std::getline(in, field, ';')) {
      const auto eq = field.find('=');
      if (eq == std::string::npos) return std::nullopt;
      const auto key = field.substr(0, eq), value = field.substr(eq + 1);
      if (key == "B") p.B = std::stoi(value), has_b = true;
      else if (key == "r") p.r = std::stod(value), has_r = true;
      else if (key == "m") p.m = std::stoi(value), has_m = true;
      else if (key == "u") p.u = Prefix::parse(value);
    }
  } catch (const std::exception&) {
    return std::nullopt;
  }
  if (!has_b || !has_r || !has_m || !p.u) return std::nullopt;
  return p;
}

double hard_mass_closed_form(int B, double r, int m) {
  const double r2m = std::pow(r, 2 * m);
  return r2m / (r2m + std::pow(static_cast<double>(B), 2 * m) - 1.0);
}

std::vector<char> favored_leaves(const Shape& shape, const Prefix& u) {
  if (u.length() > shape.T) throw Error("favored prefix longer than the horizon");
  const std::size_t rank = to_node(u, shape.B).index;
  const std::size_t stride = shape.count(shape.T - u.length());
  std::vector<char> mask(shape.leaves(), 0);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = i / stride == rank;
  return mask;
}

double set_mass(const TrajectoryDistribution& law, const std::vector<char>& mask) {
  if (mask.size() != law.size()) throw Error("set_mass: mask size differs from the distribution");
  double mass = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) mass += law[i];
  return mass;
}

CountingOracle::CountingOracle(const Instance& instance, RandomStream rng)
    : instance_(instance), rng_(std::move(rng)) {
  std::size_t total = 0;
  for (int t = 0; t <= shape().T; ++t) {
    offsets_.push_back(total);
    total += shape().count(t);
  }
  tally_.assign(total, 0);
  visited_.assign(total, 0);
  visited_[0] = 1;
}

Symbol CountingOracle::draw_next(Node prefix, RandomStream&) {
  if (prefix.t >= shape().T) throw Error("no next symbol after a complete trajectory");
  const auto s = static_cast<Symbol>(rng_.categorical(instance_.reference.row(prefix)));
  ++counts_.base;
  ++tally_[slot(prefix)];
  visited_[slot(prefix.child(s, shape().B))] = 1;
  return s;
}

double CountingOracle::twist(Node prefix) {
  ++counts_.reward;
  return instance_.twist.value(prefix);
}

std::span<const double> CountingOracle::next_row(Node) {
  throw Error("explicit next-symbol probabilities are not available through the counting oracle");
}

std::uint64_t CountingOracle::draws_at(Node prefix) const { return tally_[slot(prefix)]; }

bool CountingOracle::visited(Node prefix) const { return visited_[slot(prefix)] != 0; }

void CountingOracle::emit(std::size_t leaf) const {
  const Node node{shape().T, leaf};
  for (int t = 1; t <= shape().T; ++t) {
    const Node prefix{t, ancestor(node, t, shape().B)};
    if (!visited(prefix))
      throw NoGuessViolation("no-guess violation: prefix " + to_prefix(prefix, shape().B).to_string() +
                             " was never produced by a draw");
  }
}

HitSampler parse_hit_sampler(std::string_view text) {
  if (text == "uniform-search") return HitSampler::uniform_search;
  if (text == "spgsmc") return HitSampler::spgsmc;
  if (text == "smc") return HitSampler::smc;
  throw Error("unknown hitting sampler '" + std::string(text) + "'");
}

double sample_quantile(std::vector<double> values, double q) {
  if (values.empty()) throw Error("quantile of an empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw Error("quantile level must lie in [0,1]");
  std::sort(values.begin(), values.end());
  const double h = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, values.size() - 1);
  if (values[hi] == values[lo] || h == static_cast<double>(lo)) return values[lo];
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

HitResult queries_to_hit(const Instance& instance, const HitSamplerSpec& sampler, const std::vector<char>& target,
                         double quantile, std::size_t repetitions, RandomStream& rng, std::size_t max_runs) {
  if (repetitions == 0) throw Error("queries_to_hit needs at least one repetition");
  if (target.size() != instance.shape().leaves()) throw Error("target set must be a leaf mask");
  const Shape& shape = instance.shape();
  std::optional<FKModel> fk;
  SmcOptions smc_options;
  smc_options.N = sampler.N;
  if (sampler.kind == HitSampler::smc) fk.emplace(build_fk(instance, NaiveProposal{}));
  const SpgsmcMode pool{SpgsmcMode::Kind::pool, sampler.M};

  HitResult result;
  std::vector<double> totals;
  for (std::size_t r = 0; r < repetitions; ++r) {
    RandomStream rep = rng.split(r);
    CountingOracle oracle(instance, rep.split(0));
    RandomStream own = rep.split(1);
    bool hit = false;
    for (std::size_t run = 0; run < max_runs && !hit; ++run) {
      std::size_t leaf = 0;
      switch (sampler.kind) {
        case HitSampler::uniform_search: {
          Node node;
          while (node.t < shape.T) node = node.child(oracle.draw_next(node, own), shape.B);
          leaf = node.index;
          break;
        }
        case HitSampler::spgsmc: leaf = spgsmc_run(oracle, pool, own).leaf; break;
        case HitSampler::smc: leaf = smc_run(*fk, oracle, smc_options, own).leaf; break;
      }
      oracle.emit(leaf);
      hit = target[leaf] != 0;
    }
    if (hit) {
      result.queries.push_back(oracle.counts().base);
      totals.push_back(static_cast<double>(oracle.counts().base));
    } else {
      ++result.exhausted;
      totals.push_back(std::numeric_limits<double>::infinity());
    }
  }
  result.quantile = sample_quantile(std::move(totals), quantile);
  return result;
}

}  // namespace tiltlab
