#include "tiltlab/samplers.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace tiltlab {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::uint64_t ceil_count(double x) {
  if (!std::isfinite(x) || x > 9.0e18) throw Error("sample count overflows");
  return std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::ceil(x * (1.0 - 1e-12))));
}

/// exp(logw - max) into `w`; throws on total degeneracy.
void normalize_log_weights(std::span<const double> logw, std::vector<double>& w, int step) {
  const double m = *std::max_element(logw.begin(), logw.end());
  if (m == kNegInf || std::isnan(m))
    throw DegeneracyError("all particle weights vanish at step " + std::to_string(step));
  w.resize(logw.size());
  for (std::size_t i = 0; i < logw.size(); ++i) w[i] = std::exp(logw[i] - m);
}

std::vector<std::size_t> sorted_order(std::span<const Atom> atoms) {
  std::vector<std::size_t> order(atoms.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (atoms[a].score != atoms[b].score) return atoms[a].score < atoms[b].score;
    return atoms[a].key < atoms[b].key;
  });
  return order;
}

double total_mass(std::span<const Atom> atoms) {
  double total = 0.0;
  for (const auto& a : atoms) {
    if (!(a.mass >= 0.0)) throw Error("stratified resampling: negative atom mass");
    total += a.mass;
  }
  if (atoms.empty() || !(total > 0.0)) throw Error("stratified resampling: empty measure");
  return total;
}

/// Sums weights per distinct particle rank; returns (rank, mass) in rank order.
std::vector<std::pair<std::size_t, double>> aggregate(std::span<const std::size_t> ranks, std::span<const double> w) {
  std::vector<std::pair<std::size_t, double>> items(ranks.size());
  for (std::size_t i = 0; i < ranks.size(); ++i) items[i] = {ranks[i], w[i]};
  std::sort(items.begin(), items.end());
  std::vector<std::pair<std::size_t, double>> out;
  for (const auto& it : items) {
    if (!out.empty() && out.back().first == it.first) out.back().second += it.second;
    else out.push_back(it);
  }
  return out;
}

SamplerOutput smc_stratified(const FKModel& fk, const SmcOptions& o, RandomStream& rng) {
  const Shape& shape = fk.shape();
  const int T = shape.T;
  const auto B = static_cast<std::size_t>(shape.B);
  const std::size_t N = o.N;
  SamplerOutput out;
  std::vector<Atom> atoms;
  std::vector<std::size_t> x(N);
  std::vector<double> w(N);

  auto draw = [&](int p) {
    auto pick = resample_stratified_quantile(atoms, N, rng);
    for (std::size_t i = 0; i < N; ++i) x[i] = atoms[pick[i]].key;
    out.base_queries += N;
    out.reward_queries += N;
    if (p < T + 1)
      for (std::size_t i = 0; i < N; ++i) w[i] = fk.potential({p, x[i]});
  };

  out.reward_queries += N;
  const auto score1 = fk.value_to_go(1);
  for (std::size_t c = 0; c < B; ++c)
    if (fk.kernel(1)[c] > 0.0) atoms.push_back({c, fk.kernel(1)[c], score1[c]});
  draw(1);
  for (int p = 2; p <= T; ++p) {
    atoms.clear();
    const auto score = fk.value_to_go(p);
    for (const auto& [parent, mass] : aggregate(x, w)) {
      if (mass <= 0.0) continue;
      const auto row = fk.kernel_row(p, parent);
      for (std::size_t c = 0; c < B; ++c) {
        const std::size_t child = parent * B + c;
        if (row[c] > 0.0) atoms.push_back({child, mass * row[c], score[child]});
      }
    }
    if (atoms.empty()) throw DegeneracyError("all particle weights vanish at step " + std::to_string(p - 1));
    draw(p);
  }
  atoms.clear();
  for (const auto& [rank, mass] : aggregate(x, w))
    if (mass > 0.0) atoms.push_back({rank, mass, 1.0});
  if (atoms.empty()) throw DegeneracyError("all particle weights vanish at step " + std::to_string(T));
  auto pick = resample_stratified_quantile(atoms, N, rng);
  out.leaf = atoms[pick[rng.below(N)]].key;
  return out;
}

}  // namespace

std::uint64_t rejection_trial_budget(double M, double delta) {
  if (!(M > 0.0)) throw Error("rejection threshold must be positive");
  if (!(delta > 0.0 && delta < 1.0)) throw Error("rejection failure probability must lie in (0,1)");
  return ceil_count(4.0 * M * std::log(4.0 / delta));
}

RejectionDraw rejection_sample(std::span<const double> scores, std::span<const double> row, double M, double delta,
                               RandomStream& rng) {
  if (scores.size() != row.size()) throw Error("rejection_sample: score and row sizes differ");
  return rejection_sample([&] { return static_cast<Symbol>(rng.categorical(row)); },
                          [&](Symbol s) { return scores[static_cast<std::size_t>(s)]; }, M, delta, rng);
}

double empirical_expectation(std::span<const double> scores, std::span<const double> row, std::size_t n,
                             RandomStream& rng) {
  if (scores.size() != row.size()) throw Error("empirical_expectation: score and row sizes differ");
  return empirical_expectation([&] { return rng.categorical(row); }, [&](std::size_t s) { return scores[s]; }, n);
}

std::size_t expectation_sample_size(double c_act, double delta) {
  if (!(delta > 0.0 && delta < 1.0)) throw Error("delta must lie in (0,1)");
  return static_cast<std::size_t>(ceil_count(8.0 * c_act * std::log(4.0 / delta)));
}

double expectation_error_radius(double c_act, double delta, std::size_t n) {
  return 2.0 * std::sqrt(2.0) * std::sqrt(c_act * std::log(4.0 / delta) / static_cast<double>(n));
}

std::vector<std::size_t> resample_multinomial(std::span<const double> weights, std::size_t N, RandomStream& rng,
                                              int step) {
  std::vector<double> cum(weights.size());
  double total = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (!(weights[i] >= 0.0)) throw Error("resampling weights must be nonnegative");
    total += weights[i];
    cum[i] = total;
  }
  if (!(total > 0.0)) {
    std::string where = step >= 0 ? " at step " + std::to_string(step) : "";
    throw DegeneracyError("all resampling weights are zero" + where);
  }
  std::vector<std::size_t> out(N);
  for (auto& a : out) {
    const double u = rng.uniform() * total;
    auto it = std::upper_bound(cum.begin(), cum.end(), u);
    if (it == cum.end()) --it;
    // Skip zero-weight entries sharing a cumulative value.
    std::size_t i = static_cast<std::size_t>(it - cum.begin());
    while (weights[i] == 0.0) --i;
    a = i;
  }
  return out;
}

std::vector<std::size_t> resample_stratified_quantile(std::span<const Atom> atoms, std::size_t N, RandomStream& rng) {
  if (N == 0) throw Error("stratified resampling needs N >= 1");
  const double total = total_mass(atoms);
  const auto order = sorted_order(atoms);
  std::vector<std::size_t> out(N);
  std::size_t k = 0;
  double upper = atoms[order[0]].mass / total;
  std::size_t last_positive = order[0];
  for (std::size_t i = 0; i < N; ++i) {
    const double u = (static_cast<double>(i) + rng.uniform()) / static_cast<double>(N);
    while (k + 1 < order.size() && (u >= upper || atoms[order[k]].mass == 0.0)) {
      if (atoms[order[k]].mass > 0.0) last_positive = order[k];
      ++k;
      upper += atoms[order[k]].mass / total;
    }
    out[i] = atoms[order[k]].mass > 0.0 ? order[k] : last_positive;
  }
  return out;
}

std::vector<std::vector<double>> stratum_laws(std::span<const Atom> atoms, std::size_t N) {
  if (N == 0) throw Error("stratified resampling needs N >= 1");
  const double total = total_mass(atoms);
  const auto order = sorted_order(atoms);
  std::vector<std::vector<double>> laws(N, std::vector<double>(atoms.size(), 0.0));
  double lo = 0.0;
  for (std::size_t pos : order) {
    const double hi = lo + atoms[pos].mass / total;
    const auto first = static_cast<std::size_t>(std::floor(lo * static_cast<double>(N)));
    for (std::size_t i = first; i < N; ++i) {
      const double a = std::max(lo, static_cast<double>(i) / static_cast<double>(N));
      const double b = std::min(hi, static_cast<double>(i + 1) / static_cast<double>(N));
      if (b <= a) {
        if (static_cast<double>(i) / static_cast<double>(N) >= hi) break;
        continue;
      }
      laws[i][pos] += (b - a) * static_cast<double>(N);
    }
    lo = hi;
  }
  return laws;
}

std::string to_string(ResampleScheme scheme) {
  return scheme == ResampleScheme::multinomial ? "multinomial" : "stratified";
}

ResampleScheme parse_resample_scheme(std::string_view text) {
  if (text == "multinomial") return ResampleScheme::multinomial;
  if (text == "stratified") return ResampleScheme::stratified;
  throw Error("unknown resampling scheme '" + std::string(text) + "'");
}

SamplerOutput smc_run(const FKModel& fk, const SmcOptions& options, RandomStream& rng) {
  TabularAccess access(fk.instance());
  return smc_run(fk, access, options, rng);
}

SamplerOutput smc_run(const FKModel& fk, ModelAccess& access, const SmcOptions& o, RandomStream& rng) {
  if (o.N == 0) throw Error("smc_run: N must be at least 1");
  const Shape& shape = fk.shape();
  if (!(access.shape() == shape)) throw Error("smc_run: access shape differs from FK model");
  const bool mc = o.normalizer == NormalizerMode::monte_carlo && fk.kind() == ProposalTag::optimal;
  if (mc && (o.mc_samples == 0 || !(o.rs_threshold > 0.0)))
    throw Error("smc_run: Monte-Carlo mode needs mc_samples >= 1 and a positive rejection threshold");
  if (o.scheme == ResampleScheme::stratified) {
    if (mc) throw Error("smc_run: stratified resampling needs exact normalizers");
    return smc_stratified(fk, o, rng);
  }

  const int T = shape.T;
  const int B = shape.B;
  const std::size_t N = o.N;
  const double rs_delta = o.delta / (2.0 * static_cast<double>(N) * T);
  const auto start = access.counts();
  SamplerOutput out;
  std::vector<double> cache(static_cast<std::size_t>(B));

  // Returns the child rank and its log twist.
  auto propagate = [&](Node parent) -> std::pair<std::size_t, double> {
    const int t = parent.t + 1;
    Symbol s = 0;
    switch (fk.kind()) {
      case ProposalTag::naive: {
        s = access.draw_next(parent, rng);
        const Node child = parent.child(s, B);
        return {child.index, std::log(access.twist(child))};
      }
      case ProposalTag::optimal:
        if (mc) {
          std::fill(cache.begin(), cache.end(), -1.0);
          auto draw = rejection_sample([&] { return access.draw_next(parent, rng); },
                                       [&](Symbol z) { return cache[static_cast<std::size_t>(z)] =
                                                           access.twist(parent.child(z, B)); },
                                       o.rs_threshold, rs_delta, rng);
          if (!draw.accepted) out.failed = true;
          const Node child = parent.child(draw.symbol, B);
          double v = cache[static_cast<std::size_t>(draw.symbol)];
          if (v < 0.0) v = access.twist(child);
          return {child.index, std::log(v)};
        } else {
          s = static_cast<Symbol>(rng.categorical(fk.kernel_row(t, parent.index)));
          out.base_queries += 1;
          out.reward_queries += static_cast<std::uint64_t>(B);
          const Node child = parent.child(s, B);
          return {child.index, std::log(fk.instance().twist.value(child))};
        }
      case ProposalTag::custom: {
        s = static_cast<Symbol>(rng.categorical(fk.kernel_row(t, parent.index)));
        out.base_queries += 1;
        const Node child = parent.child(s, B);
        return {child.index, std::log(access.twist(child))};
      }
    }
    return {0, 0.0};
  };

  std::vector<std::size_t> x(N), xn(N);
  std::vector<double> lv(N), lvn(N), plv(N), plvn(N), logw(N), w;

  auto weigh = [&](int t) {
    for (std::size_t i = 0; i < N; ++i) {
      const Node xi{t, x[i]};
      if (mc) {
        const Node parent = xi.parent(B);
        const double zhat = empirical_expectation([&] { return access.draw_next(parent, rng); },
                                                  [&](Symbol z) { return access.twist(parent.child(z, B)); },
                                                  o.mc_samples);
        logw[i] = std::log(zhat) - plv[i];
      } else if (fk.kind() == ProposalTag::naive) {
        logw[i] = lv[i] - plv[i];
      } else {
        logw[i] = std::log(fk.potential(xi));
      }
    }
  };

  for (std::size_t i = 0; i < N; ++i) {
    plv[i] = std::log(access.twist(Node{}));
    std::tie(x[i], lv[i]) = propagate(Node{});
  }
  weigh(1);
  for (int t = 2; t <= T; ++t) {
    normalize_log_weights(logw, w, t - 1);
    const auto anc = resample_multinomial(w, N, rng, t - 1);
    for (std::size_t i = 0; i < N; ++i) {
      const std::size_t a = anc[i];
      plvn[i] = lv[a];
      std::tie(xn[i], lvn[i]) = propagate(Node{t - 1, x[a]});
    }
    x.swap(xn);
    lv.swap(lvn);
    plv.swap(plvn);
    weigh(t);
  }
  normalize_log_weights(logw, w, T);
  const auto anc = resample_multinomial(w, N, rng, T);
  out.leaf = x[anc[rng.below(N)]];

  const auto end = access.counts();
  out.base_queries += end.base - start.base;
  out.reward_queries += end.reward - start.reward;
  return out;
}

SamplerOutput spgsmc_run(const Instance& instance, const SpgsmcMode& mode, RandomStream& rng) {
  TabularAccess access(instance);
  return spgsmc_run(access, mode, rng);
}

SamplerOutput spgsmc_run(ModelAccess& access, const SpgsmcMode& mode, RandomStream& rng) {
  const auto start = access.counts();
  SamplerOutput out;
  if (mode.kind == SpgsmcMode::Kind::pool) {
    auto ap = pool_proposal(access, mode.M, rng);
    out.leaf = ap.leaf;
    out.pool_normalizers = std::move(ap.pool_normalizers);
    out.log_weight = ap.log_weight;
  } else {
    const Shape& shape = access.shape();
    std::vector<double> tilt(static_cast<std::size_t>(shape.B));
    Node node;
    for (int t = 0; t < shape.T; ++t) {
      const auto row = access.next_row(node);
      for (int c = 0; c < shape.B; ++c)
        tilt[static_cast<std::size_t>(c)] = row[static_cast<std::size_t>(c)] * access.twist(node.child(c, shape.B));
      node = node.child(static_cast<Symbol>(rng.categorical(tilt)), shape.B);
      out.base_queries += 1;
    }
    out.leaf = node.index;
  }
  const auto end = access.counts();
  out.base_queries += end.base - start.base;
  out.reward_queries += end.reward - start.reward;
  return out;
}

AugmentedProposal pool_proposal(ModelAccess& access, std::size_t M, RandomStream& rng) {
  if (M == 0) throw Error("pool size must be at least 1");
  const Shape& shape = access.shape();
  AugmentedProposal ap;
  ap.log_twist.reserve(static_cast<std::size_t>(shape.T));
  ap.pool_normalizers.reserve(static_cast<std::size_t>(shape.T));
  std::vector<Node> cand(M);
  std::vector<double> v(M);
  Node node;
  for (int t = 0; t < shape.T; ++t) {
    double sum = 0.0;
    for (std::size_t j = 0; j < M; ++j) {
      cand[j] = node.child(access.draw_next(node, rng), shape.B);
      v[j] = access.twist(cand[j]);
      sum += v[j];
    }
    const double zbar = sum / static_cast<double>(M);
    const std::size_t a = rng.categorical(v);
    node = cand[a];
    ap.log_twist.push_back(std::log(v[a]));
    ap.pool_normalizers.push_back(zbar);
    ap.log_weight += std::log(v[a]) - std::log(zbar);
  }
  ap.leaf = node.index;
  return ap;
}

double recompute_log_weight(const Instance& instance, const AugmentedProposal& proposal) {
  const Shape& shape = instance.shape();
  if (proposal.pool_normalizers.size() != static_cast<std::size_t>(shape.T))
    throw Error("augmented proposal has the wrong number of normalizers");
  double lw = 0.0;
  const Node leaf{shape.T, proposal.leaf};
  for (int t = 1; t <= shape.T; ++t) {
    const Node prefix{t, ancestor(leaf, t, shape.B)};
    lw += std::log(instance.twist.value(prefix)) - std::log(proposal.pool_normalizers[static_cast<std::size_t>(t - 1)]);
  }
  return lw;
}

}  // namespace tiltlab
