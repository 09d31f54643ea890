#include "tiltlab/mh.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "tiltlab/oracle.hpp"

namespace tiltlab {

namespace {

bool accept(double log_alpha, RandomStream& rng) {
  if (log_alpha >= 0.0) return true;
  return std::log(rng.uniform()) < log_alpha;
}

void trace_row(std::ostream* trace, std::size_t h, bool accepted, double log_w, std::size_t leaf, const Shape& shape) {
  if (!trace) return;
  *trace << h << ',' << (accepted ? 1 : 0) << ',' << log_w << ',' << to_prefix({shape.T, leaf}, shape.B).to_string()
         << '\n';
}

std::vector<double> normalized(std::span<const double> w, const char* what) {
  std::vector<double> out(w.begin(), w.end());
  double total = 0.0;
  for (double x : out) {
    if (!(x > 0.0)) throw Error(std::string(what) + " weights must be strictly positive");
    total += x;
  }
  for (double& x : out) x /= total;
  return out;
}

}  // namespace

std::size_t default_pool_size(double c_act, int T, double delta) {
  if (!(delta > 0.0 && delta < 1.0)) throw Error("delta must lie in (0,1)");
  const double x = 8.0 * c_act * T * T * std::log(4.0 / delta);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(x * (1.0 - 1e-12))));
}

double default_rs_threshold(double c_act) { return 4.0 * std::ceil(c_act); }

SamplerOutput pool_mh_run(const Instance& instance, const MHChainConfig& config, RandomStream& rng) {
  TabularAccess access(instance);
  const auto z = lookahead_normalizers(instance);
  return pool_mh_run(access, config, rng, &z);
}

SamplerOutput pool_mh_run(ModelAccess& access, const MHChainConfig& config, RandomStream& rng,
                          const std::vector<std::vector<double>>* exact_normalizers) {
  if (config.H == 0) throw Error("MH chain needs H >= 1");
  const Shape& shape = access.shape();
  const auto start = access.counts();
  SamplerOutput out;
  if (exact_normalizers) out.max_normalizer_error = 0.0;
  double lw_acc = 0.0, lv_acc = 0.0;
  for (std::size_t h = 1; h <= config.H; ++h) {
    auto y = pool_proposal(access, config.M, rng);
    ++out.proposals;
    if (exact_normalizers) {
      const Node leaf{shape.T, y.leaf};
      for (int t = 1; t <= shape.T; ++t) {
        const double z = (*exact_normalizers)[static_cast<std::size_t>(t - 1)][ancestor(leaf, t - 1, shape.B)];
        out.max_normalizer_error =
            std::max(out.max_normalizer_error, std::abs(y.pool_normalizers[static_cast<std::size_t>(t - 1)] - z) / z);
      }
    }
    const double lv_y = y.log_twist.back();
    const bool ok = h == 1 || accept(lw_acc + lv_y - y.log_weight - lv_acc, rng);
    if (ok) {
      ++out.accepted;
      out.leaf = y.leaf;
      lw_acc = y.log_weight;
      lv_acc = lv_y;
      out.pool_normalizers = std::move(y.pool_normalizers);
      out.log_weight = y.log_weight;
    }
    trace_row(config.trace, h, ok, y.log_weight, y.leaf, shape);
  }
  const auto end = access.counts();
  out.base_queries = end.base - start.base;
  out.reward_queries = end.reward - start.reward;
  return out;
}

SamplerOutput rejection_mh_run(const Instance& instance, const MHChainConfig& config, RandomStream& rng,
                               const std::vector<std::vector<double>>* normalizers) {
  if (config.H == 0) throw Error("MH chain needs H >= 1");
  const Shape& shape = instance.shape();
  const int B = shape.B;
  TabularAccess access(instance);
  const bool exact = config.mc_samples == 0;
  std::vector<std::vector<double>> own;
  if (exact && !normalizers) own = lookahead_normalizers(instance);
  const auto& z = normalizers ? *normalizers : own;
  const double threshold =
      config.rs_threshold > 0.0 ? config.rs_threshold : default_rs_threshold(activation_constant(instance));
  const double rs_delta = config.delta / (static_cast<double>(shape.T) * static_cast<double>(config.H));

  auto normalizer = [&](Node prefix) {
    if (exact) return z[static_cast<std::size_t>(prefix.t)][prefix.index];
    return empirical_expectation([&] { return access.draw_next(prefix, rng); },
                                 [&](Symbol c) { return access.twist(prefix.child(c, B)); }, config.mc_samples);
  };

  SamplerOutput out;
  std::vector<double> cache(static_cast<std::size_t>(B));
  std::size_t x_leaf = 0;
  double lv_x = 0.0;
  for (std::size_t h = 1; h <= config.H; ++h) {
    // Weights restart every iteration.
    double lw_y = 0.0, lv_y = 0.0;
    Node node;
    for (int t = 0; t < shape.T; ++t) {
      std::fill(cache.begin(), cache.end(), -1.0);
      auto draw = rejection_sample([&] { return access.draw_next(node, rng); },
                                   [&](Symbol c) {
                                     return cache[static_cast<std::size_t>(c)] = access.twist(node.child(c, B));
                                   },
                                   threshold, rs_delta, rng);
      if (!draw.accepted) out.failed = true;
      const Node child = node.child(draw.symbol, B);
      double v = cache[static_cast<std::size_t>(draw.symbol)];
      if (v < 0.0) v = access.twist(child);
      lw_y += std::log(v) - std::log(normalizer(node));
      lv_y = std::log(v);
      node = child;
    }
    ++out.proposals;
    bool ok = h == 1;
    if (!ok) {
      double lw_x = 0.0;
      const Node leaf{shape.T, x_leaf};
      for (int t = 1; t <= shape.T; ++t) {
        const Node prefix{t, ancestor(leaf, t, B)};
        lw_x += std::log(access.twist(prefix)) - std::log(normalizer(prefix.parent(B)));
      }
      ok = accept((lw_x - lv_x) + (lv_y - lw_y), rng);
    }
    if (ok) {
      ++out.accepted;
      x_leaf = node.index;
      lv_x = lv_y;
      out.log_weight = lw_y;
    }
    trace_row(config.trace, h, ok, lw_y, node.index, shape);
  }
  out.leaf = x_leaf;
  const auto counts = access.counts();
  out.base_queries = counts.base;
  out.reward_queries = counts.reward;
  return out;
}

Eigen::MatrixXd independent_mh_kernel(std::span<const double> target, std::span<const double> proposal) {
  if (target.size() != proposal.size() || target.empty()) throw Error("independent_mh_kernel: size mismatch");
  const auto g = normalized(target, "target");
  const auto r = normalized(proposal, "proposal");
  const auto n = static_cast<Eigen::Index>(g.size());
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index x = 0; x < n; ++x) {
    double stay = 1.0;
    for (Eigen::Index y = 0; y < n; ++y) {
      if (y == x) continue;
      const auto ux = static_cast<std::size_t>(x), uy = static_cast<std::size_t>(y);
      const double alpha = std::min(1.0, (g[uy] * r[ux]) / (g[ux] * r[uy]));
      K(x, y) = r[uy] * alpha;
      stay -= K(x, y);
    }
    K(x, x) = stay;
  }
  return K;
}

double ratio_bound(std::span<const double> target, std::span<const double> proposal) {
  if (target.size() != proposal.size() || target.empty()) throw Error("ratio_bound: size mismatch");
  const auto g = normalized(target, "target");
  const auto r = normalized(proposal, "proposal");
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    lo = std::min(lo, g[i] / r[i]);
    hi = std::max(hi, g[i] / r[i]);
  }
  return std::sqrt(hi / lo);
}

double dobrushin_coefficient(const Eigen::MatrixXd& K) {
  double c = 0.0;
  for (Eigen::Index x = 0; x < K.rows(); ++x)
    for (Eigen::Index y = x + 1; y < K.rows(); ++y) c = std::max(c, 0.5 * (K.row(x) - K.row(y)).cwiseAbs().sum());
  return c;
}

AugmentedChain pool_mh_augmented_chain(const Instance& instance, std::size_t M, std::size_t max_states) {
  if (M == 0) throw Error("pool size must be at least 1");
  const Shape& shape = instance.shape();
  const int B = shape.B;
  double per_step = static_cast<double>(M);
  for (std::size_t j = 0; j < M; ++j) per_step *= B;
  if (std::pow(per_step, shape.T) > static_cast<double>(max_states))
    throw Error("augmented space too large to enumerate");

  std::vector<double> q, pi, lw, lv;
  std::vector<std::size_t> leaves;
  std::vector<Symbol> cand(M);
  std::vector<double> v(M);

  std::function<void(Node, double, double, double)> walk = [&](Node node, double logq, double logpi, double logw) {
    if (node.t == shape.T) {
      const double vleaf = instance.twist.value(node);
      q.push_back(std::exp(logq));
      pi.push_back(std::exp(logpi) * vleaf);
      lw.push_back(logw);
      lv.push_back(std::log(vleaf));
      leaves.push_back(node.index);
      return;
    }
    const auto row = instance.reference.row(node);
    std::size_t tuples = 1;
    for (std::size_t j = 0; j < M; ++j) tuples *= static_cast<std::size_t>(B);
    for (std::size_t code = 0; code < tuples; ++code) {
      std::size_t rest = code;
      double p = 1.0, sum = 0.0;
      for (std::size_t j = 0; j < M; ++j) {
        cand[j] = static_cast<Symbol>(rest % static_cast<std::size_t>(B));
        rest /= static_cast<std::size_t>(B);
        p *= row[static_cast<std::size_t>(cand[j])];
        v[j] = instance.twist.value(node.child(cand[j], B));
        sum += v[j];
      }
      if (p == 0.0) continue;
      const double zbar = sum / static_cast<double>(M);
      const auto pool_v = v;
      const auto pool_c = cand;
      for (std::size_t a = 0; a < M; ++a)
        walk(node.child(pool_c[a], B), logq + std::log(p) + std::log(pool_v[a] / sum),
             logpi + std::log(p) - std::log(static_cast<double>(M)), logw + std::log(pool_v[a]) - std::log(zbar));
    }
  };
  walk(Node{}, 0.0, 0.0, 0.0);

  const auto n = static_cast<Eigen::Index>(q.size());
  AugmentedChain chain;
  chain.proposal = Eigen::Map<Eigen::VectorXd>(q.data(), n);
  chain.target = Eigen::Map<Eigen::VectorXd>(pi.data(), n);
  chain.target /= chain.target.sum();
  chain.leaf = std::move(leaves);
  chain.kernel = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index x = 0; x < n; ++x) {
    double stay = 1.0;
    for (Eigen::Index y = 0; y < n; ++y) {
      if (y == x) continue;
      const auto ux = static_cast<std::size_t>(x), uy = static_cast<std::size_t>(y);
      const double log_alpha = lw[ux] + lv[uy] - lw[uy] - lv[ux];
      chain.kernel(x, y) = q[uy] * (log_alpha >= 0.0 ? 1.0 : std::exp(log_alpha));
      stay -= chain.kernel(x, y);
    }
    chain.kernel(x, x) = stay;
  }
  return chain;
}

double pool_mh_ratio_bound(const Instance& instance, std::size_t M) {
  if (M == 0) throw Error("pool size must be at least 1");
  const Shape& shape = instance.shape();
  const auto B = static_cast<std::size_t>(shape.B);
  const double others = static_cast<double>(M - 1);
  // hi/lo: extreme values of V(leaf) * prod Zbar_t / V(s_{1:t}) over reachable states below a prefix.
  auto leaf_v = instance.twist.terminal();
  std::vector<double> hi(leaf_v.begin(), leaf_v.end()), lo = hi;
  for (int t = shape.T - 1; t >= 0; --t) {
    const auto row_level = instance.reference.level(t);
    const auto v = instance.twist.level(t + 1);
    std::vector<double> nhi(shape.count(t)), nlo(shape.count(t));
    for (std::size_t p = 0; p < nhi.size(); ++p) {
      double vmin = std::numeric_limits<double>::infinity(), vmax = 0.0;
      for (std::size_t c = 0; c < B; ++c)
        if (row_level[p * B + c] > 0.0) {
          vmin = std::min(vmin, v[p * B + c]);
          vmax = std::max(vmax, v[p * B + c]);
        }
      double h = 0.0, l = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < B; ++c) {
        const std::size_t j = p * B + c;
        if (row_level[j] == 0.0) continue;
        const double m = static_cast<double>(M);
        h = std::max(h, (v[j] + others * vmax) / (m * v[j]) * hi[j]);
        l = std::min(l, (v[j] + others * vmin) / (m * v[j]) * lo[j]);
      }
      nhi[p] = h;
      nlo[p] = l;
    }
    hi = std::move(nhi);
    lo = std::move(nlo);
  }
  return std::sqrt(hi[0] / lo[0]);
}

Eigen::MatrixXd rejection_mh_exact_kernel(const Instance& instance) {
  const auto target = target_distribution(instance);
  const auto proposal = spgsmc_exact_law(instance);
  return independent_mh_kernel(target.probs(), proposal.probs());
}

}  // namespace tiltlab
