#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "tiltlab/model.hpp"

// Brute-force references computed from symbol sequences, independent of the
// rank arithmetic used by the library.
namespace bf {

using tiltlab::Instance;
using tiltlab::Node;
using tiltlab::Prefix;

inline std::vector<int> digits(std::size_t index, int t, int B) {
  std::vector<int> s(static_cast<std::size_t>(t));
  for (int i = t - 1; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = static_cast<int>(index % static_cast<std::size_t>(B));
    index /= static_cast<std::size_t>(B);
  }
  return s;
}

inline Node node_of(const std::vector<int>& s, int B) { return tiltlab::to_node(Prefix{s}, B); }

inline double path_prob(const Instance& inst, const std::vector<int>& s) {
  double p = 1.0;
  std::vector<int> prefix;
  for (int x : s) {
    p *= inst.reference.row(node_of(prefix, inst.shape().B))[static_cast<std::size_t>(x)];
    prefix.push_back(x);
  }
  return p;
}

inline double twist(const Instance& inst, const std::vector<int>& s) {
  return inst.twist.value(node_of(s, inst.shape().B));
}

inline std::vector<double> normalize(std::vector<double> v) {
  double z = 0.0;
  for (double x : v) z += x;
  for (double& x : v) x /= z;
  return v;
}

/// pi_ref(s_{1:t}) V(s_{1:t}) normalized over all length-t sequences.
inline std::vector<double> tilted(const Instance& inst, int t) {
  const int B = inst.shape().B;
  std::size_t n = 1;
  for (int i = 0; i < t; ++i) n *= static_cast<std::size_t>(B);
  std::vector<double> m(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto s = digits(i, t, B);
    m[i] = path_prob(inst, s) * twist(inst, s);
  }
  return normalize(m);
}

/// Sum over children of pi_ref(c | s) V(s c).
inline double lookahead(const Instance& inst, const std::vector<int>& s) {
  const int B = inst.shape().B;
  const auto row = inst.reference.row(node_of(s, B));
  double z = 0.0;
  for (int c = 0; c < B; ++c) {
    auto child = s;
    child.push_back(c);
    z += row[static_cast<std::size_t>(c)] * twist(inst, child);
  }
  return z;
}

/// Product of normalized local tilts.
inline std::vector<double> local_tilt_law(const Instance& inst) {
  const int B = inst.shape().B, T = inst.shape().T;
  std::vector<double> out(inst.shape().leaves());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto s = digits(i, T, B);
    double p = 1.0;
    std::vector<int> prefix;
    for (int x : s) {
      const double z = lookahead(inst, prefix);
      auto child = prefix;
      child.push_back(x);
      p *= inst.reference.row(node_of(prefix, B))[static_cast<std::size_t>(x)] * twist(inst, child) / z;
      prefix = child;
    }
    out[i] = p;
  }
  return out;
}

/// max over t = 0..T-1 of max(Z/V, V/Z) - 1.
inline double local_error(const Instance& inst) {
  const int B = inst.shape().B, T = inst.shape().T;
  double e = 0.0;
  for (int t = 0; t < T; ++t)
    for (std::size_t i = 0; i < inst.shape().count(t); ++i) {
      const auto s = digits(i, t, B);
      const double r = lookahead(inst, s) / twist(inst, s);
      e = std::max({e, r - 1.0, 1.0 / r - 1.0});
    }
  return e;
}

/// max over t = 1..T of max(V/V_parent, V_parent/V).
inline double ratio_bound(const Instance& inst) {
  const int B = inst.shape().B, T = inst.shape().T;
  double L = 1.0;
  for (int t = 1; t <= T; ++t)
    for (std::size_t i = 0; i < inst.shape().count(t); ++i) {
      auto s = digits(i, t, B);
      const double v = twist(inst, s);
      s.pop_back();
      const double r = v / twist(inst, s);
      L = std::max({L, r, 1.0 / r});
    }
  return L;
}

inline double tv(const std::vector<double>& p, std::span<const double> q) {
  double d = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) d += std::abs(p[i] - q[i]);
  return 0.5 * d;
}

}  // namespace bf
