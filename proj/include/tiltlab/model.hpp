#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tiltlab {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

using Symbol = int;

/// Largest supported leaf count B^T.
inline constexpr std::size_t kMaxLeaves = std::size_t{1} << 20;

/// Alphabet size and horizon. Length-t prefixes are ranked 0..B^t-1 in
/// lexicographic order, so the children of rank i are i*B .. i*B+B-1.
struct Shape {
  int B = 2;
  int T = 1;

  std::size_t count(int t) const;
  std::size_t leaves() const { return count(T); }
  /// Throws Error unless B >= 2, T >= 1 and B^T <= kMaxLeaves.
  void validate() const;
  bool operator==(const Shape&) const = default;
};

/// A prefix by length and lexicographic rank.
struct Node {
  int t = 0;
  std::size_t index = 0;

  Node child(Symbol s, int B) const { return {t + 1, index * static_cast<std::size_t>(B) + s}; }
  Node parent(int B) const { return {t - 1, index / static_cast<std::size_t>(B)}; }
  Symbol last(int B) const { return static_cast<Symbol>(index % static_cast<std::size_t>(B)); }
  auto operator<=>(const Node&) const = default;
};

struct Prefix {
  std::vector<Symbol> symbols;

  int length() const { return static_cast<int>(symbols.size()); }
  /// "-" for the empty prefix, otherwise symbols joined by '.'.
  std::string to_string() const;
  static Prefix parse(std::string_view text);
  auto operator<=>(const Prefix&) const = default;
};

Node to_node(const Prefix& prefix, int B);
Prefix to_prefix(Node node, int B);
/// Rank of the length-`t` ancestor of `node`.
std::size_t ancestor(Node node, int t, int B);

/// Next-symbol rows for every prefix of length < T.
class ReferenceModel {
 public:
  /// rows[t] holds B^(t+1) entries: row of prefix i at positions i*B .. i*B+B-1.
  /// Rows must be nonnegative and sum to 1 within 1e-9; they are renormalized.
  ReferenceModel(Shape shape, std::vector<std::vector<double>> rows);

  const Shape& shape() const { return shape_; }
  std::span<const double> row(Node prefix) const;
  std::span<const double> level(int t) const { return rows_.at(t); }
  double prob(Node prefix, Symbol s) const { return row(prefix)[s]; }

  /// Marginal probability of every length-t prefix.
  std::vector<double> marginal(int t) const;

 private:
  Shape shape_;
  std::vector<std::vector<double>> rows_;
};

/// Positive prefix scores for lengths 0..T; root equals 1; leaves are the reward.
class TwistModel {
 public:
  TwistModel(Shape shape, std::vector<std::vector<double>> values);

  const Shape& shape() const { return shape_; }
  double value(Node prefix) const { return values_[prefix.t][prefix.index]; }
  std::span<const double> level(int t) const { return values_.at(t); }
  std::span<const double> terminal() const { return values_.back(); }
  const std::vector<std::vector<double>>& table() const { return values_; }

 private:
  Shape shape_;
  std::vector<std::vector<double>> values_;
};

struct Instance {
  std::string id;
  /// Prompt label; carried as metadata only.
  std::string prompt;
  ReferenceModel reference;
  TwistModel twist;

  Instance(std::string id, ReferenceModel reference, TwistModel twist, std::string prompt = {});
  const Shape& shape() const { return reference.shape(); }
};

Instance parse_instance(std::string_view text);
std::string serialize_instance(const Instance& instance);
Instance read_instance(const std::filesystem::path& path);
void write_instance(const Instance& instance, const std::filesystem::path& path);

/// Bellman recursion from terminal values, rescaled so the root equals 1.
TwistModel optimal_twist(const ReferenceModel& reference, std::span<const double> terminal);

/// Multiplies values at lengths 1..T-1 by log-uniform factors in [1/(1+gamma), 1+gamma].
TwistModel perturb_twist(const TwistModel& twist, double gamma, std::uint64_t seed);

struct RandomInstanceSpec {
  int B = 2;
  int T = 2;
  /// Terminal rewards are exp(U(-spread, spread)).
  double spread = 1.0;
  double gamma = 0.0;
  /// Row entries are drawn uniformly on [floor, 1] before normalization.
  double row_floor = 0.05;
  std::uint64_t seed = 0;
};

Instance random_instance(const RandomInstanceSpec& spec);

}  // namespace tiltlab
