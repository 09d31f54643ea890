#pragma once

#include <span>
#include <string>
#include <vector>

#include "tiltlab/model.hpp"

namespace tiltlab {

/// Probabilities over all length-t prefixes, indexed by lexicographic rank.
class TrajectoryDistribution {
 public:
  /// Requires B^length entries, all nonnegative, summing to 1 within 1e-12.
  TrajectoryDistribution(Shape shape, int length, std::vector<double> probs);
  /// Normalizes nonnegative masses with positive total.
  static TrajectoryDistribution from_masses(Shape shape, int length, std::vector<double> masses);

  const Shape& shape() const { return shape_; }
  int length() const { return length_; }
  std::size_t size() const { return probs_.size(); }
  double operator[](std::size_t index) const { return probs_[index]; }
  std::span<const double> probs() const { return probs_; }

  /// Pushforward onto length-t prefixes, t <= length().
  TrajectoryDistribution marginal(int t) const;
  /// Rows "prefix,probability" with a header.
  std::string to_csv() const;

 private:
  Shape shape_;
  int length_;
  std::vector<double> probs_;
};

/// Half the L1 distance. Throws Error on shape or length mismatch.
double tv_distance(const TrajectoryDistribution& p, const TrajectoryDistribution& q);

}  // namespace tiltlab
