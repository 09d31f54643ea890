#include "tiltlab/distribution.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace tiltlab {

TrajectoryDistribution::TrajectoryDistribution(Shape shape, int length, std::vector<double> probs)
    : shape_(shape), length_(length), probs_(std::move(probs)) {
  if (length_ < 0 || length_ > shape_.T) throw Error("distribution length out of range");
  if (probs_.size() != shape_.count(length_)) throw Error("distribution must cover every prefix of its length");
  double sum = 0.0;
  for (double p : probs_) {
    if (!(p >= 0.0)) throw Error("negative probability in distribution");
    sum += p;
  }
  const double tol = 1e-12 + 1e-15 * static_cast<double>(probs_.size());
  if (std::abs(sum - 1.0) > tol) throw Error("distribution does not sum to 1");
}

TrajectoryDistribution TrajectoryDistribution::from_masses(Shape shape, int length, std::vector<double> masses) {
  double total = 0.0;
  for (double m : masses) total += m;
  if (!(total > 0.0) || !std::isfinite(total)) throw Error("unnormalized mass is zero or non-finite");
  for (double& m : masses) m /= total;
  return TrajectoryDistribution(shape, length, std::move(masses));
}

TrajectoryDistribution TrajectoryDistribution::marginal(int t) const {
  if (t < 0 || t > length_) throw Error("marginal length out of range");
  std::vector<double> m(shape_.count(t), 0.0);
  const std::size_t stride = shape_.count(length_ - t);
  for (std::size_t i = 0; i < probs_.size(); ++i) m[i / stride] += probs_[i];
  return TrajectoryDistribution(shape_, t, std::move(m));
}

std::string TrajectoryDistribution::to_csv() const {
  std::ostringstream out;
  out << "prefix,probability\n";
  char buf[40];
  for (std::size_t i = 0; i < probs_.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", probs_[i]);
    out << to_prefix({length_, i}, shape_.B).to_string() << ',' << buf << '\n';
  }
  return out.str();
}

double tv_distance(const TrajectoryDistribution& p, const TrajectoryDistribution& q) {
  if (!(p.shape() == q.shape()) || p.length() != q.length())
    throw Error("tv_distance: distributions have different shapes or lengths");
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) sum += std::abs(p[i] - q[i]);
  return 0.5 * sum;
}

}  // namespace tiltlab
