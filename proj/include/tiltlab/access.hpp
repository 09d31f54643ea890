#pragma once

#include <cstdint>
#include <span>

#include "tiltlab/model.hpp"
#include "tiltlab/random.hpp"

namespace tiltlab {

struct QueryCounts {
  std::uint64_t base = 0;
  std::uint64_t reward = 0;
};

/// Query interface a sampler uses to reach the reference model and the twist.
class ModelAccess {
 public:
  virtual ~ModelAccess() = default;
  virtual const Shape& shape() const = 0;
  /// One next-symbol draw from the reference row at `prefix`.
  virtual Symbol draw_next(Node prefix, RandomStream& rng) = 0;
  /// One twist evaluation.
  virtual double twist(Node prefix) = 0;
  /// Explicit next-symbol probabilities; not every access mode offers them.
  virtual std::span<const double> next_row(Node prefix) = 0;
  virtual QueryCounts counts() const = 0;
};

/// Direct access to a tabular instance with query counting.
class TabularAccess final : public ModelAccess {
 public:
  explicit TabularAccess(const Instance& instance) : instance_(instance) {}

  const Shape& shape() const override { return instance_.shape(); }
  Symbol draw_next(Node prefix, RandomStream& rng) override {
    ++counts_.base;
    return static_cast<Symbol>(rng.categorical(instance_.reference.row(prefix)));
  }
  double twist(Node prefix) override {
    ++counts_.reward;
    return instance_.twist.value(prefix);
  }
  std::span<const double> next_row(Node prefix) override { return instance_.reference.row(prefix); }
  QueryCounts counts() const override { return counts_; }

 private:
  const Instance& instance_;
  QueryCounts counts_;
};

}  // namespace tiltlab
