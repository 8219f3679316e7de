#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "utr/tensor.hpp"

namespace utr {

/// Seeded engine. All randomness in the library flows through instances of
/// this class.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0);
  double normal(double mean = 0.0, double stddev = 1.0);
  /// Normal resampled until it lands within two standard deviations.
  double truncated_normal(double stddev);
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);  // inclusive

  Tensor uniform_tensor(Shape shape, double lo, double hi);
  Tensor normal_tensor(Shape shape, double stddev);

  std::mt19937_64& engine() { return engine_; }

  std::string state() const;
  void set_state(const std::string& s);

 private:
  std::mt19937_64 engine_;
};

}  // namespace utr
