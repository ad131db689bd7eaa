// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace hacm {

/// Seeded generator with platform-independent draws. Child streams are
/// derived by hashing the master seed with integer tags, so per-sample
/// streams do not depend on the order in which they are consumed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  static std::uint64_t derive(std::uint64_t seed, std::initializer_list<std::uint64_t> tags);
  static Rng split(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
    return Rng(derive(seed, tags));
  }

  std::uint64_t next() { return engine_(); }
  /// Uniform on the open interval (0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller.
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

 private:
  std::mt19937_64 engine_;
};

}  // namespace hacm
