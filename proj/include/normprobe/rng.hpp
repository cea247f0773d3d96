// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

#include "normprobe/tensor.hpp"

namespace normprobe {

/// Seeded generator with a platform-independent output stream.
///
/// Built on std::mt19937_64 (whose sequence the standard pins down) with
/// hand-rolled uniform and normal transforms, since the standard
/// distributions are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via the Marsaglia polar method.
  double normal();

  /// Independent child stream; same (seed, stream) always yields the same child.
  Rng fork(std::uint64_t stream) const;

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// splitmix64 finalizer, used to decorrelate derived seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

template <typename T>
Tensor3<T> gaussian(Rng& rng, Shape3 shape);

template <typename T>
Tensor3<T> uniform(Rng& rng, Shape3 shape, double lo, double hi);

}  // namespace normprobe
