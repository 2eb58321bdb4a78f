#pragma once

#include <cstdint>
#include <random>

namespace marginlab {

// Deterministic random source. All randomness in the library flows through
// this wrapper so that every draw sequence is documented and replayable:
//
//   next_u64()      one raw mt19937_64 output
//   uniform()       (next_u64() >> 11) * 2^-53, in [0, 1)
//   below(n)        next_u64() % n
//   gaussian()      Box-Muller; consumes two uniform() draws per pair,
//                   second value cached and returned on the next call
//
// mt19937_64 is fully specified by the standard, so sequences are identical
// across platforms and standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  double gaussian();

 private:
  std::mt19937_64 engine_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace marginlab
