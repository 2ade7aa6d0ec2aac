#pragma once

#include <cstdint>

namespace safempc::rng {

// Counter-based pseudo-random numbers built on the splitmix64 finalizer.
// Every draw is a pure function of (seed, counter), so parallel workers and
// replayed runs produce identical streams regardless of evaluation order.

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

inline std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ull;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBull;
  x ^= x >> 31;
  return x;
}

// Independent sub-stream of a seed, keyed by a small integer id.
inline std::uint64_t substream(std::uint64_t seed, std::uint64_t id) {
  return mix64(seed ^ mix64(id * kGolden + 1));
}

inline std::uint64_t bits(std::uint64_t seed, std::uint64_t counter) {
  return mix64(seed + (counter + 1) * kGolden);
}

// Uniform draw in [0, 1) from the 53 high bits.
inline double uniform01(std::uint64_t seed, std::uint64_t counter) {
  return static_cast<double>(bits(seed, counter) >> 11) * 0x1.0p-53;
}

// Uniform draw in [lo, hi).
inline double uniform(std::uint64_t seed, std::uint64_t counter, double lo, double hi) {
  return lo + (hi - lo) * uniform01(seed, counter);
}

// Stateful convenience wrapper around the counter-based stream.
class Stream {
 public:
  explicit Stream(std::uint64_t seed, std::uint64_t id = 0)
      : seed_(id == 0 ? seed : substream(seed, id)) {}

  double u01() { return uniform01(seed_, counter_++); }
  double u(double lo, double hi) { return uniform(seed_, counter_++, lo, hi); }
  std::uint64_t raw() { return bits(seed_, counter_++); }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

}  // namespace safempc::rng
