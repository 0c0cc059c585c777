#pragma once

#include <cstddef>
#include <cstdint>

namespace segadv {

/// SplitMix64: a counter-based generator with 64-bit state. Its output
/// depends only on integer arithmetic, so streams are identical on every
/// platform, unlike the std:: distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  /// Independent stream derived from (seed, purpose tag, index).
  static Rng stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t index = 0);

  std::uint64_t next_u64();

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform in [lo, hi].
  double uniform(double lo, double hi);
  /// Uniform integer in [0, n). n must be positive.
  std::size_t below(std::size_t n);
  /// Uniform integer in [lo, hi].
  long range(long lo, long hi);
  bool bernoulli(double p);

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
};

std::uint64_t mix64(std::uint64_t z);

/// Named sub-stream tags; every random decision draws from one of these.
namespace stream_tag {
inline constexpr std::uint64_t kInit = 0x696e6974;         // "init"
inline constexpr std::uint64_t kDataGen = 0x64617461;      // "data"
inline constexpr std::uint64_t kDataOrder = 0x6f726465;    // "orde"
inline constexpr std::uint64_t kMix = 0x6d697865;          // "mixe"
inline constexpr std::uint64_t kRandomEps = 0x72657073;    // "reps"
inline constexpr std::uint64_t kAugment = 0x61756d67;      // "aumg"
inline constexpr std::uint64_t kEval = 0x6576616c;         // "eval"
}  // namespace stream_tag

}  // namespace segadv
