#include "segadv/rng.hpp"

#include "segadv/error.hpp"

namespace segadv {

namespace {
constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;
}

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Rng Rng::stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t index) {
  std::uint64_t s = mix64(seed + kGolden);
  s = mix64(s ^ (tag * kGolden));
  s = mix64(s ^ (index + 1) * 0xd1b54a32d192ed03ULL);
  return Rng(s);
}

std::uint64_t Rng::next_u64() {
  state_ += kGolden;
  return mix64(state_);
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
  // (next >> 11) / (2^53 - 1) reaches both endpoints.
  const double u = static_cast<double>(next_u64() >> 11) / 9007199254740991.0;
  return lo + (hi - lo) * u;
}

std::size_t Rng::below(std::size_t n) {
  if (n == 0) throw Error(ErrorKind::kInvalidArgument, "Rng::below(0)");
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t v = next_u64();
  while (v >= limit) v = next_u64();
  return static_cast<std::size_t>(v % n);
}

long Rng::range(long lo, long hi) {
  return lo + static_cast<long>(below(static_cast<std::size_t>(hi - lo + 1)));
}

bool Rng::bernoulli(double p) { return uniform() < p; }

}  // namespace segadv
