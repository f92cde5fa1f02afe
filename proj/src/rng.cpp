#include "mst/rng.hpp"

#include <cmath>
#include <numbers>

namespace mst {

std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

std::uint64_t RngState::next_u64() {
  ++counter;
  return mix64(seed + counter * 0x9e3779b97f4a7c15ULL);
}

double RngState::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double RngState::normal() {
  // 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

RngState RngState::fork(std::initializer_list<std::uint64_t> tags) const {
  std::uint64_t s = mix64(seed ^ 0x6a09e667f3bcc909ULL);
  for (std::uint64_t t : tags) s = mix64(s ^ mix64(t + 0x3c6ef372fe94f82bULL));
  return RngState{s, 0};
}

}  // namespace mst
