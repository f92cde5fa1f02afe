#pragma once

#include <cstdint>
#include <initializer_list>

namespace mst {

/// Counter-based generator: the n-th draw is a pure function of (seed, n),
/// so streams are reproducible bit-for-bit and cheap to fork or serialize.
struct RngState {
  std::uint64_t seed = 0;
  std::uint64_t counter = 0;

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 bits of mantissa.
  double uniform();
  /// Standard normal via Box-Muller; consumes two draws.
  double normal();

  /// Independent stream keyed by this seed and the given tags.
  RngState fork(std::initializer_list<std::uint64_t> tags) const;

  bool operator==(const RngState&) const = default;
};

std::uint64_t mix64(std::uint64_t x);

}  // namespace mst
