#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "mst/model.hpp"

namespace mst {

struct OpCheckReport {
  std::string op;
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  bool passed = false;
  std::string worst;
};

inline constexpr double kGradCheckTolerance = 1e-4;

/// Configuration used for the end-to-end loss check.
ModelConfig gradcheck_model_config();

/// Finite-difference check (64-bit, h = 1e-5) of every differentiable op on
/// three random shapes each, a diamond-shaped shared-subexpression graph,
/// the loss terms, and the full multi-scene loss of a small model. Writes one
/// line per entry to `report` if given.
std::vector<OpCheckReport> run_gradcheck_suite(std::uint64_t seed, std::ostream* report);

}  // namespace mst
