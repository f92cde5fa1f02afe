#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "mst/rng.hpp"
#include "mst/tensor.hpp"

namespace mst {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::string worst;  // "<param>[<index>]" of the largest error
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

struct GradCheckOptions {
  double step = 1e-5;
  /// Coordinates checked per parameter; larger tensors are subsampled.
  std::size_t max_per_param = std::numeric_limits<std::size_t>::max();
  std::uint64_t sample_seed = 0;
  /// Lower bound of the error denominator.
  double floor = 1e-8;
  /// Multiply the floor by max(1, |f|), tracking the eps * |f| / h rounding
  /// noise of the differences.
  bool relative_floor = false;
};

/// Compares the reverse-mode gradient of `loss` against central differences
/// (f(t+h) - f(t-h)) / 2h, coordinate by coordinate. Error per coordinate is
/// |analytic - numeric| / max(|analytic|, |numeric|, floor). `loss` must be a
/// pure function of the parameter values. Parameter gradients are left
/// cleared.
GradCheckResult grad_check(const std::function<Tensor<double>()>& loss, std::vector<Parameter<double>>& params,
                           const GradCheckOptions& options = {});

}  // namespace mst
