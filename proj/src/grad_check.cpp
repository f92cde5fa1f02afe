#include "mst/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mst/errors.hpp"

namespace mst {

GradCheckResult grad_check(const std::function<Tensor<double>()>& loss, std::vector<Parameter<double>>& params,
                           const GradCheckOptions& options) {
  for (auto& p : params) p.value.zero_grad();
  const Tensor<double> root = loss();
  root.backward();
  const double floor = options.relative_floor ? options.floor * std::max(1.0, std::abs(root.item())) : options.floor;

  GradCheckResult result;
  RngState sampler{options.sample_seed, 0};
  for (auto& p : params) {
    const std::size_t n = p.value.numel();
    std::vector<double> analytic(n, 0.0);
    const auto g = p.value.grad();
    if (!g.empty()) std::copy(g.begin(), g.end(), analytic.begin());

    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (n > options.max_per_param) {
      // Partial Fisher-Yates: first max_per_param entries are a uniform sample.
      for (std::size_t i = 0; i < options.max_per_param; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(sampler.uniform() * static_cast<double>(n - i));
        std::swap(coords[i], coords[std::min(j, n - 1)]);
      }
      coords.resize(options.max_per_param);
    }

    auto values = p.value.mutable_data();
    for (std::size_t idx : coords) {
      const double saved = values[idx];
      values[idx] = saved + options.step;
      const double up = loss().item();
      values[idx] = saved - options.step;
      const double down = loss().item();
      values[idx] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double err =
          std::abs(analytic[idx] - numeric) / std::max({std::abs(analytic[idx]), std::abs(numeric), floor});
      ++result.coordinates;
      if (result.worst.empty() || err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst = p.name + "[" + std::to_string(idx) + "]";
        result.worst_analytic = analytic[idx];
        result.worst_numeric = numeric;
      }
    }
  }
  for (auto& p : params) p.value.zero_grad();
  return result;
}

}  // namespace mst
