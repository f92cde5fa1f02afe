#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mst/tensor.hpp"

namespace mst {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-10;
};

/// Adam with bias correction over a fixed parameter list:
///   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
///   theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)
template <typename T>
class Adam {
 public:
  Adam(std::vector<Parameter<T>> params, AdamOptions options);

  /// One update from the parameters' accumulated gradients. Throws
  /// ContractError if a parameter never received a gradient.
  void step();
  /// Learning rate used for the next step.
  double current_lr() const;

  /// Optional step -> learning-rate map (step counted from 1).
  std::function<double(std::uint64_t)> schedule;

  std::uint64_t steps() const { return t_; }
  const AdamOptions& options() const { return options_; }
  const std::vector<Parameter<T>>& parameters() const { return params_; }
  std::vector<std::vector<T>>& first_moments() { return m_; }
  std::vector<std::vector<T>>& second_moments() { return v_; }
  const std::vector<std::vector<T>>& first_moments() const { return m_; }
  const std::vector<std::vector<T>>& second_moments() const { return v_; }
  /// Restores a saved counter (checkpoint resume).
  void set_steps(std::uint64_t t) { t_ = t; }

 private:
  std::vector<Parameter<T>> params_;
  AdamOptions options_;
  std::vector<std::vector<T>> m_, v_;
  std::uint64_t t_ = 0;
};

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(const std::vector<Parameter<T>>& params, double max_norm);

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace mst
