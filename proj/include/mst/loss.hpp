#pragma once

#include <cstddef>
#include <vector>

#include "mst/model.hpp"
#include "mst/pose.hpp"

namespace mst {

/// Learnable balancing scalars of the pose loss.
template <typename T>
struct LossParams {
  Tensor<T> s_x, s_q;

  static LossParams make(double s_x_init, double s_q_init);
  /// Named as "loss.s_x" / "loss.s_q".
  std::vector<Parameter<T>> parameters() const;
};

/// ||x0 - x_hat||_2
template <typename T>
Tensor<T> position_loss(const Tensor<T>& x_hat, const Tensor<T>& x0);

/// ||q0 - q_hat / ||q_hat|| ||_2. Throws DegenerateOrientationError when
/// ||q_hat|| <= 1e-8.
template <typename T>
Tensor<T> orientation_loss(const Tensor<T>& q_hat, const Tensor<T>& q0);

/// l_x exp(-s_x) + s_x + l_q exp(-s_q) + s_q
template <typename T>
Tensor<T> pose_loss(const Tensor<T>& l_x, const Tensor<T>& l_q, const LossParams<T>& p);

/// -logprobs[s0]
template <typename T>
Tensor<T> nll_scene(const Tensor<T>& logprobs, std::size_t s0);

/// Balanced pose loss of the regressed slot plus the scene NLL. The target
/// orientation is sign-canonicalized first.
template <typename T>
Tensor<T> multiscene_loss(const ForwardOutput<T>& out, const Pose& target, std::size_t s0, const LossParams<T>& p);

template <typename T>
Tensor<T> position_tensor(const Pose& pose);
template <typename T>
Tensor<T> orientation_tensor(const Pose& pose);

}  // namespace mst
