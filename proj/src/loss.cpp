#include "mst/loss.hpp"

#include "mst/errors.hpp"

namespace mst {

template <typename T>
LossParams<T> LossParams<T>::make(double s_x_init, double s_q_init) {
  return {Tensor<T>::leaf({}, {static_cast<T>(s_x_init)}), Tensor<T>::leaf({}, {static_cast<T>(s_q_init)})};
}

template <typename T>
std::vector<Parameter<T>> LossParams<T>::parameters() const {
  return {{"loss.s_x", s_x}, {"loss.s_q", s_q}};
}

template <typename T>
Tensor<T> position_loss(const Tensor<T>& x_hat, const Tensor<T>& x0) {
  if (x_hat.shape() != x0.shape()) {
    throw ShapeError("position_loss: " + shape_str(x_hat.shape()) + " vs " + shape_str(x0.shape()));
  }
  return l2_norm(sub(x0, x_hat));
}

template <typename T>
Tensor<T> orientation_loss(const Tensor<T>& q_hat, const Tensor<T>& q0) {
  if (q_hat.shape() != q0.shape()) {
    throw ShapeError("orientation_loss: " + shape_str(q_hat.shape()) + " vs " + shape_str(q0.shape()));
  }
  const Tensor<T> n = l2_norm(q_hat);
  if (!(n.item() > T(1e-8))) throw DegenerateOrientationError("orientation_loss: predicted quaternion has ~zero norm");
  return l2_norm(sub(q0, div(q_hat, n)));
}

template <typename T>
Tensor<T> pose_loss(const Tensor<T>& l_x, const Tensor<T>& l_q, const LossParams<T>& p) {
  const Tensor<T> x_term = add(mul(l_x, exp(neg(p.s_x))), p.s_x);
  const Tensor<T> q_term = add(mul(l_q, exp(neg(p.s_q))), p.s_q);
  return add(x_term, q_term);
}

template <typename T>
Tensor<T> nll_scene(const Tensor<T>& logprobs, std::size_t s0) {
  if (logprobs.rank() != 1) throw ShapeError("nll_scene: logprobs must be a vector");
  if (s0 >= logprobs.numel()) {
    throw ContractError("nll_scene: scene " + std::to_string(s0) + " out of range for " +
                        std::to_string(logprobs.numel()) + " scenes");
  }
  return neg(reshape(slice(logprobs, 0, s0, 1), {}));
}

template <typename T>
Tensor<T> position_tensor(const Pose& pose) {
  return Tensor<T>({3}, {static_cast<T>(pose.position[0]), static_cast<T>(pose.position[1]),
                         static_cast<T>(pose.position[2])});
}

template <typename T>
Tensor<T> orientation_tensor(const Pose& pose) {
  const Quaternion q = canonicalize_sign(pose.orientation);
  return Tensor<T>({4}, {static_cast<T>(q.w), static_cast<T>(q.x), static_cast<T>(q.y), static_cast<T>(q.z)});
}

template <typename T>
Tensor<T> multiscene_loss(const ForwardOutput<T>& out, const Pose& target, std::size_t s0, const LossParams<T>& p) {
  const Tensor<T> l_x = position_loss(out.x_hat, position_tensor<T>(target));
  const Tensor<T> l_q = orientation_loss(out.q_hat, orientation_tensor<T>(target));
  return add(pose_loss(l_x, l_q, p), nll_scene(out.scene_logprobs, s0));
}

template struct LossParams<float>;
template struct LossParams<double>;

#define MST_INSTANTIATE(T)                                                                                  \
  template Tensor<T> position_loss<T>(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> orientation_loss<T>(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> pose_loss<T>(const Tensor<T>&, const Tensor<T>&, const LossParams<T>&);                \
  template Tensor<T> nll_scene<T>(const Tensor<T>&, std::size_t);                                           \
  template Tensor<T> multiscene_loss<T>(const ForwardOutput<T>&, const Pose&, std::size_t, const LossParams<T>&); \
  template Tensor<T> position_tensor<T>(const Pose&);                                                       \
  template Tensor<T> orientation_tensor<T>(const Pose&);
MST_INSTANTIATE(float)
MST_INSTANTIATE(double)
#undef MST_INSTANTIATE

}  // namespace mst
