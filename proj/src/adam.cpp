#include "mst/adam.hpp"

#include <cmath>

#include "mst/errors.hpp"

namespace mst {

template <typename T>
Adam<T>::Adam(std::vector<Parameter<T>> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  if (!(options_.lr > 0.0)) throw ConfigError("adam: learning rate must be positive");
  if (!(options_.beta1 >= 0.0 && options_.beta1 < 1.0) || !(options_.beta2 >= 0.0 && options_.beta2 < 1.0)) {
    throw ConfigError("adam: betas must be in [0, 1)");
  }
  for (const auto& p : params_) {
    m_.emplace_back(p.value.numel(), T(0));
    v_.emplace_back(p.value.numel(), T(0));
  }
}

template <typename T>
double Adam<T>::current_lr() const {
  return schedule ? schedule(t_ + 1) : options_.lr;
}

template <typename T>
void Adam<T>::step() {
  for (const auto& p : params_) {
    if (p.value.grad().size() != p.value.numel()) throw ContractError("adam: no gradient for parameter " + p.name);
  }
  const double lr = current_lr();
  ++t_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor<T> value = params_[i].value;
    const auto g = value.grad();
    auto theta = value.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double gj = static_cast<double>(g[j]);
      const double mj = b1 * static_cast<double>(m[j]) + (1.0 - b1) * gj;
      const double vj = b2 * static_cast<double>(v[j]) + (1.0 - b2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double update = lr * (mj / c1) / (std::sqrt(vj / c2) + options_.eps);
      theta[j] = static_cast<T>(static_cast<double>(theta[j]) - update);
    }
  }
}

template <typename T>
double clip_grad_norm(const std::vector<Parameter<T>>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    for (T g : p.value.grad()) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double f = max_norm / norm;
    for (const auto& p : params) {
      auto& buf = p.value.impl()->grad;
      for (T& g : buf) g = static_cast<T>(g * f);
    }
  }
  return norm;
}

template class Adam<float>;
template class Adam<double>;
template double clip_grad_norm<float>(const std::vector<Parameter<float>>&, double);
template double clip_grad_norm<double>(const std::vector<Parameter<double>>&, double);

}  // namespace mst
