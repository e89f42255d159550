#include "omniseq/adam.hpp"

#include <cmath>

namespace omniseq {

AdamState AdamState::for_shape(const Matrix& param, AdamHyperParams hyper) {
  return AdamState{Matrix(param.rows(), param.cols()), Matrix(param.rows(), param.cols()), 0,
                   hyper};
}

void adam_step(Matrix& param, const Matrix& grad, AdamState& state) {
  require_same_shape(param, grad, "adam_step");
  require_same_shape(param, state.first_moment, "adam_step moments");
  const auto& h = state.hyper;
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double correction1 = 1.0 - std::pow(h.beta1, t);
  const double correction2 = 1.0 - std::pow(h.beta2, t);

  auto p = param.values();
  auto g = grad.values();
  auto m = state.first_moment.values();
  auto v = state.second_moment.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
    v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
    const double m_hat = m[i] / correction1;
    const double v_hat = v[i] / correction2;
    p[i] -= h.lr * m_hat / (std::sqrt(v_hat) + h.epsilon);
  }
}

}  // namespace omniseq
