#include "slicemap/optim.hpp"

#include <cmath>

#include "slicemap/error.hpp"

namespace slicemap {

template <typename T>
void adam_step(std::span<Tensor<T>> params, std::span<const Tensor<T>> grads, AdamState<T>& state) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: parameter and gradient counts differ");
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.size(), T(0));
      state.second_moment.emplace_back(p.size(), T(0));
    }
  }
  if (state.first_moment.size() != params.size()) throw ShapeError("adam_step: optimizer state tracks other parameters");
  if (!state.lr_scale.empty() && state.lr_scale.size() != params.size()) {
    throw ShapeError("adam_step: lr_scale must have one entry per parameter");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != grads[i].shape() || state.first_moment[i].size() != params[i].size()) {
      throw ShapeError("adam_step: shape mismatch for parameter " + std::to_string(i) + " " +
                       to_string(params[i].shape()) + " vs gradient " + to_string(grads[i].shape()));
    }
  }

  ++state.step;
  const auto& c = state.config;
  const double bias1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bias2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double lr = c.learning_rate * (state.lr_scale.empty() ? 1.0 : state.lr_scale[i]);
    auto p = params[i].mutable_data();
    const auto g = grads[i].data();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g[j];
      m[j] = static_cast<T>(c.beta1 * m[j] + (1.0 - c.beta1) * gj);
      v[j] = static_cast<T>(c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj);
      const double m_hat = m[j] / bias1;
      const double v_hat = v[j] / bias2;
      p[j] = static_cast<T>(p[j] - lr * m_hat / (std::sqrt(v_hat) + c.epsilon));
    }
  }
}

template void adam_step(std::span<Tensor<float>>, std::span<const Tensor<float>>, AdamState<float>&);
template void adam_step(std::span<Tensor<double>>, std::span<const Tensor<double>>, AdamState<double>&);

}  // namespace slicemap
