#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "slicemap/tensor.hpp"

namespace slicemap {

struct AdamConfig {
  double learning_rate = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  bool operator==(const AdamConfig&) const = default;
};

// Adaptive-moment optimizer state. Moments are allocated on the first step
// and keep the shapes of the parameters they track.
template <typename T>
struct AdamState {
  AdamConfig config;
  std::int64_t step = 0;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
  // Optional per-parameter multiplier on the learning rate (empty = all 1).
  std::vector<double> lr_scale;
};

// Updates `params` in place. Throws ShapeError when params, grads and the
// accumulated moments disagree.
template <typename T>
void adam_step(std::span<Tensor<T>> params, std::span<const Tensor<T>> grads, AdamState<T>& state);

}  // namespace slicemap
