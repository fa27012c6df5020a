#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>

#include "slicemap/tensor.hpp"

namespace slicemap {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  std::size_t coordinates_checked = 0;
};

// Compares reverse-mode gradients of `loss_fn` against central differences.
// `loss_fn` must rebuild the scalar loss from the current parameter values.
// Relative error per coordinate is |a - n| / max(|a|, |n|, 1e-12).
// When max_coords_per_param > 0 a seeded random subset of each parameter is
// checked, otherwise every coordinate. Throws NumericError on non-finite
// evaluations.
GradCheckResult finite_difference_check(const std::function<Tensor<double>()>& loss_fn,
                                        std::span<Tensor<double>> params, double eps = 1e-6,
                                        std::size_t max_coords_per_param = 0, std::uint64_t seed = 0);

}  // namespace slicemap
