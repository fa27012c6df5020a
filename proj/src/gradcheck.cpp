#include "slicemap/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "slicemap/error.hpp"

namespace slicemap {

GradCheckResult finite_difference_check(const std::function<Tensor<double>()>& loss_fn,
                                        std::span<Tensor<double>> params, double eps,
                                        std::size_t max_coords_per_param, std::uint64_t seed) {
  const Tensor<double> loss = loss_fn();
  if (!std::isfinite(loss.item())) throw NumericError("finite_difference_check: loss is not finite");
  const auto analytic = grad(loss, std::span<const Tensor<double>>(params.data(), params.size()));

  auto evaluate = [&] {
    NoGradGuard no_grad;
    const double v = loss_fn().item();
    if (!std::isfinite(v)) throw NumericError("finite_difference_check: perturbed loss is not finite");
    return v;
  };

  std::mt19937_64 rng(seed);
  GradCheckResult result;
  for (std::size_t p = 0; p < params.size(); ++p) {
    std::vector<std::size_t> coords(params[p].size());
    std::iota(coords.begin(), coords.end(), 0);
    if (max_coords_per_param > 0 && coords.size() > max_coords_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(max_coords_per_param);
    }
    auto values = params[p].mutable_data();
    for (std::size_t j : coords) {
      const double original = values[j];
      values[j] = original + eps;
      const double up = evaluate();
      values[j] = original - eps;
      const double down = evaluate();
      values[j] = original;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[p][j];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-12});
      ++result.coordinates_checked;
      if (err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst_param = p;
        result.worst_index = j;
      }
    }
  }
  return result;
}

}  // namespace slicemap
