#include "slicemap/motion.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "slicemap/error.hpp"

namespace slicemap {

namespace {

long mirror(long i, long n) {
  if (n == 1) return 0;
  const long period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

}  // namespace

Volume gaussian_blur(const Volume& volume, double sigma) {
  if (sigma <= 0.0) return volume;
  const long radius = static_cast<long>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (long i = -radius; i <= radius; ++i) {
    kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * double(i * i) / (sigma * sigma));
    total += kernel[static_cast<std::size_t>(i + radius)];
  }
  for (auto& w : kernel) w /= total;

  Volume out = volume;
  Volume tmp = volume;
  const std::array<long, 3> n{long(volume.shape[0]), long(volume.shape[1]), long(volume.shape[2])};
  for (int axis = 0; axis < 3; ++axis) {
    tmp.data = out.data;
    for (long z = 0; z < n[0]; ++z) {
      for (long y = 0; y < n[1]; ++y) {
        for (long x = 0; x < n[2]; ++x) {
          std::array<long, 3> p{z, y, x};
          double acc = 0.0;
          for (long d = -radius; d <= radius; ++d) {
            std::array<long, 3> q = p;
            q[axis] = mirror(p[axis] + d, n[axis]);
            acc += kernel[static_cast<std::size_t>(d + radius)] *
                   tmp.at(std::size_t(q[0]), std::size_t(q[1]), std::size_t(q[2]));
          }
          out.at(std::size_t(z), std::size_t(y), std::size_t(x)) = static_cast<float>(acc);
        }
      }
    }
  }
  return out;
}

MotionCorruption motion_corrupt_stacks(const Volume& volume, std::size_t n_stacks, std::size_t max_translation,
                                       Rng& rng, double blur_sigma) {
  if (n_stacks == 0) throw ConfigError("motion_corrupt_stacks: need at least one stack");
  const std::size_t smallest = *std::min_element(volume.shape.begin(), volume.shape.end());
  if (max_translation >= smallest) {
    throw ConfigError("motion_corrupt_stacks: translation " + std::to_string(max_translation) +
                      " exceeds image extent " + std::to_string(smallest));
  }
  const long t = static_cast<long>(max_translation);
  std::uniform_int_distribution<long> shift(-t, t);

  MotionCorruption result;
  Volume sum(volume.shape);
  sum.spacing_mm = volume.spacing_mm;
  sum.subject = volume.subject;
  for (std::size_t s = 0; s < n_stacks; ++s) {
    const int axis = static_cast<int>(s % 3);
    const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
    Volume stack(volume.shape);
    stack.spacing_mm = volume.spacing_mm;
    stack.subject = volume.subject;
    const std::array<long, 3> n{long(volume.shape[0]), long(volume.shape[1]), long(volume.shape[2])};
    for (long slice = 0; slice < n[axis]; ++slice) {
      const long d1 = shift(rng), d2 = shift(rng);
      for (long i = 0; i < n[a1]; ++i) {
        for (long j = 0; j < n[a2]; ++j) {
          const long si = i - d1, sj = j - d2;
          if (si < 0 || si >= n[a1] || sj < 0 || sj >= n[a2]) continue;
          std::array<long, 3> dst{}, src{};
          dst[axis] = src[axis] = slice;
          dst[a1] = i;
          dst[a2] = j;
          src[a1] = si;
          src[a2] = sj;
          stack.at(std::size_t(dst[0]), std::size_t(dst[1]), std::size_t(dst[2])) =
              volume.at(std::size_t(src[0]), std::size_t(src[1]), std::size_t(src[2]));
        }
      }
    }
    for (std::size_t i = 0; i < sum.size(); ++i) sum.data[i] += stack.data[i];
    result.stacks.push_back(std::move(stack));
  }
  for (auto& v : sum.data) v /= static_cast<float>(n_stacks);
  result.gaussian_average = gaussian_blur(sum, blur_sigma);
  return result;
}

}  // namespace slicemap
