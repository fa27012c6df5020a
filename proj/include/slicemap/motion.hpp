#pragma once

#include <cstddef>
#include <vector>

#include "slicemap/random.hpp"
#include "slicemap/volume.hpp"

namespace slicemap {

struct MotionCorruption {
  std::vector<Volume> stacks;  // each resampled back onto the volume grid
  Volume gaussian_average;
};

// Separable Gaussian smoothing with mirrored borders; sigma in voxels.
Volume gaussian_blur(const Volume& volume, double sigma);

// Simulates slice-wise rigid translation during acquisition. Stack i slices
// the volume along axis i % 3 (z, y, x) and shifts every slice by integer
// offsets drawn uniformly from [-max, max] along both in-plane axes, filling
// with zeros. The average of all stacks is then Gaussian smoothed.
// Throws ConfigError when n_stacks == 0 or the translation reaches the
// smallest image extent.
MotionCorruption motion_corrupt_stacks(const Volume& volume, std::size_t n_stacks, std::size_t max_translation,
                                       Rng& rng, double blur_sigma = 1.0);

}  // namespace slicemap
