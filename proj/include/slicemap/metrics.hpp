#pragma once

#include <span>

#include "slicemap/volume.hpp"

namespace slicemap {

// Mean of the local SSIM map: 11x11 Gaussian window with sigma 1.5,
// half-sample reflection at the borders, data range 1,
// C1 = 0.01^2, C2 = 0.03^2. Throws ShapeError on mismatched sizes.
double ssim(const Image& a, const Image& b);
// Axial slices scored separately, then averaged.
double ssim(const Volume& a, const Volume& b);

// Pearson correlation of the flattened intensities. Throws NumericError
// when either input has zero variance.
double cross_correlation(std::span<const float> a, std::span<const float> b);
double cross_correlation(const Image& a, const Image& b);
double cross_correlation(const Volume& a, const Volume& b);

}  // namespace slicemap
