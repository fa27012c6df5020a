#pragma once

#include <array>
#include <cstdint>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "slicemap/volume.hpp"

namespace slicemap {

struct Range {
  double min = 0.0;
  double max = 0.0;
};

// Synthetic head-like phantom: an outer ellipsoid with a bright shell, a
// uniform interior, a few overlapping inner ellipsoids and a linear
// intensity ramp along z. Radii are fractions (outer: of the half extent
// per axis; inner: of the outer radii).
struct PhantomSpec {
  std::uint64_t seed = 0;
  std::array<std::size_t, 3> shape{32, 32, 32};
  std::array<double, 3> spacing_mm{1.0, 1.0, 1.0};
  Range outer_radius{0.70, 0.92};
  double center_jitter = 0.08;
  Range shell_thickness{0.10, 0.18};
  Range shell_intensity{0.80, 0.95};
  Range interior_intensity{0.35, 0.50};
  std::array<int, 2> inner_count{2, 4};
  Range inner_radius{0.18, 0.45};
  Range inner_intensity{0.05, 1.0};
  Range z_gradient{-0.25, 0.25};
};

// Pure function of the spec. Throws ConfigError for degenerate radii or
// inverted ranges. Output lies in [0,1], with 0 outside the outer ellipsoid.
Volume generate_phantom(const PhantomSpec& spec);

void to_json(nlohmann::json& j, const PhantomSpec& spec);
void from_json(const nlohmann::json& j, PhantomSpec& spec);

}  // namespace slicemap
