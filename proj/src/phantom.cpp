#include "slicemap/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include <nlohmann/json.hpp>

#include "slicemap/error.hpp"
#include "slicemap/random.hpp"

namespace slicemap {

namespace {

struct Ellipsoid {
  std::array<double, 3> center;  // voxel coordinates z, y, x
  std::array<double, 3> radii;
  double angle;  // in-plane rotation
  double intensity;
};

double draw(Rng& rng, const Range& r) {
  return r.min == r.max ? r.min : std::uniform_real_distribution<double>(r.min, r.max)(rng);
}

void check_range(const Range& r, const char* name, bool positive) {
  if (!(r.min <= r.max) || (positive && r.min <= 0.0)) {
    throw ConfigError(std::string("phantom: degenerate ") + name + " range");
  }
}

double radius_sq(const Ellipsoid& e, double z, double y, double x) {
  const double dz = (z - e.center[0]) / e.radii[0];
  const double dy0 = y - e.center[1], dx0 = x - e.center[2];
  const double c = std::cos(e.angle), s = std::sin(e.angle);
  const double dy = (c * dy0 - s * dx0) / e.radii[1];
  const double dx = (s * dy0 + c * dx0) / e.radii[2];
  return dz * dz + dy * dy + dx * dx;
}

}  // namespace

Volume generate_phantom(const PhantomSpec& spec) {
  check_range(spec.outer_radius, "outer radius", true);
  check_range(spec.inner_radius, "inner radius", true);
  check_range(spec.shell_thickness, "shell thickness", false);
  check_range(spec.shell_intensity, "shell intensity", false);
  check_range(spec.interior_intensity, "interior intensity", false);
  check_range(spec.inner_intensity, "inner intensity", false);
  check_range(spec.z_gradient, "z gradient", false);
  if (spec.outer_radius.max > 1.0 || spec.shell_thickness.max >= 1.0) {
    throw ConfigError("phantom: outer radius must be <= 1 and shell thickness < 1");
  }
  if (spec.inner_count[0] < 0 || spec.inner_count[0] > spec.inner_count[1]) {
    throw ConfigError("phantom: invalid inner structure count range");
  }
  if (spec.shape[0] == 0 || spec.shape[1] == 0 || spec.shape[2] == 0) throw ConfigError("phantom: empty shape");

  Rng rng(derive_seed(spec.seed, 0));
  Ellipsoid outer{};
  for (int a = 0; a < 3; ++a) {
    const double half = 0.5 * static_cast<double>(spec.shape[a]);
    const double jitter = spec.center_jitter * half;
    outer.center[a] = half - 0.5 + (jitter > 0 ? std::uniform_real_distribution<double>(-jitter, jitter)(rng) : 0.0);
    outer.radii[a] = draw(rng, spec.outer_radius) * half;
  }
  outer.angle = 0.0;
  const double shell = draw(rng, spec.shell_thickness);
  const double shell_value = draw(rng, spec.shell_intensity);
  const double interior = draw(rng, spec.interior_intensity);
  const double gradient = draw(rng, spec.z_gradient);

  const int count = std::uniform_int_distribution<int>(spec.inner_count[0], spec.inner_count[1])(rng);
  std::vector<Ellipsoid> inner;
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (int i = 0; i < count; ++i) {
    Ellipsoid e{};
    // Centres sit inside the inner half of the outer ellipsoid.
    std::array<double, 3> offset{};
    do {
      for (auto& o : offset) o = unit(rng);
    } while (offset[0] * offset[0] + offset[1] * offset[1] + offset[2] * offset[2] > 1.0);
    for (int a = 0; a < 3; ++a) {
      e.center[a] = outer.center[a] + 0.5 * offset[a] * outer.radii[a] * (1.0 - shell);
      e.radii[a] = draw(rng, spec.inner_radius) * outer.radii[a];
    }
    e.angle = std::uniform_real_distribution<double>(0.0, std::numbers::pi)(rng);
    // Keep inner intensities visibly distinct from the interior.
    double value = interior;
    for (int attempt = 0; attempt < 32 && std::abs(value - interior) < 0.15; ++attempt) value = draw(rng, spec.inner_intensity);
    e.intensity = value;
    inner.push_back(e);
  }

  Volume vol(spec.shape);
  vol.spacing_mm = spec.spacing_mm;
  vol.subject = "phantom-" + std::to_string(spec.seed);
  const double shell_inner_sq = (1.0 - shell) * (1.0 - shell);
  const double zc = 0.5 * static_cast<double>(spec.shape[0] - 1);
  for (std::size_t z = 0; z < spec.shape[0]; ++z) {
    const double ramp = 1.0 + gradient * (static_cast<double>(z) - zc) / static_cast<double>(spec.shape[0]);
    for (std::size_t y = 0; y < spec.shape[1]; ++y) {
      for (std::size_t x = 0; x < spec.shape[2]; ++x) {
        const double r2 = radius_sq(outer, double(z), double(y), double(x));
        if (r2 > 1.0) continue;
        double value = r2 > shell_inner_sq ? shell_value : interior;
        if (r2 <= shell_inner_sq) {
          for (const auto& e : inner) {
            if (radius_sq(e, double(z), double(y), double(x)) <= 1.0) value = e.intensity;
          }
        }
        vol.at(z, y, x) = static_cast<float>(std::clamp(value * ramp, 0.0, 1.0));
      }
    }
  }
  return vol;
}

namespace {

void range_to_json(nlohmann::json& j, const char* key, const Range& r) { j[key] = {r.min, r.max}; }

void range_from_json(const nlohmann::json& j, const char* key, Range& r) {
  if (!j.contains(key)) return;
  const auto v = j.at(key).get<std::array<double, 2>>();
  r = {v[0], v[1]};
}

}  // namespace

void to_json(nlohmann::json& j, const PhantomSpec& spec) {
  j = nlohmann::json{{"seed", spec.seed},
                     {"shape", spec.shape},
                     {"spacing_mm", spec.spacing_mm},
                     {"center_jitter", spec.center_jitter},
                     {"inner_count", spec.inner_count}};
  range_to_json(j, "outer_radius", spec.outer_radius);
  range_to_json(j, "shell_thickness", spec.shell_thickness);
  range_to_json(j, "shell_intensity", spec.shell_intensity);
  range_to_json(j, "interior_intensity", spec.interior_intensity);
  range_to_json(j, "inner_radius", spec.inner_radius);
  range_to_json(j, "inner_intensity", spec.inner_intensity);
  range_to_json(j, "z_gradient", spec.z_gradient);
}

void from_json(const nlohmann::json& j, PhantomSpec& spec) {
  static const std::vector<std::string> known{"seed", "shape", "spacing_mm", "center_jitter", "inner_count",
                                              "outer_radius", "shell_thickness", "shell_intensity",
                                              "interior_intensity", "inner_radius", "inner_intensity", "z_gradient"};
  for (const auto& item : j.items()) {
    if (std::find(known.begin(), known.end(), item.key()) == known.end()) {
      throw ConfigError("phantom spec: unknown key '" + item.key() + "'");
    }
  }
  spec.seed = j.value("seed", spec.seed);
  spec.shape = j.value("shape", spec.shape);
  spec.spacing_mm = j.value("spacing_mm", spec.spacing_mm);
  spec.center_jitter = j.value("center_jitter", spec.center_jitter);
  spec.inner_count = j.value("inner_count", spec.inner_count);
  range_from_json(j, "outer_radius", spec.outer_radius);
  range_from_json(j, "shell_thickness", spec.shell_thickness);
  range_from_json(j, "shell_intensity", spec.shell_intensity);
  range_from_json(j, "interior_intensity", spec.interior_intensity);
  range_from_json(j, "inner_radius", spec.inner_radius);
  range_from_json(j, "inner_intensity", spec.inner_intensity);
  range_from_json(j, "z_gradient", spec.z_gradient);
}

}  // namespace slicemap
