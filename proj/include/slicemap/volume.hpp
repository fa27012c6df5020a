#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace slicemap {

// Single-channel 2D image, row-major.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, float fill = 0.0f) : height(h), width(w), pixels(h * w, fill) {}

  std::size_t size() const { return pixels.size(); }
  float& at(std::size_t y, std::size_t x) { return pixels[y * width + x]; }
  float at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
  bool operator==(const Image&) const = default;
};

// Dense scalar grid, z-major then row-major: index = (z * Y + y) * X + x.
struct Volume {
  std::array<std::size_t, 3> shape{};  // Z, Y, X
  std::array<double, 3> spacing_mm{1.0, 1.0, 1.0};
  std::vector<float> data;
  std::string subject;

  Volume() = default;
  Volume(std::array<std::size_t, 3> s, float fill = 0.0f) : shape(s), data(s[0] * s[1] * s[2], fill) {}

  std::size_t depth() const { return shape[0]; }
  std::size_t height() const { return shape[1]; }
  std::size_t width() const { return shape[2]; }
  std::size_t size() const { return data.size(); }
  float& at(std::size_t z, std::size_t y, std::size_t x) { return data[(z * shape[1] + y) * shape[2] + x]; }
  float at(std::size_t z, std::size_t y, std::size_t x) const { return data[(z * shape[1] + y) * shape[2] + x]; }

  Image axial_slice(std::size_t z) const;
  void set_axial_slice(std::size_t z, const Image& image);
  bool operator==(const Volume&) const = default;
};

// Stacks equally sized images along z.
Volume stack_slices(const std::vector<Image>& slices, std::string subject = {});

// In-place per-volume min-max scaling to [0,1]; constant volumes become 0.
void normalize_minmax(Volume& volume);

// Raw little-endian f32 voxels at `path` plus a JSON sidecar next to it
// (same stem, ".json") holding shape, spacing_mm, dtype and order.
void save_volume(const Volume& volume, const std::filesystem::path& path);
Volume load_volume(const std::filesystem::path& path);
std::filesystem::path sidecar_path(const std::filesystem::path& volume_path);

// Every *.vol file in `dir`, sorted by file name.
std::vector<std::filesystem::path> list_volumes(const std::filesystem::path& dir);

// 8-bit binary PGM, intensities clamped to [0,1].
void write_pgm(const Image& image, const std::filesystem::path& path);

}  // namespace slicemap
