#include "slicemap/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "slicemap/error.hpp"

namespace slicemap {

static_assert(std::endian::native == std::endian::little, "volume and checkpoint I/O assume a little-endian host");

namespace fs = std::filesystem;
using nlohmann::json;

Image Volume::axial_slice(std::size_t z) const {
  if (z >= depth()) throw ShapeError("axial slice " + std::to_string(z) + " out of range");
  Image img(height(), width());
  const std::size_t n = height() * width();
  std::copy_n(data.begin() + z * n, n, img.pixels.begin());
  return img;
}

void Volume::set_axial_slice(std::size_t z, const Image& image) {
  if (z >= depth() || image.height != height() || image.width != width()) {
    throw ShapeError("set_axial_slice: slice does not fit the volume");
  }
  std::copy(image.pixels.begin(), image.pixels.end(), data.begin() + z * height() * width());
}

Volume stack_slices(const std::vector<Image>& slices, std::string subject) {
  if (slices.empty()) throw ShapeError("stack_slices: no slices");
  Volume vol({slices.size(), slices[0].height, slices[0].width});
  vol.subject = std::move(subject);
  for (std::size_t z = 0; z < slices.size(); ++z) vol.set_axial_slice(z, slices[z]);
  return vol;
}

void normalize_minmax(Volume& volume) {
  if (volume.data.empty()) return;
  const auto [lo, hi] = std::minmax_element(volume.data.begin(), volume.data.end());
  const float low = *lo, range = *hi - *lo;
  for (auto& v : volume.data) v = range > 0.0f ? std::clamp((v - low) / range, 0.0f, 1.0f) : 0.0f;
}

fs::path sidecar_path(const fs::path& volume_path) {
  fs::path p = volume_path;
  p.replace_extension(".json");
  return p;
}

void save_volume(const Volume& volume, const fs::path& path) {
  if (volume.data.size() != volume.shape[0] * volume.shape[1] * volume.shape[2]) {
    throw ShapeError("save_volume: data length does not match shape");
  }
  std::ofstream raw(path, std::ios::binary);
  if (!raw) throw Error("cannot write " + path.string());
  raw.write(reinterpret_cast<const char*>(volume.data.data()),
            static_cast<std::streamsize>(volume.data.size() * sizeof(float)));
  if (!raw) throw Error("failed writing " + path.string());

  json header{{"shape", volume.shape},
              {"spacing_mm", volume.spacing_mm},
              {"dtype", "f32le"},
              {"order", "zyx"},
              {"subject", volume.subject}};
  std::ofstream side(sidecar_path(path));
  if (!side) throw Error("cannot write " + sidecar_path(path).string());
  side << header.dump(2) << '\n';
}

Volume load_volume(const fs::path& path) {
  const fs::path side_path = sidecar_path(path);
  std::ifstream side(side_path);
  if (!side) throw FormatError("missing volume header " + side_path.string());
  Volume vol;
  try {
    const json header = json::parse(side);
    if (header.at("dtype").get<std::string>() != "f32le") throw FormatError("unsupported dtype in " + side_path.string());
    if (header.at("order").get<std::string>() != "zyx") throw FormatError("unsupported order in " + side_path.string());
    vol.shape = header.at("shape").get<std::array<std::size_t, 3>>();
    vol.spacing_mm = header.at("spacing_mm").get<std::array<double, 3>>();
    vol.subject = header.value("subject", path.stem().string());
  } catch (const json::exception& e) {
    throw FormatError("malformed volume header " + side_path.string() + ": " + e.what());
  }

  std::ifstream raw(path, std::ios::binary | std::ios::ate);
  if (!raw) throw FormatError("cannot read " + path.string());
  const auto bytes = static_cast<std::size_t>(raw.tellg());
  const std::size_t expected = vol.shape[0] * vol.shape[1] * vol.shape[2];
  if (bytes != expected * sizeof(float)) {
    throw FormatError("size mismatch in " + path.string() + ": header expects " + std::to_string(expected * sizeof(float)) +
                      " bytes, file has " + std::to_string(bytes));
  }
  raw.seekg(0);
  vol.data.resize(expected);
  raw.read(reinterpret_cast<char*>(vol.data.data()), static_cast<std::streamsize>(bytes));
  if (!raw) throw FormatError("short read in " + path.string());
  return vol;
}

std::vector<fs::path> list_volumes(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".vol") out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

void write_pgm(const Image& image, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  for (float v : image.pixels) {
    const auto byte = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
    out.put(static_cast<char>(byte));
  }
}

}  // namespace slicemap
