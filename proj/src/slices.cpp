#include "slicemap/slices.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "slicemap/error.hpp"

namespace slicemap {

std::vector<float> SlicePose::pose() const {
  std::vector<float> v(num_poses, 0.0f);
  v.at(index) = 1.0f;
  return v;
}

Volume SubjectSlices::as_volume() const {
  std::vector<Image> images;
  images.reserve(slices.size());
  for (const auto& s : slices) images.push_back(s.image);
  return stack_slices(images, subject);
}

SubjectSlices extract_slices(const Volume& volume, double middle_fraction, std::size_t num_poses) {
  if (!(middle_fraction > 0.0 && middle_fraction <= 1.0)) {
    throw ConfigError("extract_slices: middle fraction must be in (0, 1]");
  }
  const auto thickness = static_cast<std::size_t>(std::lround(middle_fraction * static_cast<double>(volume.depth())));
  if (num_poses == 0 || num_poses > thickness) {
    throw ShapeError("extract_slices: " + std::to_string(num_poses) + " slices do not fit a slab of " +
                     std::to_string(thickness));
  }
  const std::size_t start = (volume.depth() - thickness) / 2;
  SubjectSlices out;
  out.subject = volume.subject;
  for (std::size_t k = 0; k < num_poses; ++k) {
    const auto offset = static_cast<std::size_t>(std::floor((static_cast<double>(k) + 0.5) *
                                                            static_cast<double>(thickness) /
                                                            static_cast<double>(num_poses)));
    out.slices.push_back({volume.axial_slice(start + offset), k, num_poses});
  }
  return out;
}

Image downsample(const Image& image, std::size_t th, std::size_t tw) {
  if (th == 0 || tw == 0 || th > image.height || tw > image.width) {
    throw ShapeError("downsample: target " + std::to_string(th) + "x" + std::to_string(tw) + " larger than source " +
                     std::to_string(image.height) + "x" + std::to_string(image.width));
  }
  Image out(th, tw);
  if (image.height % th == 0 && image.width % tw == 0) {
    const std::size_t fy = image.height / th, fx = image.width / tw;
    for (std::size_t y = 0; y < th; ++y) {
      for (std::size_t x = 0; x < tw; ++x) {
        double acc = 0.0;
        for (std::size_t dy = 0; dy < fy; ++dy)
          for (std::size_t dx = 0; dx < fx; ++dx) acc += image.at(y * fy + dy, x * fx + dx);
        out.at(y, x) = static_cast<float>(acc / static_cast<double>(fy * fx));
      }
    }
  } else {
    // Pixel-centre aligned bilinear sampling.
    const double sy = static_cast<double>(image.height) / static_cast<double>(th);
    const double sx = static_cast<double>(image.width) / static_cast<double>(tw);
    auto coord = [](double c, std::size_t n, std::size_t& i0, std::size_t& i1, double& t) {
      c = std::clamp(c, 0.0, static_cast<double>(n - 1));
      i0 = static_cast<std::size_t>(std::floor(c));
      i1 = std::min(i0 + 1, n - 1);
      t = c - static_cast<double>(i0);
    };
    for (std::size_t y = 0; y < th; ++y) {
      std::size_t y0, y1;
      double ty;
      coord((static_cast<double>(y) + 0.5) * sy - 0.5, image.height, y0, y1, ty);
      for (std::size_t x = 0; x < tw; ++x) {
        std::size_t x0, x1;
        double tx;
        coord((static_cast<double>(x) + 0.5) * sx - 0.5, image.width, x0, x1, tx);
        const double top = (1 - tx) * image.at(y0, x0) + tx * image.at(y0, x1);
        const double bottom = (1 - tx) * image.at(y1, x0) + tx * image.at(y1, x1);
        out.at(y, x) = static_cast<float>((1 - ty) * top + ty * bottom);
      }
    }
  }
  for (auto& v : out.pixels) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

SequenceSample sample_training_sequence(const SubjectSlices& subject, std::size_t length, Rng& rng) {
  const std::size_t k = subject.num_poses();
  if (length == 0 || length > k) {
    throw ConfigError("sample_training_sequence: sequence length " + std::to_string(length) + " exceeds " +
                      std::to_string(k) + " slices");
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < length; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, k - 1);
    std::swap(order[i], order[pick(rng)]);
  }
  SequenceSample seq;
  seq.subject = subject.subject;
  for (std::size_t i = 0; i < length; ++i) seq.entries.push_back(subject.slices[order[i]]);
  return seq;
}

std::vector<std::size_t> select_context_schedule(std::size_t n, std::size_t k) {
  if (n == 0 || n > k) {
    throw ConfigError("select_context_schedule: need 1 <= contexts <= " + std::to_string(k));
  }
  std::vector<std::size_t> out(n);
  if (k % 8 == 0 && n <= 7) {
    // Spread the contexts over the seven interior eighths of the stack.
    const std::size_t step = k / 8;
    for (std::size_t i = 0; i < n; ++i) {
      const double pos = (static_cast<double>(i) + 0.5) * 7.0 / static_cast<double>(n) - 0.5;
      out[i] = (static_cast<std::size_t>(std::lround(pos)) + 1) * step;
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      out[i] = static_cast<std::size_t>(std::floor((static_cast<double>(i) + 0.5) * static_cast<double>(k) /
                                                   static_cast<double>(n)));
    }
  }
  return out;
}

}  // namespace slicemap
