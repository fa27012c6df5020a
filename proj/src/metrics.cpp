#include "slicemap/metrics.hpp"

#include <array>
#include <cmath>
#include <vector>

#include "slicemap/error.hpp"

namespace slicemap {

namespace {

constexpr int kRadius = 5;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::array<double, 2 * kRadius + 1> gaussian_window() {
  std::array<double, 2 * kRadius + 1> w{};
  double total = 0.0;
  for (int i = -kRadius; i <= kRadius; ++i) {
    w[i + kRadius] = std::exp(-0.5 * i * i / (kSigma * kSigma));
    total += w[i + kRadius];
  }
  for (double& v : w) v /= total;
  return w;
}

// Half-sample symmetric: (c b a | a b c | c b a), repeated as needed.
std::size_t reflect(long i, long n) {
  const long period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < n ? i : period - 1 - i);
}

// Separable Gaussian filter of a row-major h x w field.
std::vector<double> filter(const std::vector<double>& in, std::size_t h, std::size_t w) {
  static const auto win = gaussian_window();
  std::vector<double> tmp(in.size()), out(in.size());
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -kRadius; i <= kRadius; ++i)
        s += win[i + kRadius] * in[y * w + reflect(static_cast<long>(x) + i, static_cast<long>(w))];
      tmp[y * w + x] = s;
    }
  }
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -kRadius; i <= kRadius; ++i)
        s += win[i + kRadius] * tmp[reflect(static_cast<long>(y) + i, static_cast<long>(h)) * w + x];
      out[y * w + x] = s;
    }
  }
  return out;
}

void check_same(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw ShapeError(std::string(what) + ": inputs differ in size");
}

}  // namespace

double ssim(const Image& a, const Image& b) {
  if (a.height != b.height || a.width != b.width) throw ShapeError("ssim: images differ in size");
  if (a.size() == 0) throw ShapeError("ssim: empty image");
  const std::size_t h = a.height, w = a.width, n = a.size();
  std::vector<double> xa(n), xb(n), aa(n), bb(n), ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    xa[i] = a.pixels[i];
    xb[i] = b.pixels[i];
    aa[i] = xa[i] * xa[i];
    bb[i] = xb[i] * xb[i];
    ab[i] = xa[i] * xb[i];
  }
  const auto ma = filter(xa, h, w), mb = filter(xb, h, w);
  const auto eaa = filter(aa, h, w), ebb = filter(bb, h, w), eab = filter(ab, h, w);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double va = eaa[i] - ma[i] * ma[i];
    const double vb = ebb[i] - mb[i] * mb[i];
    const double cov = eab[i] - ma[i] * mb[i];
    total += ((2.0 * ma[i] * mb[i] + kC1) * (2.0 * cov + kC2)) /
             ((ma[i] * ma[i] + mb[i] * mb[i] + kC1) * (va + vb + kC2));
  }
  return total / static_cast<double>(n);
}

double ssim(const Volume& a, const Volume& b) {
  if (a.shape != b.shape) throw ShapeError("ssim: volumes differ in shape");
  if (a.depth() == 0) throw ShapeError("ssim: empty volume");
  double total = 0.0;
  for (std::size_t z = 0; z < a.depth(); ++z) total += ssim(a.axial_slice(z), b.axial_slice(z));
  return total / static_cast<double>(a.depth());
}

double cross_correlation(std::span<const float> a, std::span<const float> b) {
  check_same(a.size(), b.size(), "cross_correlation");
  if (a.empty()) throw ShapeError("cross_correlation: empty input");
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(a.size());
  mb /= static_cast<double>(b.size());
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) throw NumericError("cross_correlation: undefined for a constant input");
  return sab / std::sqrt(saa * sbb);
}

double cross_correlation(const Image& a, const Image& b) {
  if (a.height != b.height || a.width != b.width) throw ShapeError("cross_correlation: images differ in size");
  return cross_correlation(std::span<const float>(a.pixels), std::span<const float>(b.pixels));
}

double cross_correlation(const Volume& a, const Volume& b) {
  if (a.shape != b.shape) throw ShapeError("cross_correlation: volumes differ in shape");
  return cross_correlation(std::span<const float>(a.data), std::span<const float>(b.data));
}

}  // namespace slicemap
