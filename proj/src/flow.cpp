#include "slicemap/flow.hpp"

#include <algorithm>
#include <cmath>

#include "slicemap/error.hpp"

namespace slicemap {

void FlowConfig::validate() const {
  if (height == 0 || width == 0 || pixels() % 2 != 0) throw ConfigError("flow: image pixel count must be even and non-zero");
  if (coupling_layers < 2) throw ConfigError("flow: need at least two coupling layers");
  if (hidden_channels == 0 || pose_embedding == 0 || num_poses == 0) throw ConfigError("flow: widths must be positive");
  if (!(alpha > 0.0 && alpha < 0.5)) throw ConfigError("flow: alpha must lie in (0, 0.5)");
}

template <typename T>
PreTransformed<T> pre_transform(const Tensor<T>& x, double alpha) {
  const T a = static_cast<T>(alpha);
  const Tensor<T> u = x * (T(1) - T(2) * a) + a;
  const Tensor<T> log_u = log(u);
  const Tensor<T> log_1mu = log(T(1) - u);
  const Tensor<T> per_pixel = static_cast<T>(std::log(1.0 - 2.0 * alpha)) - log_u - log_1mu;
  return {log_u - log_1mu, x.rank() > 1 ? row_sum(per_pixel) : sum(per_pixel)};
}

template <typename T>
Tensor<T> inverse_pre_transform(const Tensor<T>& y, double alpha) {
  const T a = static_cast<T>(alpha);
  Tensor<T> x = (sigmoid(y) - a) / (T(1) - T(2) * a);
  std::vector<T> v(x.data().begin(), x.data().end());
  for (auto& p : v) p = std::clamp(p, T(0), T(1));
  return Tensor<T>::from(x.shape(), std::move(v));
}

namespace {

template <typename T>
Tensor<T> normal_tensor(Shape shape, Rng& rng, double stddev, bool requires_grad = true) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return Tensor<T>::from(std::move(shape), std::move(v), requires_grad);
}

template <typename T>
Tensor<T> checkerboard(std::size_t h, std::size_t w, std::size_t parity) {
  std::vector<T> v(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) v[y * w + x] = ((y + x) % 2 == parity) ? T(1) : T(0);
  return Tensor<T>::from({1, h, w}, std::move(v));
}

}  // namespace

template <typename T>
ConditionalFlow<T>::ConditionalFlow(const FlowConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(derive_seed(seed, 100));
  const std::size_t e = config_.pose_embedding, c = config_.hidden_channels;
  embed_weight_ = normal_tensor<T>({config_.num_poses, e}, rng, 1.0);
  embed_bias_ = Tensor<T>::zeros({e}, true);
  for (std::size_t l = 0; l < config_.coupling_layers; ++l) {
    CouplingLayer<T> layer;
    layer.mask = checkerboard<T>(config_.height, config_.width, l % 2);
    layer.conv1_weight = normal_tensor<T>({c, 1 + e, 3, 3}, rng, 1.0 / std::sqrt(9.0 * double(1 + e)));
    layer.conv1_bias = Tensor<T>::zeros({c}, true);
    layer.conv2_weight = normal_tensor<T>({c, c, 3, 3}, rng, 1.0 / std::sqrt(9.0 * double(c)));
    layer.conv2_bias = Tensor<T>::zeros({c}, true);
    layer.conv3_weight = Tensor<T>::zeros({2, c, 3, 3}, true);
    layer.conv3_bias = Tensor<T>::zeros({2}, true);
    layer.gain = Tensor<T>::full({1}, T(1), true);
    layers_.push_back(std::move(layer));
  }
}

template <typename T>
Tensor<T> ConditionalFlow<T>::embed_poses(const Tensor<T>& poses, std::size_t n) const {
  if (poses.rank() != 2 || poses.dim(0) != n || poses.dim(1) != config_.num_poses) {
    throw ShapeError("flow: poses must be [" + std::to_string(n) + "," + std::to_string(config_.num_poses) + "], got " +
                     to_string(poses.shape()));
  }
  const std::size_t e = config_.pose_embedding;
  const Tensor<T> embedding = matmul(poses, embed_weight_) + embed_bias_;
  const Tensor<T> ones = Tensor<T>::full({1, config_.pixels()}, T(1));
  return reshape(matmul(reshape(embedding, {n * e, 1}), ones), {n, e, config_.height, config_.width});
}

template <typename T>
typename ConditionalFlow<T>::ScaleShift ConditionalFlow<T>::scale_shift(const CouplingLayer<T>& layer,
                                                                        const Tensor<T>& h,
                                                                        const Tensor<T>& pose_map) const {
  const Tensor<T> passive = h * layer.mask;
  const Tensor<T> input = concat({passive, pose_map}, 1);
  const Tensor<T> a1 = tanh(conv2d(input, layer.conv1_weight, layer.conv1_bias, 1, 1));
  const Tensor<T> a2 = tanh(conv2d(a1, layer.conv2_weight, layer.conv2_bias, 1, 1));
  const Tensor<T> out = conv2d(a2, layer.conv3_weight, layer.conv3_bias, 1, 1);
  const Tensor<T> active = T(1) - layer.mask;
  return {layer.gain * tanh(slice(out, 1, 0, 1)) * active, slice(out, 1, 1, 2) * active};
}

template <typename T>
typename ConditionalFlow<T>::Output ConditionalFlow<T>::forward(const Tensor<T>& images, const Tensor<T>& poses) const {
  if (images.rank() != 3 || images.dim(1) != config_.height || images.dim(2) != config_.width) {
    throw ShapeError("flow: images must be [N," + std::to_string(config_.height) + "," + std::to_string(config_.width) +
                     "], got " + to_string(images.shape()));
  }
  const std::size_t n = images.dim(0);
  const Tensor<T> pose_map = embed_poses(poses, n);
  PreTransformed<T> pre = pre_transform(images, config_.alpha);
  Tensor<T> h = reshape(pre.y, {n, 1, config_.height, config_.width});
  Tensor<T> logdet = pre.logdet;
  for (const auto& layer : layers_) {
    const ScaleShift st = scale_shift(layer, h, pose_map);
    h = h * exp(st.scale) + st.shift;
    logdet = logdet + row_sum(st.scale);
  }
  return {reshape(h, {n, config_.pixels()}), logdet};
}

template <typename T>
Tensor<T> ConditionalFlow<T>::inverse(const Tensor<T>& z, const Tensor<T>& poses) const {
  if (z.rank() != 2 || z.dim(1) != config_.pixels()) {
    throw ShapeError("flow: latents must be [N," + std::to_string(config_.pixels()) + "], got " + to_string(z.shape()));
  }
  const std::size_t n = z.dim(0);
  const Tensor<T> pose_map = embed_poses(poses, n);
  Tensor<T> h = reshape(z, {n, 1, config_.height, config_.width});
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    const ScaleShift st = scale_shift(*it, h, pose_map);
    h = (h - st.shift) * exp(-st.scale);
    const auto v = h.data();
    if (!std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); })) {
      throw NumericError("flow inverse: non-finite intermediate values");
    }
  }
  return inverse_pre_transform(reshape(h, {n, config_.height, config_.width}), config_.alpha);
}

template <typename T>
std::vector<NamedTensor<T>> ConditionalFlow<T>::parameters() const {
  std::vector<NamedTensor<T>> out{{"pose_embedding.weight", embed_weight_}, {"pose_embedding.bias", embed_bias_}};
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const std::string p = "coupling" + std::to_string(l) + ".";
    const auto& layer = layers_[l];
    out.push_back({p + "conv1.weight", layer.conv1_weight});
    out.push_back({p + "conv1.bias", layer.conv1_bias});
    out.push_back({p + "conv2.weight", layer.conv2_weight});
    out.push_back({p + "conv2.bias", layer.conv2_bias});
    out.push_back({p + "conv3.weight", layer.conv3_weight});
    out.push_back({p + "conv3.bias", layer.conv3_bias});
    out.push_back({p + "gain", layer.gain});
  }
  return out;
}

template <typename T>
void ConditionalFlow<T>::randomize_output_layers(Rng& rng, double scale) {
  std::normal_distribution<double> dist(0.0, scale);
  for (auto& layer : layers_) {
    for (auto& v : layer.conv3_weight.mutable_data()) v = static_cast<T>(dist(rng));
    for (auto& v : layer.conv3_bias.mutable_data()) v = static_cast<T>(dist(rng));
  }
}

template <typename T>
Tensor<T> images_to_tensor(std::span<const Image* const> images) {
  if (images.empty()) throw ShapeError("images_to_tensor: no images");
  const std::size_t h = images[0]->height, w = images[0]->width;
  std::vector<T> v;
  v.reserve(images.size() * h * w);
  for (const Image* img : images) {
    if (img->height != h || img->width != w) throw ShapeError("images_to_tensor: images differ in size");
    for (float p : img->pixels) v.push_back(static_cast<T>(p));
  }
  return Tensor<T>::from({images.size(), h, w}, std::move(v));
}

template <typename T>
Tensor<T> one_hot_poses(std::span<const std::size_t> indices, std::size_t num_poses) {
  std::vector<T> v(indices.size() * num_poses, T(0));
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= num_poses) throw ShapeError("pose index " + std::to_string(indices[i]) + " out of range");
    v[i * num_poses + indices[i]] = T(1);
  }
  return Tensor<T>::from({indices.size(), num_poses}, std::move(v));
}

template <typename T>
Image tensor_to_image(const Tensor<T>& images, std::size_t row) {
  Image img(images.dim(1), images.dim(2));
  const std::size_t n = img.size();
  for (std::size_t i = 0; i < n; ++i) img.pixels[i] = static_cast<float>(images[row * n + i]);
  return img;
}

#define SLICEMAP_INSTANTIATE(T)                                                            \
  template PreTransformed<T> pre_transform(const Tensor<T>&, double);                     \
  template Tensor<T> inverse_pre_transform(const Tensor<T>&, double);                     \
  template class ConditionalFlow<T>;                                                      \
  template Tensor<T> images_to_tensor(std::span<const Image* const>);                     \
  template Tensor<T> one_hot_poses(std::span<const std::size_t>, std::size_t);            \
  template Image tensor_to_image(const Tensor<T>&, std::size_t);

SLICEMAP_INSTANTIATE(float)
SLICEMAP_INSTANTIATE(double)

#undef SLICEMAP_INSTANTIATE

}  // namespace slicemap
