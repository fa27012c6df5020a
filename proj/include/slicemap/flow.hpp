#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "slicemap/random.hpp"
#include "slicemap/slices.hpp"
#include "slicemap/tensor.hpp"

namespace slicemap {

struct FlowConfig {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t num_poses = 24;  // K, length of the one-hot pose
  std::size_t coupling_layers = 6;
  std::size_t hidden_channels = 32;
  std::size_t pose_embedding = 8;
  double alpha = 0.05;

  std::size_t pixels() const { return height * width; }
  // Throws ConfigError: odd pixel count, fewer than two layers, alpha
  // outside (0, 0.5), zero widths.
  void validate() const;
  bool operator==(const FlowConfig&) const = default;
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

// Maps x in [0,1] to logit space: u = a + (1-2a)x, y = log(u/(1-u)).
// `logdet` holds the per-row log-Jacobian [N] for inputs shaped [N, ...].
template <typename T>
struct PreTransformed {
  Tensor<T> y;
  Tensor<T> logdet;
};

template <typename T>
PreTransformed<T> pre_transform(const Tensor<T>& x, double alpha);

// Exact inverse of pre_transform, clamped to [0,1].
template <typename T>
Tensor<T> inverse_pre_transform(const Tensor<T>& y, double alpha);

// One affine coupling step over a checkerboard split. Pixels where the mask
// is 1 pass through and condition the scale/shift of the others.
template <typename T>
struct CouplingLayer {
  Tensor<T> mask;  // [1, H, W], constant
  Tensor<T> conv1_weight, conv1_bias;
  Tensor<T> conv2_weight, conv2_bias;
  Tensor<T> conv3_weight, conv3_bias;  // two output channels: raw scale, shift
  Tensor<T> gain;                      // scale clamp s = gain * tanh(raw)
};

// Conditional RealNVP: logit pre-transform followed by coupling layers whose
// networks see the masked image plus a spatially broadcast pose embedding.
// forward and inverse share every weight.
template <typename T>
class ConditionalFlow {
 public:
  struct Output {
    Tensor<T> z;       // [N, D]
    Tensor<T> logdet;  // [N]
  };

  ConditionalFlow(const FlowConfig& config, std::uint64_t seed);

  const FlowConfig& config() const { return config_; }

  // images [N, H, W] in [0,1]; poses [N, K] one-hot.
  Output forward(const Tensor<T>& images, const Tensor<T>& poses) const;
  // z [N, D]; returns images [N, H, W]. Throws NumericError on overflow.
  Tensor<T> inverse(const Tensor<T>& z, const Tensor<T>& poses) const;

  std::vector<NamedTensor<T>> parameters() const;

  // Gives the zero-initialised output convolutions random weights so the
  // coupling stack is no longer the identity (tests and oracles).
  void randomize_output_layers(Rng& rng, double scale);

 private:
  struct ScaleShift {
    Tensor<T> scale;
    Tensor<T> shift;
  };
  Tensor<T> embed_poses(const Tensor<T>& poses, std::size_t n) const;
  ScaleShift scale_shift(const CouplingLayer<T>& layer, const Tensor<T>& h, const Tensor<T>& pose_map) const;

  FlowConfig config_;
  Tensor<T> embed_weight_;  // [K, E]
  Tensor<T> embed_bias_;    // [E]
  std::vector<CouplingLayer<T>> layers_;
};

// [N, H, W] tensor from same-sized images.
template <typename T>
Tensor<T> images_to_tensor(std::span<const Image* const> images);

// [N, K] one-hot rows.
template <typename T>
Tensor<T> one_hot_poses(std::span<const std::size_t> indices, std::size_t num_poses);

// Row `row` of an [N, H, W] tensor as an Image.
template <typename T>
Image tensor_to_image(const Tensor<T>& images, std::size_t row);

}  // namespace slicemap
