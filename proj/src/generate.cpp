#include "slicemap/generate.hpp"

#include <algorithm>

#include "slicemap/error.hpp"

namespace slicemap {

std::string to_string(GenerationMode mode) {
  switch (mode) {
    case GenerationMode::sample: return "sample";
    case GenerationMode::average: return "average";
    case GenerationMode::mean_latent: return "mean-latent";
  }
  return "unknown";
}

GenerationMode parse_generation_mode(const std::string& name) {
  if (name == "sample") return GenerationMode::sample;
  if (name == "average") return GenerationMode::average;
  if (name == "mean-latent") return GenerationMode::mean_latent;
  throw ConfigError("unknown generation mode '" + name + "' (expected sample, average or mean-latent)");
}

template <typename T>
ConditionedModel<T>::ConditionedModel(const Model<T>& model, ProcessState<T> state, std::vector<std::size_t> contexts)
    : model_(&model), state_(std::move(state)), contexts_(std::move(contexts)) {}

template <typename T>
bool ConditionedModel<T>::has_duplicate_contexts() const {
  std::vector<std::size_t> sorted = contexts_;
  std::ranges::sort(sorted);
  return std::ranges::adjacent_find(sorted) != sorted.end();
}

template <typename T>
ConditionedModel<T> condition(const Model<T>& model, std::span<const SlicePose> contexts) {
  const FlowConfig& fc = model.config().flow;
  const auto& process = model.process();
  NoGradGuard no_grad;
  ProcessState<T> state = process.init_state(1);
  std::vector<std::size_t> indices;
  if (contexts.empty()) return ConditionedModel<T>(model, std::move(state), {});

  std::vector<const Image*> images;
  for (const SlicePose& c : contexts) {
    if (c.index >= fc.num_poses) {
      throw ConfigError("context pose " + std::to_string(c.index) + " outside [0, " + std::to_string(fc.num_poses) + ")");
    }
    if (c.image.height != fc.height || c.image.width != fc.width) {
      throw ShapeError("context image is " + std::to_string(c.image.height) + "x" + std::to_string(c.image.width) +
                       ", model expects " + std::to_string(fc.height) + "x" + std::to_string(fc.width));
    }
    images.push_back(&c.image);
    indices.push_back(c.index);
  }
  const auto out = model.flow().forward(images_to_tensor<T>(images), one_hot_poses<T>(indices, fc.num_poses));
  for (std::size_t i = 0; i < contexts.size(); ++i) state = process.update_state(state, slice(out.z, 0, i, i + 1));
  return ConditionedModel<T>(model, std::move(state), std::move(indices));
}

namespace {

template <typename T>
Tensor<T> repeat_rows(const Tensor<T>& row, std::size_t n) {
  const auto src = row.data();
  std::vector<T> out;
  out.reserve(n * src.size());
  for (std::size_t i = 0; i < n; ++i) out.insert(out.end(), src.begin(), src.end());
  return Tensor<T>::from({n, src.size()}, std::move(out));
}

}  // namespace

template <typename T>
Image generate_slice(const ConditionedModel<T>& cm, std::size_t k, std::size_t n_samples, GenerationMode mode, Rng& rng,
                     std::vector<Image>* samples) {
  const Model<T>& model = cm.model();
  const std::size_t K = model.config().num_poses();
  if (k >= K) throw ConfigError("query pose " + std::to_string(k) + " outside [0, " + std::to_string(K) + ")");
  if (mode == GenerationMode::average && n_samples == 0) throw ConfigError("average mode needs at least one sample");
  NoGradGuard no_grad;

  Tensor<T> z;
  if (mode == GenerationMode::mean_latent) {
    z = cm.predictive().loc;
  } else {
    const std::size_t n = mode == GenerationMode::sample ? 1 : n_samples;
    const ProcessState<T>& s = cm.state();
    ProcessState<T> tiled{s.count, repeat_rows(s.sum, n), repeat_rows(s.sumsq, n)};
    z = model.process().sample(tiled, rng);
  }
  const std::size_t n = z.dim(0);
  const std::vector<std::size_t> poses(n, k);
  const Tensor<T> images = model.flow().inverse(z, one_hot_poses<T>(poses, K));

  if (samples) {
    samples->clear();
    for (std::size_t i = 0; i < n; ++i) samples->push_back(tensor_to_image(images, i));
  }
  if (n == 1) return tensor_to_image(images, 0);

  const std::size_t d = model.config().flow.pixels();
  std::vector<double> acc(d, 0.0);
  const auto px = images.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < d; ++p) acc[p] += static_cast<double>(px[i * d + p]);
  Image mean(model.config().flow.height, model.config().flow.width);
  for (std::size_t p = 0; p < d; ++p) mean.pixels[p] = static_cast<float>(acc[p] / static_cast<double>(n));
  return mean;
}

template <typename T>
Volume dense_sweep(const ConditionedModel<T>& cm, std::size_t n_samples, GenerationMode mode, std::uint64_t seed) {
  const std::size_t K = cm.model().config().num_poses();
  std::vector<Image> slices;
  slices.reserve(K);
  for (std::size_t k = 0; k < K; ++k) {
    Rng rng(derive_seed(seed, k));
    slices.push_back(generate_slice(cm, k, n_samples, mode, rng));
  }
  return stack_slices(slices);
}

#define SLICEMAP_INSTANTIATE(T)                                                                                   \
  template class ConditionedModel<T>;                                                                             \
  template ConditionedModel<T> condition(const Model<T>&, std::span<const SlicePose>);                            \
  template Image generate_slice(const ConditionedModel<T>&, std::size_t, std::size_t, GenerationMode, Rng&,       \
                                std::vector<Image>*);                                                             \
  template Volume dense_sweep(const ConditionedModel<T>&, std::size_t, GenerationMode, std::uint64_t);

SLICEMAP_INSTANTIATE(float)
SLICEMAP_INSTANTIATE(double)

#undef SLICEMAP_INSTANTIATE

}  // namespace slicemap
