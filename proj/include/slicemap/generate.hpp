#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "slicemap/model.hpp"
#include "slicemap/random.hpp"
#include "slicemap/slices.hpp"
#include "slicemap/volume.hpp"

namespace slicemap {

// sample: one draw from the predictive per query.
// average: pixel mean of n draws.
// mean-latent: the inverse flow of the predictive location. An
// approximation to the mean image, not equal to it.
enum class GenerationMode { sample, average, mean_latent };

std::string to_string(GenerationMode mode);
// Accepts "sample", "average" and "mean-latent"; throws ConfigError otherwise.
GenerationMode parse_generation_mode(const std::string& name);

// A model plus the process state after folding in a fixed set of context
// slices. Queries never change the state.
template <typename T>
class ConditionedModel {
 public:
  ConditionedModel(const Model<T>& model, ProcessState<T> state, std::vector<std::size_t> contexts);

  const Model<T>& model() const { return *model_; }
  const ProcessState<T>& state() const { return state_; }
  const std::vector<std::size_t>& contexts() const { return contexts_; }
  bool has_duplicate_contexts() const;

  Predictive<T> predictive() const { return model_->process().predictive(state_); }

 private:
  const Model<T>* model_;
  ProcessState<T> state_;
  std::vector<std::size_t> contexts_;
};

// An empty context list leaves the prior. Repeated indices are accepted.
// Throws ConfigError for a pose outside [0, K) and ShapeError for images of
// the wrong size.
template <typename T>
ConditionedModel<T> condition(const Model<T>& model, std::span<const SlicePose> contexts);

// Generates the slice at pose k. `samples`, when given, receives every
// decoded draw (the single decoded image in mean-latent mode).
// Throws ConfigError for k >= K or n_samples == 0 in average mode.
template <typename T>
Image generate_slice(const ConditionedModel<T>& cm, std::size_t k, std::size_t n_samples, GenerationMode mode, Rng& rng,
                     std::vector<Image>* samples = nullptr);

// generate_slice for k = 0..K-1 stacked into a [K, H, W] volume. Slice k draws
// from its own stream derive_seed(seed, k).
template <typename T>
Volume dense_sweep(const ConditionedModel<T>& cm, std::size_t n_samples, GenerationMode mode, std::uint64_t seed);

}  // namespace slicemap
