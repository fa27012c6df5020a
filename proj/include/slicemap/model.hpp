#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "slicemap/flow.hpp"
#include "slicemap/optim.hpp"
#include "slicemap/process.hpp"
#include "slicemap/slices.hpp"

namespace slicemap {

// full: every position of the sequence contributes a predictive term.
// last: only the final (query) position does; earlier ones just condition.
enum class LossMode { full, last };

std::string to_string(LossMode mode);
LossMode parse_loss_mode(const std::string& name);

struct ModelConfig {
  FlowConfig flow;
  ProcessMode process = ProcessMode::student_t;
  std::size_t sequence_length = 5;  // M
  std::size_t batch_size = 16;
  std::size_t epochs = 50;
  AdamConfig adam;
  double process_lr_scale = 1.0;
  double grad_clip_norm = 0.0;  // global L2 gradient norm cap; 0 disables
  LossMode loss = LossMode::full;
  double slab_fraction = 0.75;          // centred depth fraction the K slices cover
  std::size_t dequantize_levels = 256;  // 0 disables uniform dequantisation noise
  std::size_t validation_sequences = 32;
  std::uint64_t seed = 0;

  std::size_t num_poses() const { return flow.num_poses; }
  // Throws ConfigError: M < 2, K < M, zero batch, bad learning rate, slab
  // fraction or clip norm, plus everything FlowConfig::validate rejects.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const FlowConfig& c);
void from_json(const nlohmann::json& j, FlowConfig& c);
void to_json(nlohmann::json& j, const AdamConfig& c);
void from_json(const nlohmann::json& j, AdamConfig& c);
// Missing keys keep their defaults; unknown keys raise ConfigError.
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// Pose-conditioned flow plus exchangeable latent process.
template <typename T>
class Model {
 public:
  explicit Model(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  const ConditionalFlow<T>& flow() const { return flow_; }
  ConditionalFlow<T>& flow() { return flow_; }
  const ExchangeableProcess<T>& process() const { return process_; }
  ExchangeableProcess<T>& process() { return process_; }

  // Flow parameters prefixed "flow.", then the process ones.
  std::vector<NamedTensor<T>> parameters() const;

 private:
  ModelConfig config_;
  ConditionalFlow<T> flow_;
  ExchangeableProcess<T> process_;
};

// Copies values by name; throws ShapeError when the tables differ.
template <typename Dst, typename Src>
void copy_parameters(const Model<Src>& src, Model<Dst>& dst);

// M sequences of equal length stacked position-major: row m * B + b holds
// entry m of sequence b.
template <typename T>
struct SequenceBatch {
  Tensor<T> images;  // [M * B, H, W]
  Tensor<T> poses;   // [M * B, K]
  std::size_t length = 0;
  std::size_t batch = 0;
};

// When `dequantize_rng` is non-null each pixel x becomes
// (x * (L - 1) + u) / L with u ~ U(0, 1).
template <typename T>
SequenceBatch<T> make_batch(std::span<const SequenceSample> sequences, std::size_t num_poses,
                            std::size_t dequantize_levels = 0, Rng* dequantize_rng = nullptr);

// Negative log-likelihood of each sequence [B], in nats:
//   -sum_m [ log p(z_m | z_<m) + log|det dz_m/dx_m| ]
// with the sum restricted to the last position in LossMode::last.
template <typename T>
Tensor<T> batch_sequence_nll(const Model<T>& model, const SequenceBatch<T>& batch, LossMode mode = LossMode::full);

template <typename T>
Tensor<T> sequence_nll(const Model<T>& model, const SequenceSample& sequence, LossMode mode = LossMode::full);

}  // namespace slicemap
