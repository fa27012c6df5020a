#include "slicemap/model.hpp"

#include <cmath>
#include <map>

#include "json_util.hpp"
#include "slicemap/error.hpp"

namespace slicemap {

using nlohmann::json;

std::string to_string(LossMode mode) { return mode == LossMode::full ? "full" : "last"; }

LossMode parse_loss_mode(const std::string& name) {
  if (name == "full") return LossMode::full;
  if (name == "last") return LossMode::last;
  throw ConfigError("unknown loss mode '" + name + "' (expected full or last)");
}

void ModelConfig::validate() const {
  flow.validate();
  if (sequence_length < 2) throw ConfigError("sequence_length (M) must be at least 2");
  if (flow.num_poses < sequence_length) throw ConfigError("num_poses (K) must be at least sequence_length (M)");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(adam.learning_rate > 0.0) || !(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0) ||
      !(adam.epsilon > 0.0)) {
    throw ConfigError("invalid optimizer settings");
  }
  if (!(process_lr_scale >= 0.0)) throw ConfigError("process_lr_scale must be non-negative");
  if (!(grad_clip_norm >= 0.0)) throw ConfigError("grad_clip_norm must be non-negative");
  if (!(slab_fraction > 0.0 && slab_fraction <= 1.0)) throw ConfigError("slab_fraction must lie in (0, 1]");
  if (dequantize_levels == 1) throw ConfigError("dequantize_levels must be 0 or at least 2");
}

void to_json(json& j, const FlowConfig& c) {
  j = json{{"height", c.height},
           {"width", c.width},
           {"num_poses", c.num_poses},
           {"coupling_layers", c.coupling_layers},
           {"hidden_channels", c.hidden_channels},
           {"pose_embedding", c.pose_embedding},
           {"alpha", c.alpha}};
}

void from_json(const json& j, FlowConfig& c) {
  const std::string ctx = "flow";
  detail::reject_unknown_keys(
      j, {"height", "width", "num_poses", "coupling_layers", "hidden_channels", "pose_embedding", "alpha"}, ctx);
  detail::read_optional(j, "height", c.height, ctx);
  detail::read_optional(j, "width", c.width, ctx);
  detail::read_optional(j, "num_poses", c.num_poses, ctx);
  detail::read_optional(j, "coupling_layers", c.coupling_layers, ctx);
  detail::read_optional(j, "hidden_channels", c.hidden_channels, ctx);
  detail::read_optional(j, "pose_embedding", c.pose_embedding, ctx);
  detail::read_optional(j, "alpha", c.alpha, ctx);
}

void to_json(json& j, const AdamConfig& c) {
  j = json{{"learning_rate", c.learning_rate}, {"beta1", c.beta1}, {"beta2", c.beta2}, {"epsilon", c.epsilon}};
}

void from_json(const json& j, AdamConfig& c) {
  const std::string ctx = "adam";
  detail::reject_unknown_keys(j, {"learning_rate", "beta1", "beta2", "epsilon"}, ctx);
  detail::read_optional(j, "learning_rate", c.learning_rate, ctx);
  detail::read_optional(j, "beta1", c.beta1, ctx);
  detail::read_optional(j, "beta2", c.beta2, ctx);
  detail::read_optional(j, "epsilon", c.epsilon, ctx);
}

void to_json(json& j, const ModelConfig& c) {
  j = json{{"flow", c.flow},
           {"process", to_string(c.process)},
           {"sequence_length", c.sequence_length},
           {"batch_size", c.batch_size},
           {"epochs", c.epochs},
           {"adam", c.adam},
           {"process_lr_scale", c.process_lr_scale},
           {"grad_clip_norm", c.grad_clip_norm},
           {"loss", to_string(c.loss)},
           {"slab_fraction", c.slab_fraction},
           {"dequantize_levels", c.dequantize_levels},
           {"validation_sequences", c.validation_sequences},
           {"seed", c.seed}};
}

void from_json(const json& j, ModelConfig& c) {
  const std::string ctx = "model";
  detail::reject_unknown_keys(j,
                              {"flow", "process", "sequence_length", "batch_size", "epochs", "adam", "process_lr_scale",
                               "grad_clip_norm", "loss", "slab_fraction", "dequantize_levels", "validation_sequences", "seed"},
                              ctx);
  if (j.contains("flow")) from_json(j.at("flow"), c.flow);
  if (j.contains("adam")) from_json(j.at("adam"), c.adam);
  std::string name;
  if (j.contains("process")) {
    detail::read_optional(j, "process", name, ctx);
    c.process = parse_process_mode(name);
  }
  if (j.contains("loss")) {
    detail::read_optional(j, "loss", name, ctx);
    c.loss = parse_loss_mode(name);
  }
  detail::read_optional(j, "sequence_length", c.sequence_length, ctx);
  detail::read_optional(j, "batch_size", c.batch_size, ctx);
  detail::read_optional(j, "epochs", c.epochs, ctx);
  detail::read_optional(j, "process_lr_scale", c.process_lr_scale, ctx);
  detail::read_optional(j, "grad_clip_norm", c.grad_clip_norm, ctx);
  detail::read_optional(j, "slab_fraction", c.slab_fraction, ctx);
  detail::read_optional(j, "dequantize_levels", c.dequantize_levels, ctx);
  detail::read_optional(j, "validation_sequences", c.validation_sequences, ctx);
  detail::read_optional(j, "seed", c.seed, ctx);
}

namespace {

const ModelConfig& validated(const ModelConfig& c) {
  c.validate();
  return c;
}

}  // namespace

template <typename T>
Model<T>::Model(const ModelConfig& config)
    : config_(validated(config)),
      flow_(config.flow, derive_seed(config.seed, 1)),
      process_(config.flow.pixels(), config.process) {}

template <typename T>
std::vector<NamedTensor<T>> Model<T>::parameters() const {
  std::vector<NamedTensor<T>> out;
  for (auto& p : flow_.parameters()) out.push_back({"flow." + p.name, p.tensor});
  for (auto& p : process_.parameters()) out.push_back(p);
  return out;
}

template <typename Dst, typename Src>
void copy_parameters(const Model<Src>& src, Model<Dst>& dst) {
  const auto from = src.parameters();
  auto to = dst.parameters();
  if (from.size() != to.size()) throw ShapeError("copy_parameters: parameter tables differ in length");
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (from[i].name != to[i].name || from[i].tensor.shape() != to[i].tensor.shape()) {
      throw ShapeError("copy_parameters: mismatch at " + from[i].name);
    }
    auto out = to[i].tensor.mutable_data();
    const auto in = from[i].tensor.data();
    for (std::size_t k = 0; k < in.size(); ++k) out[k] = static_cast<Dst>(in[k]);
  }
}

template <typename T>
SequenceBatch<T> make_batch(std::span<const SequenceSample> sequences, std::size_t num_poses,
                            std::size_t dequantize_levels, Rng* dequantize_rng) {
  if (sequences.empty()) throw ShapeError("make_batch: no sequences");
  const std::size_t m = sequences[0].length(), b = sequences.size();
  if (m == 0) throw ShapeError("make_batch: empty sequence");
  const Image& first = sequences[0].entries[0].image;
  const std::size_t h = first.height, w = first.width, d = h * w;
  std::vector<T> pixels(m * b * d);
  std::vector<std::size_t> poses(m * b);
  const bool dequantize = dequantize_levels > 1 && dequantize_rng != nullptr;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double levels = static_cast<double>(dequantize_levels);
  for (std::size_t j = 0; j < b; ++j) {
    if (sequences[j].length() != m) throw ShapeError("make_batch: sequences differ in length");
    for (std::size_t i = 0; i < m; ++i) {
      const SlicePose& e = sequences[j].entries[i];
      if (e.image.height != h || e.image.width != w) throw ShapeError("make_batch: images differ in size");
      const std::size_t row = i * b + j;
      poses[row] = e.index;
      T* dst = pixels.data() + row * d;
      for (std::size_t p = 0; p < d; ++p) {
        double x = e.image.pixels[p];
        if (dequantize) x = (x * (levels - 1.0) + u(*dequantize_rng)) / levels;
        dst[p] = static_cast<T>(x);
      }
    }
  }
  return {Tensor<T>::from({m * b, h, w}, std::move(pixels)), one_hot_poses<T>(poses, num_poses), m, b};
}

template <typename T>
Tensor<T> batch_sequence_nll(const Model<T>& model, const SequenceBatch<T>& batch, LossMode mode) {
  const auto out = model.flow().forward(batch.images, batch.poses);
  const auto& process = model.process();
  const std::size_t b = batch.batch;
  auto state = process.init_state(b);
  Tensor<T> total;
  for (std::size_t m = 0; m < batch.length; ++m) {
    const Tensor<T> z = slice(out.z, 0, m * b, (m + 1) * b);
    if (mode == LossMode::full || m + 1 == batch.length) {
      const Tensor<T> term = process.predictive_logpdf(z, state) + slice(out.logdet, 0, m * b, (m + 1) * b);
      total = total.defined() ? total + term : term;
    }
    if (m + 1 < batch.length) state = process.update_state(state, z);
  }
  return -total;
}

template <typename T>
Tensor<T> sequence_nll(const Model<T>& model, const SequenceSample& sequence, LossMode mode) {
  const auto batch = make_batch<T>(std::span(&sequence, 1), model.config().num_poses());
  return reshape(batch_sequence_nll(model, batch, mode), {});
}

#define SLICEMAP_INSTANTIATE(T)                                                                                \
  template class Model<T>;                                                                                     \
  template SequenceBatch<T> make_batch(std::span<const SequenceSample>, std::size_t, std::size_t, Rng*);       \
  template Tensor<T> batch_sequence_nll(const Model<T>&, const SequenceBatch<T>&, LossMode);                   \
  template Tensor<T> sequence_nll(const Model<T>&, const SequenceSample&, LossMode);

SLICEMAP_INSTANTIATE(float)
SLICEMAP_INSTANTIATE(double)

#undef SLICEMAP_INSTANTIATE

template void copy_parameters(const Model<float>&, Model<double>&);
template void copy_parameters(const Model<double>&, Model<float>&);
template void copy_parameters(const Model<float>&, Model<float>&);
template void copy_parameters(const Model<double>&, Model<double>&);

}  // namespace slicemap
