#include "slicemap/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "slicemap/error.hpp"

namespace slicemap {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'B', 'R', 'N', 'C'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHistoryTail = 10000;
constexpr std::uint64_t kValidationStream = 7;
constexpr std::uint64_t kEpochStream = 1000;

std::vector<Tensor<float>> tensors_of(const Model<float>& model) {
  std::vector<Tensor<float>> out;
  for (auto& p : model.parameters()) out.push_back(p.tensor);
  return out;
}

bool all_finite(std::span<const float> v) {
  return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

// Rescales all gradients together when their joint L2 norm exceeds max_norm.
void clip_global_norm(std::vector<Tensor<float>>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (float v : g.data()) sq += static_cast<double>(v) * static_cast<double>(v);
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return;
  const auto scale = static_cast<float>(max_norm / norm);
  for (auto& g : grads)
    for (float& v : g.mutable_data()) v *= scale;
}

std::size_t loss_terms(const ModelConfig& c) { return c.loss == LossMode::full ? c.sequence_length : 1; }

void check_subjects(std::span<const SubjectSlices> subjects, const ModelConfig& c, const char* what) {
  for (const auto& s : subjects) {
    if (s.num_poses() != c.num_poses()) {
      throw ConfigError(std::string(what) + " subject '" + s.subject + "' has " + std::to_string(s.num_poses()) +
                        " slices, model expects " + std::to_string(c.num_poses()));
    }
    const Image& img = s.slices.front().image;
    if (img.height != c.flow.height || img.width != c.flow.width) {
      throw ConfigError(std::string(what) + " subject '" + s.subject + "' slices do not match the model image size");
    }
  }
}

}  // namespace

TrainingState init_training(const ModelConfig& config) {
  TrainingState state;
  state.model = std::make_unique<Model<float>>(config);
  state.optimizer.config = config.adam;
  for (const auto& p : state.model->parameters()) {
    state.optimizer.lr_scale.push_back(p.name.starts_with("process.") ? config.process_lr_scale : 1.0);
  }
  return state;
}

std::vector<SubjectSlices> prepare_subjects(std::span<const Volume> volumes, const ModelConfig& config) {
  std::vector<SubjectSlices> out;
  out.reserve(volumes.size());
  for (const Volume& v : volumes) {
    SubjectSlices s = extract_slices(v, config.slab_fraction, config.num_poses());
    for (auto& slice : s.slices) {
      if (slice.image.height != config.flow.height || slice.image.width != config.flow.width) {
        slice.image = downsample(slice.image, config.flow.height, config.flow.width);
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

template <typename T>
double validation_nll(const Model<T>& model, std::span<const SubjectSlices> subjects) {
  if (subjects.empty()) return std::numeric_limits<double>::quiet_NaN();
  const ModelConfig& c = model.config();
  NoGradGuard no_grad;
  Rng rng(derive_seed(c.seed, kValidationStream));
  const std::size_t total = std::max<std::size_t>(c.validation_sequences, 1);
  double sum = 0.0;
  for (std::size_t start = 0; start < total; start += c.batch_size) {
    std::vector<SequenceSample> seqs;
    for (std::size_t i = start; i < std::min(total, start + c.batch_size); ++i) {
      seqs.push_back(sample_training_sequence(subjects[i % subjects.size()], c.sequence_length, rng));
    }
    const auto batch = make_batch<T>(seqs, c.num_poses(), c.dequantize_levels, &rng);
    const Tensor<T> nll = batch_sequence_nll(model, batch, c.loss);
    for (T v : nll.data()) sum += static_cast<double>(v);
  }
  return sum / static_cast<double>(total) / static_cast<double>(loss_terms(c) * c.flow.pixels());
}

void train(TrainingState& state, std::span<const SubjectSlices> training, std::span<const SubjectSlices> validation,
           const TrainOptions& options) {
  const ModelConfig& c = state.config();
  if (training.size() < 2) throw ConfigError("training needs at least two volumes");
  check_subjects(training, c, "training");
  check_subjects(validation, c, "validation");

  Model<float>& model = *state.model;
  std::vector<Tensor<float>> params = tensors_of(model);
  const double per_pixel = static_cast<double>(loss_terms(c) * c.flow.pixels());

  auto diverge = [&](const std::string& why, const std::vector<std::vector<float>>& values,
                     const AdamState<float>& optimizer) {
    for (std::size_t i = 0; i < params.size(); ++i) std::ranges::copy(values[i], params[i].mutable_data().begin());
    state.optimizer = optimizer;
    if (!options.checkpoint_path.empty()) save_checkpoint(state, options.checkpoint_path);
    throw DivergenceError("training diverged at step " + std::to_string(state.step) + ": " + why, state.step);
  };

  for (std::size_t epoch = state.epoch; epoch < c.epochs; ++epoch) {
    Rng rng(derive_seed(c.seed, kEpochStream + epoch));
    std::vector<std::size_t> order(training.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    double epoch_sum = 0.0;
    std::size_t epoch_count = 0;
    for (std::size_t start = 0; start < order.size(); start += c.batch_size) {
      std::vector<SequenceSample> seqs;
      for (std::size_t i = start; i < std::min(order.size(), start + c.batch_size); ++i) {
        seqs.push_back(sample_training_sequence(training[order[i]], c.sequence_length, rng));
      }
      const auto batch = make_batch<float>(seqs, c.num_poses(), c.dequantize_levels, &rng);
      const double b = static_cast<double>(seqs.size());

      std::vector<std::vector<float>> before;
      for (const auto& p : params) before.emplace_back(p.data().begin(), p.data().end());
      const AdamState<float> optimizer_before = state.optimizer;

      double mean_nll = 0.0;
      std::vector<Tensor<float>> grads;
      try {
        const Tensor<float> nll = batch_sequence_nll(model, batch, c.loss);
        const Tensor<float> total = sum(nll);
        mean_nll = static_cast<double>(total.item()) / b;
        if (!std::isfinite(mean_nll) || std::abs(mean_nll) > options.divergence_limit) {
          diverge("mean sequence NLL " + std::to_string(mean_nll), before, optimizer_before);
        }
        grads = grad(total * static_cast<float>(1.0 / (b * per_pixel)), std::span<const Tensor<float>>(params));
      } catch (const NumericError& e) {
        diverge(e.what(), before, optimizer_before);
      }
      for (const auto& g : grads)
        if (!all_finite(g.data())) diverge("non-finite gradient", before, optimizer_before);
      if (c.grad_clip_norm > 0.0) clip_global_norm(grads, c.grad_clip_norm);
      adam_step(std::span<Tensor<float>>(params), std::span<const Tensor<float>>(grads), state.optimizer);
      for (const auto& p : params)
        if (!all_finite(p.data())) diverge("non-finite parameters after update", before, optimizer_before);

      ++state.step;
      epoch_sum += mean_nll / per_pixel * b;
      epoch_count += seqs.size();
    }

    EpochRecord record{epoch + 1, epoch_sum / static_cast<double>(epoch_count), validation_nll(model, validation)};
    state.epoch = epoch + 1;
    state.history.push_back(record);
    if (state.history.size() > kHistoryTail) state.history.erase(state.history.begin());
    if (!options.checkpoint_path.empty()) save_checkpoint(state, options.checkpoint_path);
    if (options.on_epoch) options.on_epoch(record);
  }
}

void write_loss_csv(std::span<const EpochRecord> history, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "epoch,train_nll,val_nll\n" << std::setprecision(10);
  for (const auto& r : history) {
    out << r.epoch << ',' << r.train_nll << ',';
    if (std::isnan(r.val_nll))
      out << "nan";
    else
      out << r.val_nll;
    out << '\n';
  }
}

// --- checkpoint ---------------------------------------------------------------

namespace {

template <typename V>
void write_pod(std::ostream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V read_pod(std::istream& in, const fs::path& path) {
  V v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(V))) throw FormatError("truncated checkpoint " + path.string());
  return v;
}

json nullable(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double from_nullable(const json& j) { return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>(); }

}  // namespace

void save_checkpoint(const TrainingState& state, const fs::path& path) {
  const auto params = state.model->parameters();
  std::vector<std::pair<std::string, Tensor<float>>> entries;
  for (const auto& p : params) entries.emplace_back(p.name, p.tensor);
  const bool has_moments = !state.optimizer.first_moment.empty();
  if (has_moments) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      entries.emplace_back("adam.m:" + params[i].name,
                           Tensor<float>::from(params[i].tensor.shape(), state.optimizer.first_moment.at(i)));
      entries.emplace_back("adam.v:" + params[i].name,
                           Tensor<float>::from(params[i].tensor.shape(), state.optimizer.second_moment.at(i)));
    }
  }

  json table = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : entries) {
    table.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.size() * sizeof(float);
  }
  json history = json::array();
  for (const auto& r : state.history) history.push_back({r.epoch, nullable(r.train_nll), nullable(r.val_nll)});
  const json meta{{"config", state.config()},
                  {"step", state.step},
                  {"epoch", state.epoch},
                  {"history", history},
                  {"optimizer", {{"step", state.optimizer.step}, {"lr_scale", state.optimizer.lr_scale}}},
                  {"tensors", table}};
  const std::string text = meta.dump();

  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(kMagic, 4);
    write_pod(out, kVersion);
    write_pod<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    write_pod<std::uint64_t>(out, offset);
    for (const auto& [name, t] : entries) {
      out.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
    }
    if (!out) throw Error("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

TrainingState load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw FormatError("cannot read checkpoint " + path.string());
  const auto file_size = static_cast<std::uint64_t>(in.tellg());
  in.seekg(0);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw FormatError("not a checkpoint: " + path.string());
  const auto version = read_pod<std::uint32_t>(in, path);
  if (version != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto json_size = read_pod<std::uint64_t>(in, path);
  if (json_size > file_size) throw FormatError("corrupt checkpoint header in " + path.string());
  std::string text(json_size, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(json_size))) throw FormatError("truncated checkpoint " + path.string());
  const auto blob_size = read_pod<std::uint64_t>(in, path);
  const std::uint64_t header = 4 + sizeof(std::uint32_t) + 2 * sizeof(std::uint64_t) + json_size;
  if (header + blob_size != file_size) {
    throw FormatError("checkpoint blob length " + std::to_string(blob_size) + " does not match the file size");
  }
  std::vector<float> blob(blob_size / sizeof(float));
  if (blob_size % sizeof(float) != 0 || !in.read(reinterpret_cast<char*>(blob.data()), static_cast<std::streamsize>(blob_size))) {
    throw FormatError("bad checkpoint blob in " + path.string());
  }

  TrainingState state;
  try {
    const json meta = json::parse(text);
    state = init_training(meta.at("config").get<ModelConfig>());
    state.step = meta.at("step").get<long>();
    state.epoch = meta.at("epoch").get<std::size_t>();
    for (const auto& r : meta.at("history")) {
      state.history.push_back({r.at(0).get<std::size_t>(), from_nullable(r.at(1)), from_nullable(r.at(2))});
    }
    state.optimizer.step = meta.at("optimizer").at("step").get<std::int64_t>();
    state.optimizer.lr_scale = meta.at("optimizer").at("lr_scale").get<std::vector<double>>();

    const auto params = state.model->parameters();
    std::uint64_t expected_bytes = 0;
    std::map<std::string, std::pair<Shape, std::uint64_t>> table;
    for (const auto& e : meta.at("tensors")) {
      Shape shape = e.at("shape").get<Shape>();
      const auto offset = e.at("offset").get<std::uint64_t>();
      const std::uint64_t bytes = numel(shape) * sizeof(float);
      if (offset != expected_bytes) throw FormatError("checkpoint tensor table is not contiguous");
      expected_bytes += bytes;
      table[e.at("name").get<std::string>()] = {std::move(shape), offset};
    }
    if (expected_bytes != blob_size) throw FormatError("checkpoint tensor table does not cover the blob");

    auto fetch = [&](const std::string& name, const Shape& shape) {
      const auto it = table.find(name);
      if (it == table.end()) throw FormatError("checkpoint lacks tensor " + name);
      if (it->second.first != shape) throw FormatError("checkpoint tensor " + name + " has shape " + to_string(it->second.first));
      const auto first = blob.begin() + static_cast<std::ptrdiff_t>(it->second.second / sizeof(float));
      return std::vector<float>(first, first + static_cast<std::ptrdiff_t>(numel(shape)));
    };
    std::size_t used = params.size();
    for (const auto& p : params) {
      const auto values = fetch(p.name, p.tensor.shape());
      auto t = p.tensor;
      std::ranges::copy(values, t.mutable_data().begin());
    }
    if (state.optimizer.step > 0) {
      for (const auto& p : params) {
        state.optimizer.first_moment.push_back(fetch("adam.m:" + p.name, p.tensor.shape()));
        state.optimizer.second_moment.push_back(fetch("adam.v:" + p.name, p.tensor.shape()));
      }
      used += 2 * params.size();
    }
    if (used != table.size()) throw FormatError("checkpoint has unexpected tensors");
    if (state.optimizer.lr_scale.size() != params.size()) throw FormatError("checkpoint optimizer table mismatch");
  } catch (const json::exception& e) {
    throw FormatError("malformed checkpoint metadata in " + path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError("invalid configuration in checkpoint " + path.string() + ": " + e.what());
  }
  return state;
}

TrainingState load_checkpoint(const fs::path& path, const ModelConfig& expected) {
  TrainingState state = load_checkpoint(path);
  ModelConfig stored = state.config();
  stored.epochs = expected.epochs;
  if (!(stored == expected)) {
    throw ConfigError("checkpoint " + path.string() + " was trained with a different configuration:\n  stored:   " +
                      json(state.config()).dump() + "\n  expected: " + json(expected).dump());
  }
  if (state.config().epochs != expected.epochs) {
    // Carry the new epoch budget into the restored model.
    TrainingState resized = init_training(expected);
    copy_parameters(*state.model, *resized.model);
    resized.optimizer = std::move(state.optimizer);
    resized.step = state.step;
    resized.epoch = state.epoch;
    resized.history = std::move(state.history);
    return resized;
  }
  return state;
}

template double validation_nll(const Model<float>&, std::span<const SubjectSlices>);
template double validation_nll(const Model<double>&, std::span<const SubjectSlices>);

}  // namespace slicemap
