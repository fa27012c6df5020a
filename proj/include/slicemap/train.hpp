#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "slicemap/model.hpp"
#include "slicemap/optim.hpp"
#include "slicemap/slices.hpp"
#include "slicemap/volume.hpp"

namespace slicemap {

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_nll = 0.0;  // mean per-pixel NLL in nats over the epoch's steps
  double val_nll = 0.0;    // NaN without validation data
};

// Everything needed to continue training bit-for-bit: parameters, optimizer
// moments, counters and the loss history.
struct TrainingState {
  std::unique_ptr<Model<float>> model;
  AdamState<float> optimizer;
  long step = 0;
  std::size_t epoch = 0;  // completed epochs
  std::vector<EpochRecord> history;

  const ModelConfig& config() const { return model->config(); }
};

TrainingState init_training(const ModelConfig& config);

// Extracts the K training slices of each volume and resamples them to the
// flow's image size.
std::vector<SubjectSlices> prepare_subjects(std::span<const Volume> volumes, const ModelConfig& config);

struct TrainOptions {
  // Called after every completed epoch.
  std::function<void(const EpochRecord&)> on_epoch;
  // Written after every epoch and, on divergence, with the last good state.
  std::filesystem::path checkpoint_path;
  // Divergence guard on the batch-mean sequence NLL (nats).
  double divergence_limit = 1e6;
};

// Trains until config().epochs epochs have completed. Each epoch visits every
// training subject once, one random sequence of length M per visit, in
// batches of batch_size. Randomness is derived from (seed, epoch), so a run
// resumed from a checkpoint continues exactly. On divergence the pre-step
// parameters are restored and DivergenceError is thrown.
// Throws ConfigError with fewer than two training subjects.
void train(TrainingState& state, std::span<const SubjectSlices> training, std::span<const SubjectSlices> validation,
           const TrainOptions& options = {});

// Mean per-pixel NLL of a fixed, seeded set of validation sequences.
template <typename T>
double validation_nll(const Model<T>& model, std::span<const SubjectSlices> subjects);

// Loss curve as CSV: epoch,train_nll,val_nll.
void write_loss_csv(std::span<const EpochRecord> history, const std::filesystem::path& path);

// "BRNC" | u32 version | u64 json length | json | u64 blob length | f32 blob.
// The JSON carries the config, counters, loss history and a table of
// (name, shape, offset) entries into the blob; optimizer moments are stored
// as extra table entries.
void save_checkpoint(const TrainingState& state, const std::filesystem::path& path);
// Throws FormatError for bad magic, version, lengths or an inconsistent table.
TrainingState load_checkpoint(const std::filesystem::path& path);
// As above, but throws ConfigError when the stored model configuration
// differs from `expected` in anything but the epoch budget.
TrainingState load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

}  // namespace slicemap
