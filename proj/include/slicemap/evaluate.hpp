#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "slicemap/generate.hpp"
#include "slicemap/model.hpp"
#include "slicemap/slices.hpp"
#include "slicemap/volume.hpp"

namespace slicemap {

struct EvalOptions {
  std::vector<std::size_t> context_counts{0, 1, 2, 4};
  std::size_t n_samples = 32;
  GenerationMode mode = GenerationMode::average;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
};

struct SliceMetric {
  std::string subject;
  std::size_t n_contexts = 0;
  std::size_t k = 0;
  bool is_context = false;
  double ssim = 0.0;
  double cc = 0.0;  // NaN when a slice is constant
};

// Averages over the K slices of one generated volume.
struct VolumeMetric {
  std::string subject;
  std::size_t n_contexts = 0;
  double ssim = 0.0;
  double cc = 0.0;  // mean over slices with a defined CC
};

// Averages over subjects for one context count.
struct SummaryMetric {
  std::size_t n_contexts = 0;
  std::size_t subjects = 0;
  double ssim = 0.0;
  double cc = 0.0;
  std::vector<std::size_t> contexts;  // the schedule used
  std::vector<double> slice_ssim;     // [K], mean over subjects
  std::vector<double> slice_cc;       // [K]
};

struct MetricsReport {
  std::vector<SliceMetric> slices;    // subject-major, then context count, then k
  std::vector<VolumeMetric> volumes;  // subject-major, then context count
  std::vector<SummaryMetric> summary; // one per context count, in request order
};

// For every test subject and context count: conditions on the evenly spread
// schedule of that size, runs a dense sweep and scores each slice against
// the subject's own. Subjects must already be at the model's K and image
// size (see prepare_subjects). Results do not depend on `jobs`.
MetricsReport evaluate_dataset(const Model<float>& model, std::span<const SubjectSlices> subjects,
                               const EvalOptions& options);

// subject,n_contexts,k,ssim,cc with K slice rows and one "volume" row per
// subject and context count.
void write_metrics_csv(const MetricsReport& report, const std::filesystem::path& path);
// n_contexts,subjects,ssim,cc,contexts
void write_summary_csv(const MetricsReport& report, const std::filesystem::path& path);
// k,is_context,ssim,cc for one context count.
void write_curve_csv(const SummaryMetric& summary, const std::filesystem::path& path);

struct MotionOptions {
  std::size_t max_translation = 10;
  std::size_t n_stacks = 3;
  std::size_t n_contexts = 4;
  double blur_sigma = 1.0;
  std::size_t n_samples = 32;
  GenerationMode mode = GenerationMode::average;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
};

struct MotionResult {
  std::string subject;
  double ssim_generated = 0.0;
  double ssim_gaussian_average = 0.0;
};

// Scores a dense sweep conditioned on n_contexts clean slices and the
// Gaussian-averaged motion-corrupted stacks against the clean volume. Both
// are compared on the K training slices of the slab.
MotionResult motion_experiment(const Model<float>& model, const Volume& clean, const MotionOptions& options);
std::vector<MotionResult> motion_dataset(const Model<float>& model, std::span<const Volume> volumes,
                                         const MotionOptions& options);
// subject,ssim_generated,ssim_gaussian_average
void write_motion_csv(std::span<const MotionResult> rows, const std::filesystem::path& path);

}  // namespace slicemap
