#include "slicemap/evaluate.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <limits>
#include <mutex>
#include <thread>

#include "slicemap/error.hpp"
#include "slicemap/metrics.hpp"
#include "slicemap/motion.hpp"
#include "slicemap/train.hpp"

namespace slicemap {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kMotionStream = 0x6d6f74;

// Runs fn(0..n-1) on up to `jobs` threads and rethrows the first failure.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn fn) {
  jobs = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(n, 1));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = n;
      }
    }
  };
  std::vector<std::jthread> pool;
  for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

double safe_cc(const Image& a, const Image& b) {
  try {
    return cross_correlation(a, b);
  } catch (const NumericError&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

double nan_mean(const std::vector<double>& v) {
  double s = 0.0;
  std::size_t n = 0;
  for (double x : v)
    if (!std::isnan(x)) s += x, ++n;
  return n ? s / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

std::vector<std::size_t> schedule(std::size_t n, std::size_t k) {
  return n == 0 ? std::vector<std::size_t>{} : select_context_schedule(n, k);
}

std::vector<SlicePose> pick(const SubjectSlices& s, std::span<const std::size_t> indices) {
  std::vector<SlicePose> out;
  for (std::size_t i : indices) out.push_back(s.slices.at(i));
  return out;
}

void write_number(std::ostream& out, double v) {
  if (std::isnan(v))
    out << "nan";
  else
    out << v;
}

std::ofstream open_csv(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << std::setprecision(10);
  return out;
}

}  // namespace

MetricsReport evaluate_dataset(const Model<float>& model, std::span<const SubjectSlices> subjects,
                               const EvalOptions& options) {
  const ModelConfig& c = model.config();
  const std::size_t K = c.num_poses(), nc = options.context_counts.size();
  for (const auto& s : subjects) {
    if (s.num_poses() != K) throw ConfigError("subject '" + s.subject + "' does not have K slices");
  }
  std::vector<std::vector<std::size_t>> schedules;
  for (std::size_t n : options.context_counts) {
    if (n > K) throw ConfigError("context count " + std::to_string(n) + " exceeds K = " + std::to_string(K));
    schedules.push_back(schedule(n, K));
  }

  std::vector<std::vector<SliceMetric>> cells(subjects.size() * nc);
  parallel_for(cells.size(), options.jobs, [&](std::size_t cell) {
    const std::size_t si = cell / nc, ci = cell % nc;
    const SubjectSlices& subject = subjects[si];
    const auto& sched = schedules[ci];
    const auto contexts = pick(subject, sched);
    const auto cm = condition(model, std::span<const SlicePose>(contexts));
    const Volume generated = dense_sweep(cm, options.n_samples, options.mode, derive_seed(derive_seed(options.seed, si), ci));
    auto& rows = cells[cell];
    for (std::size_t k = 0; k < K; ++k) {
      const Image g = generated.axial_slice(k);
      const Image& truth = subject.slices[k].image;
      rows.push_back({subject.subject, options.context_counts[ci], k, std::ranges::find(sched, k) != sched.end(),
                      ssim(g, truth), safe_cc(g, truth)});
    }
  });

  MetricsReport report;
  for (std::size_t ci = 0; ci < nc; ++ci) {
    SummaryMetric s;
    s.n_contexts = options.context_counts[ci];
    s.subjects = subjects.size();
    s.contexts = schedules[ci];
    s.slice_ssim.assign(K, 0.0);
    s.slice_cc.assign(K, 0.0);
    report.summary.push_back(std::move(s));
  }
  std::vector<std::vector<std::vector<double>>> cc_by_slice(nc, std::vector<std::vector<double>>(K));
  std::vector<std::vector<double>> cc_by_volume(nc);
  for (std::size_t cell = 0; cell < cells.size(); ++cell) {
    const std::size_t ci = cell % nc;
    const auto& rows = cells[cell];
    VolumeMetric v{rows.front().subject, rows.front().n_contexts, 0.0, 0.0};
    std::vector<double> ccs;
    for (const auto& r : rows) {
      v.ssim += r.ssim;
      ccs.push_back(r.cc);
      report.summary[ci].slice_ssim[r.k] += r.ssim;
      cc_by_slice[ci][r.k].push_back(r.cc);
      report.slices.push_back(r);
    }
    v.ssim /= static_cast<double>(K);
    v.cc = nan_mean(ccs);
    report.summary[ci].ssim += v.ssim;
    cc_by_volume[ci].push_back(v.cc);
    report.volumes.push_back(std::move(v));
  }
  const double n_subjects = static_cast<double>(subjects.size());
  for (std::size_t ci = 0; ci < nc; ++ci) {
    SummaryMetric& s = report.summary[ci];
    if (subjects.empty()) {
      s.ssim = s.cc = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    s.ssim /= n_subjects;
    s.cc = nan_mean(cc_by_volume[ci]);
    for (std::size_t k = 0; k < K; ++k) {
      s.slice_ssim[k] /= n_subjects;
      s.slice_cc[k] = nan_mean(cc_by_slice[ci][k]);
    }
  }
  return report;
}

void write_metrics_csv(const MetricsReport& report, const fs::path& path) {
  auto out = open_csv(path);
  out << "subject,n_contexts,k,ssim,cc\n";
  const std::size_t per_volume = report.volumes.empty() ? 0 : report.slices.size() / report.volumes.size();
  for (std::size_t i = 0; i < report.volumes.size(); ++i) {
    const VolumeMetric& v = report.volumes[i];
    for (std::size_t row = i * per_volume; row < (i + 1) * per_volume; ++row) {
      const SliceMetric& s = report.slices[row];
      out << s.subject << ',' << s.n_contexts << ',' << s.k << ',' << s.ssim << ',';
      write_number(out, s.cc);
      out << '\n';
    }
    out << v.subject << ',' << v.n_contexts << ",volume," << v.ssim << ',';
    write_number(out, v.cc);
    out << '\n';
  }
}

void write_summary_csv(const MetricsReport& report, const fs::path& path) {
  auto out = open_csv(path);
  out << "n_contexts,subjects,ssim,cc,contexts\n";
  for (const SummaryMetric& s : report.summary) {
    out << s.n_contexts << ',' << s.subjects << ',';
    write_number(out, s.ssim);
    out << ',';
    write_number(out, s.cc);
    out << ',';
    for (std::size_t i = 0; i < s.contexts.size(); ++i) out << (i ? " " : "") << s.contexts[i];
    out << '\n';
  }
}

void write_curve_csv(const SummaryMetric& summary, const fs::path& path) {
  auto out = open_csv(path);
  out << "k,is_context,ssim,cc\n";
  for (std::size_t k = 0; k < summary.slice_ssim.size(); ++k) {
    const bool ctx = std::ranges::find(summary.contexts, k) != summary.contexts.end();
    out << k << ',' << (ctx ? 1 : 0) << ',' << summary.slice_ssim[k] << ',';
    write_number(out, summary.slice_cc[k]);
    out << '\n';
  }
}

MotionResult motion_experiment(const Model<float>& model, const Volume& clean, const MotionOptions& options) {
  const ModelConfig& c = model.config();
  const std::size_t K = c.num_poses();
  if (options.n_contexts > K) throw ConfigError("motion experiment: more contexts than poses");

  const SubjectSlices truth = prepare_subjects(std::span(&clean, 1), c).front();
  const Volume truth_slab = truth.as_volume();

  const auto sched = schedule(options.n_contexts, K);
  const auto contexts = pick(truth, sched);
  const auto cm = condition(model, std::span<const SlicePose>(contexts));
  const Volume generated = dense_sweep(cm, options.n_samples, options.mode, options.seed);

  Rng rng(derive_seed(options.seed, kMotionStream));
  const MotionCorruption corrupted =
      motion_corrupt_stacks(clean, options.n_stacks, options.max_translation, rng, options.blur_sigma);
  const Volume baseline = prepare_subjects(std::span(&corrupted.gaussian_average, 1), c).front().as_volume();

  return {clean.subject, ssim(generated, truth_slab), ssim(baseline, truth_slab)};
}

std::vector<MotionResult> motion_dataset(const Model<float>& model, std::span<const Volume> volumes,
                                         const MotionOptions& options) {
  std::vector<MotionResult> out(volumes.size());
  parallel_for(volumes.size(), options.jobs, [&](std::size_t i) {
    MotionOptions o = options;
    o.seed = derive_seed(options.seed, i);
    out[i] = motion_experiment(model, volumes[i], o);
  });
  return out;
}

void write_motion_csv(std::span<const MotionResult> rows, const fs::path& path) {
  auto out = open_csv(path);
  out << "subject,ssim_generated,ssim_gaussian_average\n";
  for (const auto& r : rows) out << r.subject << ',' << r.ssim_generated << ',' << r.ssim_gaussian_average << '\n';
}

}  // namespace slicemap
