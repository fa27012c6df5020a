// slicemap: phantom | train | generate | eval
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure
// (I/O, numerics, divergence).

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "slicemap/error.hpp"
#include "slicemap/evaluate.hpp"
#include "slicemap/generate.hpp"
#include "slicemap/phantom.hpp"
#include "slicemap/run_config.hpp"
#include "slicemap/train.hpp"

namespace fs = std::filesystem;
using namespace slicemap;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kRuntime = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// "3,7,11" -> {3, 7, 11}; "" -> {}.
std::vector<std::size_t> parse_index_list(const std::string& text, const char* flag) {
  std::vector<std::size_t> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto first = item.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    item = item.substr(first, item.find_last_not_of(" \t") - first + 1);
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != item.size() || item.starts_with('-')) {
      throw UsageError(std::string(flag) + ": '" + item + "' is not a non-negative integer");
    }
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

std::vector<Volume> load_directory(const std::string& dir, const char* what) {
  if (dir.empty()) throw UsageError(std::string("no ") + what + " directory given");
  if (!fs::is_directory(dir)) throw Error(std::string(what) + " directory '" + dir + "' does not exist");
  std::vector<Volume> out;
  for (const auto& path : list_volumes(dir)) out.push_back(load_volume(path));
  if (out.empty()) throw Error(std::string(what) + " directory '" + dir + "' holds no .vol files");
  return out;
}

Model<float> load_model(const std::string& path) {
  TrainingState state = load_checkpoint(path);
  return std::move(*state.model);
}

struct Common {
  std::string config_path;
  bool print_config = false;
  std::size_t jobs = 1;

  RunConfig load() const { return config_path.empty() ? RunConfig{} : load_run_config(config_path); }
};

// --- phantom ---------------------------------------------------------------

struct PhantomArgs {
  std::size_t count = 0;
  std::vector<std::size_t> shape;
  std::optional<std::uint64_t> seed;
  std::string out;
};

int cmd_phantom(const Common& common, const PhantomArgs& a) {
  RunConfig cfg = common.load();
  if (!a.shape.empty()) {
    if (a.shape.size() != 3) throw UsageError("--shape expects Z,Y,X");
    cfg.phantom.shape = {a.shape[0], a.shape[1], a.shape[2]};
  }
  if (a.seed) cfg.phantom.seed = *a.seed;
  if (common.print_config) {
    std::cout << dump_run_config(cfg) << '\n';
    return kOk;
  }
  if (a.out.empty()) throw UsageError("--out is required");
  const std::uint64_t base = cfg.phantom.seed;
  if (a.count > 0) fs::create_directories(a.out);
  for (std::size_t i = 0; i < a.count; ++i) {
    PhantomSpec spec = cfg.phantom;
    spec.seed = derive_seed(base, i);
    char name[32];
    std::snprintf(name, sizeof name, "phantom_%04zu", i);
    Volume v = generate_phantom(spec);
    v.subject = name;
    save_volume(v, fs::path(a.out) / (std::string(name) + ".vol"));
  }
  std::cout << "wrote " << a.count << " phantom volume(s) to " << a.out << '\n';
  return kOk;
}

// --- train -----------------------------------------------------------------

struct TrainArgs {
  std::string data, validation, out;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
  bool resume = false;
};

int cmd_train(const Common& common, const TrainArgs& a) {
  RunConfig cfg = common.load();
  if (!a.data.empty()) cfg.data.train = a.data;
  if (!a.validation.empty()) cfg.data.validation = a.validation;
  if (a.epochs) cfg.model.epochs = *a.epochs;
  if (a.seed) cfg.model.seed = *a.seed;
  cfg.model.validate();
  if (common.print_config) {
    std::cout << dump_run_config(cfg) << '\n';
    return kOk;
  }
  if (a.out.empty()) throw UsageError("--out is required");

  const auto train_volumes = load_directory(cfg.data.train, "training");
  std::vector<Volume> val_volumes;
  if (!cfg.data.validation.empty()) val_volumes = load_directory(cfg.data.validation, "validation");
  const auto training = prepare_subjects(train_volumes, cfg.model);
  const auto validation = prepare_subjects(val_volumes, cfg.model);

  fs::create_directories(a.out);
  const fs::path ckpt = fs::path(a.out) / "model.brnc";
  const fs::path csv = fs::path(a.out) / "loss.csv";
  {
    std::ofstream f(fs::path(a.out) / "config.json");
    f << dump_run_config(cfg) << '\n';
  }

  TrainingState state;
  if (a.resume && fs::exists(ckpt)) {
    state = load_checkpoint(ckpt, cfg.model);
    std::cout << "resuming from epoch " << state.epoch << '\n';
  } else {
    state = init_training(cfg.model);
  }

  TrainOptions options;
  options.checkpoint_path = ckpt;
  options.on_epoch = [&](const EpochRecord& r) {
    std::printf("epoch %zu/%zu  train_nll %.5f  val_nll %.5f\n", r.epoch, cfg.model.epochs, r.train_nll, r.val_nll);
    std::fflush(stdout);
    write_loss_csv(state.history, csv);
  };
  try {
    train(state, training, validation, options);
  } catch (const DivergenceError& e) {
    write_loss_csv(state.history, csv);
    std::cerr << "error: " << e.what() << "\nlast good checkpoint: " << ckpt.string() << '\n';
    return kRuntime;
  }
  write_loss_csv(state.history, csv);
  std::cout << "checkpoint: " << ckpt.string() << "\nloss curve: " << csv.string() << '\n';
  return kOk;
}

// --- generate --------------------------------------------------------------

struct GenerateArgs {
  std::string model, contexts, subject, out, pgm_dir, mode;
  std::optional<std::size_t> samples;
  std::optional<std::uint64_t> seed;
};

int cmd_generate(const Common& common, const GenerateArgs& a) {
  RunConfig cfg = common.load();
  if (a.samples) cfg.generate.samples = *a.samples;
  if (a.seed) cfg.generate.seed = *a.seed;
  if (!a.mode.empty()) cfg.generate.mode = parse_generation_mode(a.mode);
  if (common.print_config) {
    std::cout << dump_run_config(cfg) << '\n';
    return kOk;
  }
  if (a.model.empty() || a.out.empty()) throw UsageError("--model and --out are required");
  const auto indices = parse_index_list(a.contexts, "--contexts");
  if (!indices.empty() && a.subject.empty()) throw UsageError("--contexts needs --subject");

  const Model<float> model = load_model(a.model);
  const std::size_t K = model.config().num_poses();
  for (std::size_t k : indices) {
    if (k >= K) throw UsageError("--contexts: index " + std::to_string(k) + " is outside [0, " + std::to_string(K) + ")");
  }
  std::vector<SlicePose> contexts;
  std::string subject_name = "atlas";
  if (!a.subject.empty()) {
    const Volume vol = load_volume(a.subject);
    const SubjectSlices s = prepare_subjects(std::span(&vol, 1), model.config()).front();
    subject_name = s.subject;
    for (std::size_t k : indices) contexts.push_back(s.slices[k]);
  }
  const auto cm = condition(model, std::span<const SlicePose>(contexts));
  if (cm.has_duplicate_contexts()) std::cerr << "warning: repeated context indices in --contexts\n";

  Volume out = dense_sweep(cm, cfg.generate.samples, cfg.generate.mode, cfg.generate.seed);
  out.subject = subject_name;
  if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
  save_volume(out, a.out);
  if (!a.pgm_dir.empty()) {
    fs::create_directories(a.pgm_dir);
    for (std::size_t k = 0; k < out.depth(); ++k) {
      char name[32];
      std::snprintf(name, sizeof name, "slice_%03zu.pgm", k);
      write_pgm(out.axial_slice(k), fs::path(a.pgm_dir) / name);
    }
  }
  std::cout << "wrote " << a.out << " (" << out.depth() << " slices, " << indices.size() << " context(s), "
            << to_string(cfg.generate.mode) << ")\n";
  return kOk;
}

// --- eval ------------------------------------------------------------------

struct EvalArgs {
  std::string model, data, report, counts, mode;
  std::optional<std::size_t> samples, motion;
  std::optional<std::uint64_t> seed;
};

int cmd_eval(const Common& common, const EvalArgs& a) {
  RunConfig cfg = common.load();
  if (!a.counts.empty()) cfg.eval.context_counts = parse_index_list(a.counts, "--context-counts");
  if (a.samples) cfg.eval.samples = *a.samples;
  if (a.seed) cfg.eval.seed = *a.seed;
  if (a.motion) cfg.eval.motion = *a.motion;
  if (!a.mode.empty()) cfg.eval.mode = parse_generation_mode(a.mode);
  if (!a.data.empty()) cfg.data.validation = a.data;
  if (common.print_config) {
    std::cout << dump_run_config(cfg) << '\n';
    return kOk;
  }
  if (a.model.empty() || a.report.empty()) throw UsageError("--model and --report are required");

  const Model<float> model = load_model(a.model);
  const std::size_t K = model.config().num_poses();
  for (std::size_t n : cfg.eval.context_counts) {
    if (n > K) throw UsageError("context count " + std::to_string(n) + " exceeds K = " + std::to_string(K));
  }
  const auto volumes = load_directory(cfg.data.validation, "test");
  const auto subjects = prepare_subjects(volumes, model.config());

  EvalOptions opt;
  opt.context_counts = cfg.eval.context_counts;
  opt.n_samples = cfg.eval.samples;
  opt.mode = cfg.eval.mode;
  opt.seed = cfg.eval.seed;
  opt.jobs = common.jobs;
  const MetricsReport report = evaluate_dataset(model, subjects, opt);

  const fs::path dir = a.report;
  fs::create_directories(dir);
  write_metrics_csv(report, dir / "metrics.csv");
  write_summary_csv(report, dir / "summary.csv");
  std::printf("%-10s %-8s %-8s %s\n", "contexts", "ssim", "cc", "schedule");
  for (const SummaryMetric& s : report.summary) {
    write_curve_csv(s, dir / ("curve_" + std::to_string(s.n_contexts) + ".csv"));
    std::string sched;
    for (std::size_t k : s.contexts) sched += (sched.empty() ? "" : ",") + std::to_string(k);
    std::printf("%-10zu %-8.4f %-8.4f %s\n", s.n_contexts, s.ssim, s.cc, sched.c_str());
  }

  if (cfg.eval.motion > 0) {
    MotionOptions mo;
    mo.max_translation = cfg.eval.motion;
    mo.n_stacks = cfg.eval.motion_stacks;
    mo.n_contexts = cfg.eval.motion_contexts;
    mo.blur_sigma = cfg.eval.blur_sigma;
    mo.n_samples = cfg.eval.samples;
    mo.mode = cfg.eval.mode;
    mo.seed = cfg.eval.seed;
    mo.jobs = common.jobs;
    const auto rows = motion_dataset(model, volumes, mo);
    write_motion_csv(rows, dir / "motion.csv");
    std::size_t wins = 0;
    double gen = 0.0, avg = 0.0;
    for (const auto& r : rows) {
      wins += r.ssim_generated > r.ssim_gaussian_average;
      gen += r.ssim_generated / static_cast<double>(rows.size());
      avg += r.ssim_gaussian_average / static_cast<double>(rows.size());
    }
    std::printf("motion %zu: generated %.4f  gaussian average %.4f  (generated better on %zu/%zu)\n", cfg.eval.motion,
                gen, avg, wins, rows.size());
  }
  std::cout << "report: " << dir.string() << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dense volumes from sparse slices with a pose-conditioned flow and an exchangeable process"};
  app.require_subcommand(0, 1);
  app.fallthrough();

  Common common;
  app.add_option("--config", common.config_path, "JSON run configuration");
  app.add_flag("--print-config", common.print_config, "Print the effective configuration and exit");
  app.add_option("-j,--jobs", common.jobs, "Worker threads for evaluation")->check(CLI::PositiveNumber);

  PhantomArgs pa;
  auto* phantom = app.add_subcommand("phantom", "Write synthetic phantom volumes");
  phantom->add_option("--count", pa.count, "Number of volumes");
  phantom->add_option("--shape", pa.shape, "Z,Y,X")->delimiter(',');
  phantom->add_option("--seed", pa.seed, "Base seed");
  phantom->add_option("--out", pa.out, "Output directory");

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a model on a directory of volumes");
  train_cmd->add_option("--data", ta.data, "Training volumes");
  train_cmd->add_option("--validation", ta.validation, "Held-out volumes for the validation NLL");
  train_cmd->add_option("--out", ta.out, "Output directory for checkpoint and loss curve");
  train_cmd->add_option("--epochs", ta.epochs, "Override the epoch budget");
  train_cmd->add_option("--seed", ta.seed, "Override the training seed");
  train_cmd->add_flag("--resume", ta.resume, "Continue from <out>/model.brnc when present");

  GenerateArgs ga;
  auto* generate = app.add_subcommand("generate", "Dense sweep conditioned on context slices");
  generate->add_option("--model", ga.model, "Checkpoint");
  generate->add_option("--contexts", ga.contexts, "Comma-separated context indices; empty for the prior");
  generate->add_option("--subject", ga.subject, "Volume supplying the context slices");
  generate->add_option("--samples", ga.samples, "Samples per slice");
  generate->add_option("--mode", ga.mode, "sample | average | mean-latent");
  generate->add_option("--seed", ga.seed, "Sampling seed");
  generate->add_option("--out", ga.out, "Output .vol path");
  generate->add_option("--pgm", ga.pgm_dir, "Also write every slice as PGM into this directory");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Score dense sweeps against test volumes");
  eval->add_option("--model", ea.model, "Checkpoint");
  eval->add_option("--data", ea.data, "Test volumes");
  eval->add_option("--context-counts,--contexts-counts", ea.counts, "Comma-separated context counts");
  eval->add_option("--samples", ea.samples, "Samples per slice");
  eval->add_option("--mode", ea.mode, "sample | average | mean-latent");
  eval->add_option("--seed", ea.seed, "Sampling seed");
  eval->add_option("--motion", ea.motion, "Also run the motion comparison with this max translation (voxels)");
  eval->add_option("--report", ea.report, "Output directory for CSV reports");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*phantom) return cmd_phantom(common, pa);
    if (*train_cmd) return cmd_train(common, ta);
    if (*generate) return cmd_generate(common, ga);
    if (*eval) return cmd_eval(common, ea);
    if (!common.print_config) throw UsageError("a subcommand is required; run with --help for more information");
    std::cout << dump_run_config(common.load()) << '\n';
    return kOk;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}
