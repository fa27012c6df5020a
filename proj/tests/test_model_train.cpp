#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "slicemap/error.hpp"
#include "slicemap/gradcheck.hpp"
#include "slicemap/model.hpp"
#include "slicemap/phantom.hpp"
#include "slicemap/train.hpp"
#include "test_util.hpp"

using namespace slicemap;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config(std::size_t h, std::size_t w, std::size_t k, std::size_t m) {
  ModelConfig c;
  c.flow.height = h;
  c.flow.width = w;
  c.flow.num_poses = k;
  c.flow.coupling_layers = 2;
  c.flow.hidden_channels = 4;
  c.flow.pose_embedding = 2;
  c.sequence_length = m;
  c.batch_size = 4;
  c.validation_sequences = 8;
  return c;
}

SequenceSample random_sequence(std::size_t h, std::size_t w, std::size_t k, std::size_t m, Rng& rng) {
  std::uniform_real_distribution<float> u(0.05f, 0.95f);
  std::vector<std::size_t> idx(k);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  SequenceSample s;
  for (std::size_t i = 0; i < m; ++i) {
    SlicePose e{Image(h, w), idx[i], k};
    for (auto& p : e.image.pixels) p = u(rng);
    s.entries.push_back(std::move(e));
  }
  return s;
}

template <typename T>
void perturb(Model<T>& model, Rng& rng, double scale) {
  model.flow().randomize_output_layers(rng, scale);
}

std::vector<SubjectSlices> phantom_subjects(std::size_t count, std::uint64_t first_seed, const ModelConfig& c) {
  std::vector<Volume> vols;
  for (std::size_t i = 0; i < count; ++i) {
    PhantomSpec spec;
    spec.seed = first_seed + i;
    vols.push_back(generate_phantom(spec));
  }
  return prepare_subjects(vols, c);
}

ModelConfig small_training_config() {
  ModelConfig c = tiny_config(8, 8, 6, 3);
  c.flow.coupling_layers = 4;
  c.flow.hidden_channels = 8;
  c.batch_size = 4;
  c.epochs = 3;
  c.adam.learning_rate = 2e-3;
  c.seed = 5;
  return c;
}

bool same_parameters(const Model<float>& a, const Model<float>& b) {
  const auto pa = a.parameters(), pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].name != pb[i].name) return false;
    if (!std::ranges::equal(pa[i].tensor.data(), pb[i].tensor.data())) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("model-train") {
  TEST_CASE("sequence NLL gradients match central differences on an 8-pixel model") {
    for (ProcessMode mode : {ProcessMode::student_t, ProcessMode::gaussian}) {
      ModelConfig c = tiny_config(2, 4, 4, 3);
      c.process = mode;
      Model<double> model(c);
      Rng rng(21);
      perturb(model, rng, 0.3);
      model.process().set_constrained(0.1, 1.3, 0.4, 5.0);
      std::vector<SequenceSample> seqs{random_sequence(2, 4, 4, 3, rng), random_sequence(2, 4, 4, 3, rng)};
      const auto batch = make_batch<double>(seqs, 4);
      std::vector<Tensor<double>> params;
      for (auto& p : model.parameters()) params.push_back(p.tensor);
      const auto result = finite_difference_check([&] { return sum(batch_sequence_nll(model, batch)); }, params);
      CHECK(result.coordinates_checked > 500);
      CHECK(result.max_relative_error < 1e-3);
    }
  }

  TEST_CASE("sequence NLL is invariant to the order of the sequence") {
    Rng rng(22);
    ModelConfig c = tiny_config(4, 4, 8, 5);
    Model<float> f32(c);
    perturb(f32, rng, 0.2);
    f32.process().set_constrained(0.0, 1.0, 0.3, 8.0);
    Model<double> f64(c);
    copy_parameters(f32, f64);
    SequenceSample seq = random_sequence(4, 4, 8, 5, rng);
    const double base32 = sequence_nll(f32, seq).item();
    const double base64 = sequence_nll(f64, seq).item();
    for (int k = 0; k < 6; ++k) {
      std::shuffle(seq.entries.begin(), seq.entries.end(), rng);
      CHECK(std::abs(sequence_nll(f32, seq).item() - base32) / std::abs(base32) < 1e-4);
      CHECK(std::abs(sequence_nll(f64, seq).item() - base64) / std::abs(base64) < 1e-8);
    }
  }

  TEST_CASE("a single-element sequence scores under the prior") {
    Rng rng(23);
    ModelConfig c = tiny_config(4, 4, 6, 2);
    Model<double> model(c);
    perturb(model, rng, 0.2);
    const SequenceSample seq = random_sequence(4, 4, 6, 1, rng);
    const auto batch = make_batch<double>(std::span(&seq, 1), 6);
    const auto out = model.flow().forward(batch.images, batch.poses);
    const double expected =
        -(model.process().predictive_logpdf(out.z, model.process().init_state())[0] + out.logdet[0]);
    CHECK(sequence_nll(model, seq).item() == doctest::Approx(expected).epsilon(1e-12));
  }

  TEST_CASE("with independent latents the NLL is the plain flow likelihood") {
    Rng rng(24);
    ModelConfig c = tiny_config(4, 4, 6, 4);
    c.process = ProcessMode::gaussian;
    Model<double> model(c);
    perturb(model, rng, 0.2);
    model.process().set_constrained(0.0, 1.0, 0.0, 3.0);
    const SequenceSample seq = random_sequence(4, 4, 6, 4, rng);
    const auto batch = make_batch<double>(std::span(&seq, 1), 6);
    const auto out = model.flow().forward(batch.images, batch.poses);
    double expected = 0.0;
    for (std::size_t m = 0; m < 4; ++m) {
      for (std::size_t d = 0; d < 16; ++d) {
        const double z = out.z[m * 16 + d];
        expected += 0.5 * std::log(2.0 * std::numbers::pi) + 0.5 * z * z;
      }
      expected -= out.logdet[m];
    }
    CHECK(sequence_nll(model, seq).item() == doctest::Approx(expected).epsilon(1e-9));
  }

  TEST_CASE("last-term loss keeps only the query position") {
    Rng rng(25);
    ModelConfig c = tiny_config(4, 4, 6, 3);
    Model<double> model(c);
    perturb(model, rng, 0.2);
    model.process().set_constrained(0.0, 1.0, 0.5, 6.0);
    const SequenceSample seq = random_sequence(4, 4, 6, 3, rng);
    const auto batch = make_batch<double>(std::span(&seq, 1), 6);
    const auto out = model.flow().forward(batch.images, batch.poses);
    const auto& proc = model.process();
    auto state = proc.init_state();
    state = proc.update_state(state, slice(out.z, 0, 0, 1));
    state = proc.update_state(state, slice(out.z, 0, 1, 2));
    const double expected = -(proc.predictive_logpdf(slice(out.z, 0, 2, 3), state)[0] + out.logdet[2]);
    CHECK(sequence_nll(model, seq, LossMode::last).item() == doctest::Approx(expected).epsilon(1e-12));
  }

  TEST_CASE("model config json round trip and validation") {
    ModelConfig c = small_training_config();
    c.process = ProcessMode::gaussian;
    c.loss = LossMode::last;
    c.grad_clip_norm = 5.0;
    const nlohmann::json j = c;
    CHECK(j.get<ModelConfig>() == c);
    nlohmann::json bad = j;
    bad["flow"]["depth"] = 3;
    CHECK_THROWS_AS(bad.get<ModelConfig>(), ConfigError);
    bad = j;
    bad["batch_size"] = "many";
    CHECK_THROWS_AS(bad.get<ModelConfig>(), ConfigError);

    ModelConfig m1 = c;
    m1.sequence_length = 1;
    CHECK_THROWS_AS(m1.validate(), ConfigError);
    ModelConfig neg_clip = c;
    neg_clip.grad_clip_norm = -1.0;
    CHECK_THROWS_AS(neg_clip.validate(), ConfigError);
    ModelConfig small_k = c;
    small_k.flow.num_poses = 2;
    CHECK_THROWS_AS(Model<float>{small_k}, ConfigError);
  }

  TEST_CASE("checkpoint round trip is bit exact") {
    test::TempDir dir;
    const ModelConfig c = small_training_config();
    auto train_set = phantom_subjects(6, 0, c);
    TrainingState state = init_training(c);
    Rng rng(3);
    state.model->flow().randomize_output_layers(rng, 0.1);
    train(state, train_set, {});
    save_checkpoint(state, dir.path() / "m.ckpt");
    const TrainingState back = load_checkpoint(dir.path() / "m.ckpt");
    CHECK(back.config() == c);
    CHECK(back.step == state.step);
    CHECK(back.epoch == 3);
    CHECK(back.history.size() == 3);
    CHECK(back.history[2].train_nll == state.history[2].train_nll);
    CHECK(std::isnan(back.history[2].val_nll));
    CHECK(same_parameters(*back.model, *state.model));
    CHECK(back.optimizer.step == state.optimizer.step);
    CHECK(back.optimizer.first_moment == state.optimizer.first_moment);
    CHECK(back.optimizer.second_moment == state.optimizer.second_moment);

    const SequenceSample seq{"s", {train_set[0].slices[0], train_set[0].slices[3]}};
    CHECK(sequence_nll(*back.model, seq).item() == sequence_nll(*state.model, seq).item());
  }

  TEST_CASE("checkpoint corruption and config mismatch are reported") {
    test::TempDir dir;
    const ModelConfig c = small_training_config();
    TrainingState state = init_training(c);
    const fs::path path = dir.path() / "m.ckpt";
    save_checkpoint(state, path);

    ModelConfig other = c;
    other.flow.hidden_channels = 16;
    CHECK_THROWS_AS(load_checkpoint(path, other), ConfigError);
    ModelConfig longer = c;
    longer.epochs = 10;
    CHECK(load_checkpoint(path, longer).config().epochs == 10);

    fs::copy_file(path, dir.path() / "short.ckpt");
    fs::resize_file(dir.path() / "short.ckpt", fs::file_size(path) - 4);
    CHECK_THROWS_AS(load_checkpoint(dir.path() / "short.ckpt"), FormatError);

    {
      std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
      f.seekp(0);
      f.write("XXXX", 4);
    }
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
    save_checkpoint(state, path);
    {
      std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
      f.seekp(4);
      const std::uint32_t version = 9;
      f.write(reinterpret_cast<const char*>(&version), 4);
    }
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
    CHECK_THROWS_AS(load_checkpoint(dir.path() / "missing.ckpt"), FormatError);
  }

  TEST_CASE("training is deterministic and resumes exactly") {
    test::TempDir dir;
    ModelConfig c = small_training_config();
    c.epochs = 4;
    const auto train_set = phantom_subjects(6, 0, c);
    const auto val_set = phantom_subjects(2, 100, c);

    TrainingState a = init_training(c), b = init_training(c);
    train(a, train_set, val_set);
    train(b, train_set, val_set);
    REQUIRE(a.history.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(a.history[i].train_nll == b.history[i].train_nll);
      CHECK(a.history[i].val_nll == b.history[i].val_nll);
    }
    CHECK(same_parameters(*a.model, *b.model));

    ModelConfig half = c;
    half.epochs = 2;
    TrainingState first = init_training(half);
    TrainOptions opts;
    opts.checkpoint_path = dir.path() / "half.ckpt";
    train(first, train_set, val_set, opts);
    TrainingState resumed = load_checkpoint(opts.checkpoint_path, c);
    train(resumed, train_set, val_set);
    REQUIRE(resumed.history.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) CHECK(resumed.history[i].train_nll == a.history[i].train_nll);
    CHECK(same_parameters(*resumed.model, *a.model));

    write_loss_csv(a.history, dir.path() / "a.csv");
    write_loss_csv(resumed.history, dir.path() / "r.csv");
    std::ifstream fa(dir.path() / "a.csv"), fr(dir.path() / "r.csv");
    const std::string sa((std::istreambuf_iterator<char>(fa)), {}), sr((std::istreambuf_iterator<char>(fr)), {});
    CHECK(sa == sr);
    CHECK(sa.starts_with("epoch,train_nll,val_nll\n1,"));
  }

  TEST_CASE("gradient clipping only acts above the threshold") {
    ModelConfig c = small_training_config();
    c.epochs = 2;
    const auto train_set = phantom_subjects(6, 0, c);
    TrainingState plain = init_training(c);
    train(plain, train_set, {});

    ModelConfig loose = c;
    loose.grad_clip_norm = 1e30;
    TrainingState a = init_training(loose);
    train(a, train_set, {});
    CHECK(same_parameters(*a.model, *plain.model));

    ModelConfig tight = c;
    tight.grad_clip_norm = 1e-3;
    TrainingState b = init_training(tight);
    train(b, train_set, {});
    CHECK_FALSE(same_parameters(*b.model, *plain.model));
    CHECK(std::isfinite(b.history.back().train_nll));
  }

  TEST_CASE("training lowers the loss and the held-out NLL") {
    ModelConfig c = small_training_config();
    c.epochs = 8;
    const auto train_set = phantom_subjects(16, 0, c);
    const auto val_set = phantom_subjects(4, 500, c);
    TrainingState state = init_training(c);
    const double before = validation_nll(*state.model, val_set);
    train(state, train_set, val_set);
    CHECK(state.history.back().train_nll < state.history.front().train_nll);
    CHECK(validation_nll(*state.model, val_set) < before);
  }

  TEST_CASE("divergence restores the last good parameters") {
    test::TempDir dir;
    const ModelConfig c = small_training_config();
    const auto train_set = phantom_subjects(4, 0, c);
    TrainingState state = init_training(c);
    const Model<float> reference(c);
    TrainOptions opts;
    opts.divergence_limit = 1e-3;
    opts.checkpoint_path = dir.path() / "last.ckpt";
    CHECK_THROWS_AS(train(state, train_set, {}, opts), DivergenceError);
    CHECK(same_parameters(*state.model, reference));
    CHECK(fs::exists(opts.checkpoint_path));
    CHECK_THROWS_AS(train(state, std::span(train_set).first(1), {}), ConfigError);
  }
}
