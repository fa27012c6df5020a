#include <Eigen/Dense>

#include <cmath>
#include <random>

#include "doctest.h"
#include "slicemap/error.hpp"
#include "slicemap/flow.hpp"

using namespace slicemap;

namespace {

template <typename T>
Tensor<T> random_images(std::size_t n, std::size_t h, std::size_t w, Rng& rng, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<T> v(n * h * w);
  for (auto& x : v) x = static_cast<T>(u(rng));
  return Tensor<T>::from({n, h, w}, std::move(v));
}

template <typename T>
Tensor<T> random_poses(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::uniform_int_distribution<std::size_t> pick(0, k - 1);
  for (auto& i : idx) i = pick(rng);
  return one_hot_poses<T>(idx, k);
}

FlowConfig small_config(std::size_t h, std::size_t w, std::size_t layers = 4) {
  FlowConfig c;
  c.height = h;
  c.width = w;
  c.num_poses = 6;
  c.coupling_layers = layers;
  c.hidden_channels = 8;
  c.pose_embedding = 3;
  return c;
}

}  // namespace

TEST_SUITE("flow") {
  TEST_CASE("pre_transform at the midpoint") {
    const auto out = pre_transform(Tensor<double>::full({1, 2, 2}, 0.5), 0.05);
    for (double y : out.y.data()) CHECK(y == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(out.logdet[0] == doctest::Approx(4 * (std::log(0.9) - 2 * std::log(0.5))));
  }

  TEST_CASE("pre_transform inverts and its log-derivative matches finite differences") {
    Rng rng(1);
    const auto x = random_images<double>(1, 4, 4, rng);
    const auto pre = pre_transform(x, 0.05);
    const auto back = inverse_pre_transform(pre.y, 0.05);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(back[i] == doctest::Approx(x[i]).epsilon(1e-6));

    // The transform is elementwise, so the Jacobian is diagonal.
    double numeric = 0.0;
    const double eps = 1e-6;
    for (std::size_t i = 0; i < x.size(); ++i) {
      auto up = x.detach(), down = x.detach();
      up.mutable_data()[i] += eps;
      down.mutable_data()[i] -= eps;
      numeric += std::log((pre_transform(up, 0.05).y[i] - pre_transform(down, 0.05).y[i]) / (2 * eps));
    }
    CHECK(std::abs(pre.logdet[0] - numeric) / std::abs(numeric) < 1e-6);
  }

  TEST_CASE("zero-initialised coupling stack is the identity") {
    const FlowConfig cfg = small_config(4, 6);
    const ConditionalFlow<float> flow(cfg, 3);
    Rng rng(2);
    const auto x = random_images<float>(3, 4, 6, rng);
    const auto poses = random_poses<float>(3, cfg.num_poses, rng);
    const auto out = flow.forward(x, poses);
    const auto pre = pre_transform(x, cfg.alpha);
    for (std::size_t i = 0; i < out.z.size(); ++i) CHECK(out.z[i] == pre.y[i]);
    for (std::size_t i = 0; i < 3; ++i) CHECK(out.logdet[i] == pre.logdet[i]);

    const auto inv = flow.inverse(out.z, poses);
    const auto expected = inverse_pre_transform(reshape(out.z, {3, 4, 6}), cfg.alpha);
    for (std::size_t i = 0; i < inv.size(); ++i) CHECK(inv[i] == expected[i]);
  }

  TEST_CASE("forward and inverse are mutually inverse in 32-bit") {
    const FlowConfig cfg = small_config(8, 8, 6);
    ConditionalFlow<float> flow(cfg, 4);
    Rng rng(5);
    flow.randomize_output_layers(rng, 0.05);
    const auto x = random_images<float>(16, 8, 8, rng);
    const auto poses = random_poses<float>(16, cfg.num_poses, rng);
    const auto out = flow.forward(x, poses);
    const auto back = flow.inverse(out.z, poses);
    float worst = 0.0f;
    for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::abs(back[i] - x[i]));
    CHECK(worst < 1e-5f);

    // The clamped inverse is exact only on the range of forward, so draw
    // latents from the forward image of other inputs and jitter them.
    const auto other = random_images<float>(16, 8, 8, rng, 0.05, 0.95);
    std::normal_distribution<float> n(0.0f, 0.01f);
    const auto z_other = flow.forward(other, poses).z;
    std::vector<float> zv(z_other.data().begin(), z_other.data().end());
    for (auto& v : zv) v += n(rng);
    const auto z = Tensor<float>::from({16, cfg.pixels()}, zv);
    const auto z_back = flow.forward(flow.inverse(z, poses), poses).z;
    float worst_z = 0.0f;
    for (std::size_t i = 0; i < z.size(); ++i) worst_z = std::max(worst_z, std::abs(z_back[i] - z[i]));
    CHECK(worst_z < 1e-4f);
  }

  TEST_CASE("analytic log-determinant equals the dense Jacobian log-determinant") {
    const FlowConfig cfg = small_config(4, 4, 4);
    ConditionalFlow<double> flow(cfg, 6);
    Rng rng(7);
    flow.randomize_output_layers(rng, 0.3);
    const auto x = random_images<double>(1, 4, 4, rng, 0.05, 0.95);
    const auto pose = random_poses<double>(1, cfg.num_poses, rng);
    const double analytic = flow.forward(x, pose).logdet[0];

    const double eps = 1e-6;
    Eigen::MatrixXd jac(16, 16);
    for (std::size_t j = 0; j < 16; ++j) {
      auto up = x.detach(), down = x.detach();
      up.mutable_data()[j] += eps;
      down.mutable_data()[j] -= eps;
      const auto zu = flow.forward(up, pose).z, zd = flow.forward(down, pose).z;
      for (std::size_t i = 0; i < 16; ++i) jac(Eigen::Index(i), Eigen::Index(j)) = (zu[i] - zd[i]) / (2 * eps);
    }
    const Eigen::PartialPivLU<Eigen::MatrixXd> lu(jac);
    double numeric = 0.0;
    for (Eigen::Index i = 0; i < 16; ++i) numeric += std::log(std::abs(lu.matrixLU()(i, i)));
    CHECK(std::abs(analytic - numeric) / std::abs(numeric) < 1e-4);
  }

  TEST_CASE("pose conditioning is live") {
    const FlowConfig cfg = small_config(4, 4, 2);
    ConditionalFlow<double> flow(cfg, 8);
    Rng rng(9);
    flow.randomize_output_layers(rng, 0.2);
    const auto x = random_images<double>(2, 4, 4, rng);
    const auto poses = random_poses<double>(2, cfg.num_poses, rng);
    const auto params = flow.parameters();
    const Tensor<double> embed_w = params[0].tensor;
    REQUIRE(params[0].name == "pose_embedding.weight");
    const auto out = flow.forward(x, poses);
    auto g_logdet = grad(sum(out.logdet), {embed_w});
    auto g_z = grad(sum(out.z * out.z), {embed_w});
    double n1 = 0, n2 = 0;
    for (double v : g_logdet[0].data()) n1 += std::abs(v);
    for (double v : g_z[0].data()) n2 += std::abs(v);
    CHECK(n1 > 0.0);
    CHECK(n2 > 0.0);

    // Same latent, different pose -> different image.
    std::vector<std::size_t> a{0}, b{3};
    const auto z = slice(out.z, 0, 0, 1);
    const auto xa = flow.inverse(z, one_hot_poses<double>(a, cfg.num_poses));
    const auto xb = flow.inverse(z, one_hot_poses<double>(b, cfg.num_poses));
    double diff = 0;
    for (std::size_t i = 0; i < xa.size(); ++i) diff += std::abs(xa[i] - xb[i]);
    CHECK(diff > 0.0);
  }

  TEST_CASE("flow shape and config errors") {
    const FlowConfig cfg = small_config(4, 4);
    const ConditionalFlow<float> flow(cfg, 1);
    Rng rng(1);
    CHECK_THROWS_AS(flow.forward(random_images<float>(2, 4, 5, rng), random_poses<float>(2, 6, rng)), ShapeError);
    CHECK_THROWS_AS(flow.forward(random_images<float>(2, 4, 4, rng), random_poses<float>(3, 6, rng)), ShapeError);
    CHECK_THROWS_AS(flow.inverse(Tensor<float>::zeros({1, 15}), random_poses<float>(1, 6, rng)), ShapeError);
    FlowConfig odd = small_config(3, 3);
    CHECK_THROWS_AS(ConditionalFlow<float>(odd, 1), ConfigError);
    FlowConfig shallow = small_config(4, 4, 1);
    CHECK_THROWS_AS(ConditionalFlow<float>(shallow, 1), ConfigError);
  }

  TEST_CASE("inverse reports numeric overflow") {
    const FlowConfig cfg = small_config(4, 4, 2);
    ConditionalFlow<float> flow(cfg, 2);
    Rng rng(3);
    flow.randomize_output_layers(rng, 0.1);
    auto z = Tensor<float>::full({1, 16}, std::numeric_limits<float>::infinity());
    CHECK_THROWS_AS(flow.inverse(z, random_poses<float>(1, 6, rng)), NumericError);
  }
}
