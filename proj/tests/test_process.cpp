#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "slicemap/error.hpp"
#include "slicemap/gradcheck.hpp"
#include "slicemap/process.hpp"

using namespace slicemap;

namespace {

ScalarProcess random_scalar_process(Rng& rng, bool student_t) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ScalarProcess p;
  p.mu = 2.0 * u(rng) - 1.0;
  p.var = 0.2 + 2.0 * u(rng);
  p.cov = p.var * 0.95 * u(rng);
  p.dof = student_t ? 2.5 + 30.0 * u(rng) : 0.0;
  return p;
}

ExchangeableProcess<double> make_process(const ScalarProcess& p, std::size_t dims = 1) {
  ExchangeableProcess<double> proc(dims, p.student_t() ? ProcessMode::student_t : ProcessMode::gaussian);
  proc.set_constrained(p.mu, p.var, p.cov, p.student_t() ? p.dof : 3.0);
  return proc;
}

Tensor<double> column(double v) { return Tensor<double>::full({1, 1}, v); }

}  // namespace

TEST_SUITE("exch-process") {
  TEST_CASE("initial predictive is the prior") {
    ExchangeableProcess<double> t(4, ProcessMode::student_t);
    const auto pred = t.predictive(t.init_state(2));
    for (std::size_t i = 0; i < 8; ++i) {
      CHECK(pred.loc[i] == 0.0);
      CHECK(pred.scale2[i] == doctest::Approx(1.0).epsilon(1e-12));
    }
    for (std::size_t d = 0; d < 4; ++d) CHECK(pred.dof[d] == doctest::Approx(1000.0).epsilon(1e-9));

    ExchangeableProcess<double> g(4, ProcessMode::gaussian);
    CHECK_FALSE(g.predictive(g.init_state()).dof.defined());
    CHECK(g.parameters().size() == 3);
    CHECK(t.parameters().size() == 4);
  }

  TEST_CASE("hand-derived two-element Gaussian conditioning") {
    const ScalarProcess p{0.0, 1.0, 0.5, 0.0};
    const auto proc = make_process(p);
    const auto pred = proc.predictive(proc.update_state(proc.init_state(), column(1.0)));
    CHECK(pred.loc[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(pred.scale2[0] == doctest::Approx(0.75).epsilon(1e-12));
    const auto oracle = oracle_conditioning(p, {1.0});
    CHECK(oracle.loc == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(oracle.scale2 == doctest::Approx(0.75).epsilon(1e-12));
  }

  TEST_CASE("standard normal prior density at zero") {
    const auto proc = make_process({0.0, 1.0, 0.0, 0.0});
    CHECK(proc.predictive_logpdf(column(0.0), proc.init_state())[0] ==
          doctest::Approx(-0.5 * std::log(2.0 * std::numbers::pi)).epsilon(1e-9));
    CHECK(joint_logpdf_oracle({0.3, 2.0, 0.5, 0.0}, {0.3}) ==
          doctest::Approx(-0.5 * std::log(2.0 * std::numbers::pi * 2.0)).epsilon(1e-12));
  }

  TEST_CASE("independent dimensions ignore observations") {
    const auto proc = make_process({0.2, 1.5, 0.0, 0.0});
    auto state = proc.init_state();
    for (double z : {3.0, -1.0, 0.5}) state = proc.update_state(state, column(z));
    const auto pred = proc.predictive(state);
    CHECK(pred.loc[0] == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(pred.scale2[0] == doctest::Approx(1.5).epsilon(1e-12));
  }

  TEST_CASE("observing the mean leaves the statistics unchanged") {
    const auto proc = make_process({0.0, 1.0, 0.3, 0.0});
    const auto s = proc.update_state(proc.init_state(), column(0.0));
    CHECK(s.count == 1);
    CHECK(s.sum[0] == 0.0);
    CHECK(s.sumsq[0] == 0.0);
  }

  TEST_CASE("student-t approaches the Gaussian for large dof") {
    const ScalarProcess g{0.1, 1.3, 0.4, 0.0};
    ScalarProcess t = g;
    t.dof = 1e6;
    const auto pg = make_process(g), pt = make_process(t);
    auto sg = pg.init_state(), st = pt.init_state();
    for (double z : {0.5, -0.2, 1.1}) {
      sg = pg.update_state(sg, column(z));
      st = pt.update_state(st, column(z));
    }
    const double lg = pg.predictive_logpdf(column(0.7), sg)[0];
    const double lt = pt.predictive_logpdf(column(0.7), st)[0];
    CHECK(std::abs(lg - lt) < 1e-3);
  }

  TEST_CASE("recurrence matches brute-force conditioning") {
    Rng rng(11);
    std::normal_distribution<double> normal(0.0, 1.0);
    double worst = 0.0;
    for (int trial = 0; trial < 40; ++trial) {
      const ScalarProcess p = random_scalar_process(rng, trial % 2 == 1);
      const auto proc = make_process(p);
      auto state = proc.init_state();
      std::vector<double> obs;
      for (int n = 1; n <= 20; ++n) {
        obs.push_back(p.mu + 1.5 * normal(rng));
        state = proc.update_state(state, column(obs.back()));
        const auto pred = proc.predictive(state);
        const auto oracle = oracle_conditioning(p, obs);
        worst = std::max({worst, std::abs(pred.loc[0] - oracle.loc), std::abs(pred.scale2[0] - oracle.scale2)});
        if (p.student_t()) worst = std::max(worst, std::abs(pred.dof[0] - oracle.dof));
      }
    }
    CHECK(worst < 1e-8);
  }

  TEST_CASE("predictive log densities telescope to the joint") {
    Rng rng(12);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
      const ScalarProcess p = random_scalar_process(rng, trial % 2 == 0);
      const auto proc = make_process(p);
      auto state = proc.init_state();
      std::vector<double> obs;
      double total = 0.0;
      for (int n = 1; n <= 20; ++n) {
        const double z = p.mu + normal(rng);
        total += proc.predictive_logpdf(column(z), state)[0];
        state = proc.update_state(state, column(z));
        obs.push_back(z);
        CHECK(std::abs(total - joint_logpdf_oracle(p, obs)) < 1e-6);
      }
    }
  }

  TEST_CASE("scalar and tensor densities agree") {
    Rng rng(13);
    for (bool t : {false, true}) {
      const ScalarProcess p = random_scalar_process(rng, t);
      const auto proc = make_process(p);
      const auto state = proc.update_state(proc.init_state(), column(0.4));
      const auto oracle = oracle_conditioning(p, {0.4});
      CHECK(proc.predictive_logpdf(column(-0.3), state)[0] == doctest::Approx(scalar_logpdf(-0.3, oracle)).epsilon(1e-10));
    }
  }

  TEST_CASE("exchangeability of the joint and the recurrence") {
    Rng rng(14);
    const ScalarProcess p = random_scalar_process(rng, true);
    std::vector<double> obs{0.3, -1.2, 2.0, 0.1, 0.7, -0.4};
    const auto proc = make_process(p);
    auto run = [&](const std::vector<double>& seq) {
      auto s = proc.init_state();
      double total = 0.0;
      for (double z : seq) {
        total += proc.predictive_logpdf(column(z), s)[0];
        s = proc.update_state(s, column(z));
      }
      return std::pair{total, proc.predictive(s)};
    };
    const double joint = joint_logpdf_oracle(p, obs);
    const auto [base, base_pred] = run(obs);
    for (int k = 0; k < 5; ++k) {
      std::shuffle(obs.begin(), obs.end(), rng);
      CHECK(std::abs(joint_logpdf_oracle(p, obs) - joint) < 1e-6);
      const auto [total, pred] = run(obs);
      CHECK(std::abs(total - base) < 1e-6);
      CHECK(std::abs(pred.loc[0] - base_pred.loc[0]) < 1e-8);
      CHECK(std::abs(pred.scale2[0] - base_pred.scale2[0]) < 1e-8);
    }
  }

  TEST_CASE("Gaussian posterior variance contracts toward v - rho") {
    const ScalarProcess p{0.0, 1.0, 0.4, 0.0};
    const auto proc = make_process(p);
    auto state = proc.init_state();
    double previous = proc.predictive(state).scale2[0];
    for (int n = 0; n < 50; ++n) {
      state = proc.update_state(state, column(0.1 * n));
      const double s2 = proc.predictive(state).scale2[0];
      CHECK(s2 < previous);
      CHECK(s2 > 0.6 - 1e-12);
      previous = s2;
    }
    CHECK(previous == doctest::Approx(0.6).epsilon(1e-2));
  }

  TEST_CASE("reparameterisation keeps the constraints for any raw value") {
    ExchangeableProcess<double> proc(7, ProcessMode::student_t);
    const std::vector<double> raws{-30.0, -5.0, -0.5, 0.0, 0.5, 5.0, 30.0};
    for (auto& named : proc.parameters()) {
      if (named.name == "process.mu") continue;
      std::copy(raws.begin(), raws.end(), named.tensor.mutable_data().begin());
    }
    const auto p = proc.params();
    for (std::size_t d = 0; d < 7; ++d) {
      CHECK(p.cov[d] >= 0.0);
      CHECK(p.cov[d] < p.var[d]);
      CHECK(p.var_minus_cov[d] > 0.0);
      CHECK(p.dof[d] > 2.0);
    }
    // Past saturation cov rounds to var, but the difference stays positive.
    proc.parameters()[2].tensor.mutable_data()[0] = 50.0;
    CHECK(proc.params().var_minus_cov[0] > 0.0);
  }

  TEST_CASE("density gradients match finite differences") {
    for (ProcessMode mode : {ProcessMode::gaussian, ProcessMode::student_t}) {
      ExchangeableProcess<double> proc(3, mode);
      proc.set_constrained(0.1, 1.2, 0.5, 6.0);
      std::vector<Tensor<double>> params;
      for (auto& n : proc.parameters()) params.push_back(n.tensor);
      const auto z1 = Tensor<double>::from({2, 3}, {0.3, -0.2, 1.0, 0.5, 0.9, -1.1});
      const auto z2 = Tensor<double>::from({2, 3}, {-0.4, 0.1, 0.6, 1.5, -0.3, 0.2});
      auto loss = [&] {
        auto s = proc.init_state(2);
        auto l = sum(proc.predictive_logpdf(z1, s));
        s = proc.update_state(s, z1);
        return l + sum(proc.predictive_logpdf(z2, s));
      };
      const auto result = finite_difference_check(loss, params);
      CHECK(result.max_relative_error < 1e-6);
    }
  }

  TEST_CASE("sampling is seeded and centred on the predictive location") {
    const auto proc = make_process({0.5, 1.0, 0.5, 0.0});
    const auto state = proc.update_state(proc.init_state(), column(1.5));
    Rng a(3), b(3);
    CHECK(proc.sample(state, a)[0] == proc.sample(state, b)[0]);

    const auto pred = proc.predictive(state);
    const std::size_t n = 100000;
    Rng rng(4);
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += proc.sample(state, rng)[0];
    mean /= double(n);
    CHECK(std::abs(mean - pred.loc[0]) < 4.0 * std::sqrt(pred.scale2[0] / double(n)));

    // Nearly degenerate covariance: draws collapse onto the location.
    const auto tight = make_process({0.0, 1e-5, 0.0, 0.0});
    Rng r(5);
    CHECK(std::abs(tight.sample(tight.init_state(), r)[0]) < 0.05);
  }

  TEST_CASE("process errors") {
    const auto proc = make_process({0.0, 1.0, 0.5, 0.0});
    const double inf = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(proc.update_state(proc.init_state(), column(inf)), NumericError);
    CHECK_THROWS_AS(proc.update_state(proc.init_state(), Tensor<double>::zeros({1, 2})), ShapeError);
    ExchangeableProcess<double> bad(1, ProcessMode::gaussian);
    CHECK_THROWS_AS(bad.set_constrained(0.0, 1.0, 1.0, 3.0), ConfigError);
    bad.parameters()[2].tensor.mutable_data()[0] = 1000.0;  // sigmoid saturates: rho == v
    CHECK_THROWS_AS(bad.predictive(bad.init_state()), NumericError);
    CHECK_THROWS_AS(oracle_conditioning({0.0, 1.0, 1.0, 0.0}, {0.1, 0.2}), NumericError);
    CHECK_THROWS_AS(parse_process_mode("cauchy"), ConfigError);
    CHECK(parse_process_mode(to_string(ProcessMode::student_t)) == ProcessMode::student_t);
  }
}
