#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "slicemap/error.hpp"
#include "slicemap/motion.hpp"
#include "slicemap/phantom.hpp"
#include "slicemap/slices.hpp"
#include "test_util.hpp"

using namespace slicemap;
namespace fs = std::filesystem;

TEST_SUITE("volume-data") {
  TEST_CASE("phantom is a pure function of its spec") {
    PhantomSpec spec;
    spec.seed = 42;
    CHECK(generate_phantom(spec) == generate_phantom(spec));
    spec.seed = 43;
    CHECK_FALSE(generate_phantom(spec).data == generate_phantom(PhantomSpec{}).data);
  }

  TEST_CASE("phantom values are clamped with an exact-zero background") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      PhantomSpec spec;
      spec.seed = seed;
      spec.z_gradient = {-2.0, 2.0};  // strong ramp forces clamping
      const Volume v = generate_phantom(spec);
      CHECK(*std::min_element(v.data.begin(), v.data.end()) >= 0.0f);
      CHECK(*std::max_element(v.data.begin(), v.data.end()) <= 1.0f);
      // Corners are outside every ellipsoid.
      CHECK(v.at(0, 0, 0) == 0.0f);
      CHECK(v.at(31, 31, 31) == 0.0f);
      CHECK(v.at(16, 0, 0) == 0.0f);
    }
  }

  TEST_CASE("phantom without inner structures is uniform per slice up to the z ramp") {
    PhantomSpec spec;
    spec.seed = 5;
    spec.inner_count = {0, 0};
    spec.shell_thickness = {0.0, 0.0};
    spec.interior_intensity = {0.5, 0.5};
    spec.z_gradient = {0.2, 0.2};
    const Volume v = generate_phantom(spec);
    float previous = -1.0f;
    for (std::size_t z = 4; z < 28; ++z) {
      const Image s = v.axial_slice(z);
      std::set<float> values;
      for (float p : s.pixels)
        if (p != 0.0f) values.insert(p);
      REQUIRE(values.size() == 1);
      CHECK(*values.begin() > previous);  // positive ramp: monotone in z
      previous = *values.begin();
    }
  }

  TEST_CASE("phantom rejects degenerate radii") {
    PhantomSpec spec;
    spec.outer_radius = {0.0, 0.5};
    CHECK_THROWS_AS(generate_phantom(spec), ConfigError);
    spec = PhantomSpec{};
    spec.inner_radius = {0.5, 0.2};
    CHECK_THROWS_AS(generate_phantom(spec), ConfigError);
  }

  TEST_CASE("phantom spec json round trip and unknown keys") {
    PhantomSpec spec;
    spec.seed = 9;
    spec.inner_count = {1, 3};
    nlohmann::json j = spec;
    const PhantomSpec back = j.get<PhantomSpec>();
    CHECK(generate_phantom(back) == generate_phantom(spec));
    j["bogus"] = 1;
    CHECK_THROWS_AS(j.get<PhantomSpec>(), ConfigError);
  }

  TEST_CASE("extract_slices slab sizes") {
    Volume brain({160, 4, 4});
    for (std::size_t z = 0; z < 160; ++z) brain.at(z, 0, 0) = static_cast<float>(z) / 160.0f;
    const auto adni = extract_slices(brain, 0.75, 120);
    CHECK(adni.num_poses() == 120);
    CHECK(adni.slices.front().image.at(0, 0) == brain.at(20, 0, 0));
    CHECK(adni.slices.back().image.at(0, 0) == brain.at(139, 0, 0));

    Volume fetal({123, 2, 2});
    const auto f = extract_slices(fetal, 0.65, 80);
    CHECK(f.num_poses() == 80);
    CHECK_THROWS_AS(extract_slices(fetal, 0.65, 81), ShapeError);
    CHECK_THROWS_AS(extract_slices(fetal, 0.0, 10), ConfigError);
  }

  TEST_CASE("extract_slices with the full depth keeps every slice in order") {
    Volume v({10, 3, 3});
    for (std::size_t z = 0; z < 10; ++z) v.at(z, 1, 1) = static_cast<float>(z);
    const auto all = extract_slices(v, 1.0, 10);
    for (std::size_t k = 0; k < 10; ++k) {
      CHECK(all.slices[k].image.at(1, 1) == static_cast<float>(k));
      const auto pose = all.slices[k].pose();
      CHECK(std::accumulate(pose.begin(), pose.end(), 0.0f) == 1.0f);
      CHECK(pose[k] == 1.0f);
    }
  }

  TEST_CASE("downsample by averaging") {
    Image constant(4, 4, 0.3f);
    const Image half = downsample(constant, 2, 2);
    for (float v : half.pixels) CHECK(v == doctest::Approx(0.3f));

    // Checkerboard with a period of two pixels: every 2x2 block holds two of each.
    Image checker(8, 8);
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = 0; x < 8; ++x) checker.at(y, x) = ((y + x) % 2) ? 1.0f : 0.0f;
    const Image pooled = downsample(checker, 4, 4);
    for (float v : pooled.pixels) CHECK(v == 0.5f);

    CHECK_THROWS_AS(downsample(constant, 5, 4), ShapeError);
  }

  TEST_CASE("bilinear downsample preserves the mean of smooth images") {
    Image img(218, 218);
    for (std::size_t y = 0; y < 218; ++y)
      for (std::size_t x = 0; x < 218; ++x)
        img.at(y, x) = static_cast<float>(0.5 + 0.3 * std::sin(y * 0.05) * std::cos(x * 0.04));
    const Image small = downsample(img, 64, 64);
    CHECK(small.height == 64);
    CHECK(small.width == 64);
    auto mean = [](const Image& i) {
      return std::accumulate(i.pixels.begin(), i.pixels.end(), 0.0) / static_cast<double>(i.size());
    };
    CHECK(std::abs(mean(small) - mean(img)) / mean(img) < 0.01);
    CHECK(*std::max_element(small.pixels.begin(), small.pixels.end()) <= 1.0f);
  }

  TEST_CASE("training sequences are distinct, complete at M=K, reproducible") {
    const SubjectSlices subject = extract_slices(generate_phantom(PhantomSpec{}), 0.75, 24);
    Rng rng(1);
    const auto full = sample_training_sequence(subject, 24, rng);
    std::set<std::size_t> seen;
    for (const auto& e : full.entries) seen.insert(e.index);
    CHECK(seen.size() == 24);

    Rng a(77), b(77);
    const auto s1 = sample_training_sequence(subject, 9, a);
    const auto s2 = sample_training_sequence(subject, 9, b);
    REQUIRE(s1.length() == 9);
    CHECK(s1.contexts().size() == 8);
    for (std::size_t i = 0; i < 9; ++i) CHECK(s1.entries[i].index == s2.entries[i].index);
    CHECK_THROWS_AS(sample_training_sequence(subject, 25, rng), ConfigError);
  }

  TEST_CASE("context schedules reproduce the published K=80 selections") {
    using V = std::vector<std::size_t>;
    CHECK(select_context_schedule(1, 80) == V{40});
    CHECK(select_context_schedule(3, 80) == V{20, 40, 60});
    CHECK(select_context_schedule(4, 80) == V{10, 30, 50, 70});
    CHECK(select_context_schedule(7, 80) == V{10, 20, 30, 40, 50, 60, 70});
    CHECK(select_context_schedule(4, 24) == V{3, 9, 15, 21});
    V all(80);
    std::iota(all.begin(), all.end(), 0);
    CHECK(select_context_schedule(80, 80) == all);
    CHECK_THROWS_AS(select_context_schedule(0, 10), ConfigError);
  }

  TEST_CASE("context schedules are strictly increasing and in range") {
    for (std::size_t k : {1, 5, 8, 13, 24, 80, 100, 120}) {
      for (std::size_t n = 1; n <= k; ++n) {
        const auto s = select_context_schedule(n, k);
        REQUIRE(s.size() == n);
        CHECK(s.back() < k);
        CHECK(std::adjacent_find(s.begin(), s.end(), std::greater_equal<>()) == s.end());
      }
    }
  }

  TEST_CASE("volume save/load round trip") {
    test::TempDir dir;
    PhantomSpec spec;
    spec.seed = 3;
    Volume v = generate_phantom(spec);
    v.spacing_mm = {1.0, 0.5, 2.0};
    save_volume(v, dir.path() / "a.vol");
    CHECK(load_volume(dir.path() / "a.vol") == v);
    CHECK(list_volumes(dir.path()).size() == 1);
  }

  TEST_CASE("volume loading errors") {
    test::TempDir dir;
    save_volume(generate_phantom(PhantomSpec{}), dir.path() / "b.vol");
    fs::resize_file(dir.path() / "b.vol", 100);
    CHECK_THROWS_AS(load_volume(dir.path() / "b.vol"), FormatError);

    save_volume(generate_phantom(PhantomSpec{}), dir.path() / "c.vol");
    fs::remove(dir.path() / "c.json");
    CHECK_THROWS_AS(load_volume(dir.path() / "c.vol"), FormatError);

    save_volume(generate_phantom(PhantomSpec{}), dir.path() / "d.vol");
    std::ofstream(dir.path() / "d.json") << "{\"shape\": [1,2]";
    CHECK_THROWS_AS(load_volume(dir.path() / "d.vol"), FormatError);
  }

  TEST_CASE("motion with zero translation is the smoothed original") {
    PhantomSpec spec;
    spec.seed = 4;
    const Volume v = generate_phantom(spec);
    Rng rng(1);
    const auto m = motion_corrupt_stacks(v, 3, 0, rng);
    const Volume smooth = gaussian_blur(v, 1.0);
    REQUIRE(m.stacks.size() == 3);
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(m.gaussian_average.data[i] == doctest::Approx(smooth.data[i]).epsilon(1e-5));
  }

  TEST_CASE("motion corruption is seeded and bounded") {
    const Volume v = generate_phantom(PhantomSpec{});
    Rng a(9), b(9);
    const auto m1 = motion_corrupt_stacks(v, 3, 10, a);
    const auto m2 = motion_corrupt_stacks(v, 3, 10, b);
    CHECK(m1.gaussian_average == m2.gaussian_average);
    CHECK_FALSE(m1.stacks[0] == v);
    Rng c(1);
    CHECK_THROWS_AS(motion_corrupt_stacks(v, 3, 32, c), ConfigError);
    CHECK_THROWS_AS(motion_corrupt_stacks(v, 0, 2, c), ConfigError);
  }
}
