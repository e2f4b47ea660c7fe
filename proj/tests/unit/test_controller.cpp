#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "wm/controller/controller.hpp"
#include "wm/core/rng.hpp"

using namespace wm;
using controller::Controller;
using controller::ControllerConfig;
using controller::FeatureMode;

TEST_CASE("controller parameter counts of the full-size configurations") {
  ControllerConfig car{controller::feature_dim(FeatureMode::z_h, 32, 256), 3, 0, true};
  CHECK(car.feature_dim == 288);
  CHECK(car.param_count() == 867);
  CHECK(867 == 289 * 3);
  ControllerConfig hidden{32, 3, 40, true};
  CHECK(hidden.param_count() == 1443);
  CHECK(1443 == 33 * 40 + 41 * 3);
  ControllerConfig doom{controller::feature_dim(FeatureMode::z_h_c, 64, 512), 1, 0, false};
  CHECK(doom.feature_dim == 1088);
  CHECK(doom.param_count() == 1088);
  doom.use_bias = true;
  CHECK(doom.param_count() == 1089);
}

TEST_CASE("features concatenate z, h, c in that order") {
  const std::vector<double> z{1, 2};
  mdn::RnnState s{{3, 4, 5}, {6, 7, 8}};
  CHECK(controller::build_features(z, s, FeatureMode::z_only) == z);
  CHECK(controller::build_features(z, s, FeatureMode::z_h) == std::vector<double>{1, 2, 3, 4, 5});
  CHECK(controller::build_features(z, s, FeatureMode::z_h_c) == std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8});
  CHECK(controller::parse_feature_mode("z_h") == FeatureMode::z_h);
  CHECK_THROWS(controller::parse_feature_mode("zh"));
}

TEST_CASE("zero parameters act at the bound midpoints") {
  Controller c({4, 3, 0, true}, envs::ActionSpec({-1, 0, 0}, {1, 1, 1}));
  const std::vector<double> params(c.param_count(), 0.0), f{1, -2, 3, 0.5};
  const auto a = c.act(f, params);
  CHECK(a == std::vector<double>{0.0, 0.5, 0.5});
}

TEST_CASE("actions stay within bounds for any finite input and the map is deterministic") {
  core::RngStream rng(3);
  for (std::size_t width : {std::size_t{0}, std::size_t{5}}) {
    Controller c({6, 3, width, true}, envs::ActionSpec({-1, 0, 0}, {1, 1, 1}));
    for (int trial = 0; trial < 500; ++trial) {
      std::vector<double> p(c.param_count()), f(6);
      for (auto& v : p) v = 50 * rng.normal();
      for (auto& v : f) v = 1e3 * rng.normal();
      const auto a = c.act(f, p);
      for (std::size_t i = 0; i < 3; ++i) REQUIRE((a[i] >= c.bounds().lo[i] && a[i] <= c.bounds().hi[i]));
      REQUIRE(a == c.act(f, p));
    }
  }
}

TEST_CASE("linear controller matches a hand computation, with and without bias") {
  Controller c({2, 1, 0, true}, envs::ActionSpec({-1}, {1}));
  const std::vector<double> p{0.5, -0.25, 0.1}, f{2, 4};  // w . f + b = 1 - 1 + 0.1
  CHECK(c.act(f, p)[0] == doctest::Approx(std::tanh(0.1)).epsilon(1e-15));
  Controller nb({2, 1, 0, false}, envs::ActionSpec({-1}, {1}));
  CHECK(nb.act(f, std::vector<double>{0.5, -0.25})[0] == 0.0);
  Controller h({2, 1, 1, true}, envs::ActionSpec({-1}, {1}));
  // hidden = tanh(1*2 + 0*4 + 0.5); out = tanh(2 * hidden - 1)
  const std::vector<double> hp{1, 0, 0.5, 2, -1};
  CHECK(h.act(f, hp)[0] == doctest::Approx(std::tanh(2 * std::tanh(2.5) - 1)).epsilon(1e-15));
}

TEST_CASE("dimension mismatches are errors") {
  Controller c({4, 3, 0, true}, envs::ActionSpec({-1, 0, 0}, {1, 1, 1}));
  CHECK_THROWS_AS(c.act(std::vector<double>(3), std::vector<double>(15)), std::invalid_argument);
  CHECK_THROWS_AS(c.act(std::vector<double>(4), std::vector<double>(14)), std::invalid_argument);
  CHECK_THROWS_AS(Controller({4, 2, 0, true}, envs::ActionSpec({-1, 0, 0}, {1, 1, 1})), std::invalid_argument);
}

TEST_CASE("controller checkpoints embed the config and round-trip") {
  Controller c({3, 1, 2, false}, envs::ActionSpec({-1}, {1}));
  std::vector<double> p{0.5, -0.25, 1.5, 2.0, -1.0, 0.125, 3.0, -2.0};
  REQUIRE(p.size() == c.param_count());
  const auto path = std::filesystem::temp_directory_path() / "wm_ctrl.ckpt";
  controller::save_controller(path, c, p, {{"feature_mode", "z_h"}});
  const auto loaded = controller::load_controller(path);
  CHECK(loaded.params == p);
  CHECK(loaded.controller.config().hidden_width == 2);
  CHECK_FALSE(loaded.controller.config().use_bias);
  CHECK(loaded.meta.at("feature_mode") == "z_h");
}

TEST_CASE("search starts at zero for linear maps and off the saddle for a hidden layer") {
  const ControllerConfig linear{20, 3, 0, true};
  CHECK(controller::initial_params(linear, 7) == std::vector<double>(linear.param_count(), 0.0));

  const ControllerConfig hidden{20, 3, 8, true};
  const auto p = controller::initial_params(hidden, 7);
  REQUIRE(p.size() == hidden.param_count());
  CHECK(p == controller::initial_params(hidden, 7));
  CHECK(p != controller::initial_params(hidden, 8));
  const std::size_t n_w1 = 8 * 20;
  const double a = std::sqrt(3.0 / 20.0);
  double sq = 0;
  for (std::size_t i = 0; i < n_w1; ++i) {
    CHECK(std::abs(p[i]) <= a);
    sq += p[i] * p[i];
  }
  // Uniform(-a, a) has variance a^2 / 3 = 1 / fan_in.
  CHECK(sq / n_w1 == doctest::Approx(1.0 / 20.0).epsilon(0.25));
  for (std::size_t i = n_w1; i < p.size(); ++i) CHECK(p[i] == 0.0);

  // Output layer at zero: actions sit at the bound midpoints, but the
  // hidden activations already vary with the input.
  const Controller c(hidden, envs::ActionSpec({-1, 0, 0}, {1, 1, 1}));
  core::RngStream rng(1);
  std::vector<double> x(20);
  for (auto& v : x) v = rng.normal();
  const auto act = c.act(x, p);
  CHECK(act[0] == doctest::Approx(0.0));
  CHECK(act[1] == doctest::Approx(0.5));
}
