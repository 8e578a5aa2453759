#include <cmath>

#include "doctest.h"
#include "mbaf/gradcheck.hpp"

using namespace mbaf;

TEST_SUITE("gradcheck") {
  TEST_CASE("central_diff examples") {
    const DenseVector sq =
        central_diff([](std::span<const double> t) { return t[0] * t[0]; }, DenseVector{3}, 1e-5);
    CHECK(std::abs(sq[0] - 6.0) < 1e-8);

    const DenseVector flat =
        central_diff([](std::span<const double>) { return 4.2; }, DenseVector{1, 2, 3}, 1e-5);
    CHECK(flat == DenseVector(3, 0.0));

    const DenseVector s =
        central_diff([](std::span<const double> t) { return std::sin(t[0]); }, DenseVector{1}, 1e-5);
    CHECK(std::abs(s[0] - std::cos(1.0)) < 1e-9);

    CHECK_THROWS_AS(
        central_diff([](std::span<const double> t) { return std::log(t[0]); }, DenseVector{0}, 1e-5),
        NumericError);
    CHECK_THROWS_AS(central_diff([](std::span<const double>) { return 0.0; }, DenseVector{1}, 0.0),
                    ParamError);
  }

  TEST_CASE("relative_error") {
    CHECK(relative_error(0.0, 0.0) == 0.0);
    CHECK(relative_error(1.0, 1.0) == 0.0);
    CHECK(relative_error(2.0, 1.0) == doctest::Approx(0.5));
    CHECK(relative_error(1e-9, 0.0) == doctest::Approx(0.1));
  }

  TEST_CASE("zero-weight layer passes trivially") {
    LayerCheckConfig config;
    config.zero_weights = true;
    const GradReport report = check_layer(config, 1);
    CHECK(report.pass);
    // Parameter gradients vanish on both sides; only the identity path from
    // the inputs carries signal.
    for (const auto& b : report.blocks)
      if (b.name.find("input") == std::string::npos) CHECK_MESSAGE(b.max_rel_error == 0.0, b.name);
  }

  TEST_CASE("every variant passes on small random layers") {
    for (const char* text : {"nf", "na", "ca", "single:1", "single:2", "resampled:4"}) {
      LayerCheckConfig config;
      config.s1 = 3;
      config.s2 = 3;
      config.slots = 4;
      config.batch = 3;
      config.variant = parse_variant(text);
      for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const GradReport report = check_layer(config, seed);
        CHECK_MESSAGE(report.pass, text, " seed ", seed, " max ", report.max_rel_error());
      }
    }
  }

  TEST_CASE("layer check reports every block") {
    LayerCheckConfig config;
    const GradReport report = check_layer(config, 3);
    std::vector<std::string> names;
    for (const auto& b : report.blocks) names.push_back(b.name);
    for (const char* want : {"w_read", "b_read", "w_compose", "b_compose", "w_scale",
                             "input.m1", "input.m2"}) {
      bool found = false;
      for (const auto& n : names) found = found || n.find(want) != std::string::npos;
      CHECK_MESSAGE(found, want);
    }
    const auto j = to_json(report);
    CHECK(j.contains("pass"));
    CHECK(j["blocks"].size() == report.blocks.size());
  }

  TEST_CASE("size caps are enforced") {
    LayerCheckConfig config;
    config.s1 = 10;
    config.s2 = 10;
    CHECK_THROWS_AS(config.validate(), ParamError);
    config = {};
    config.slots = kMaxCheckSlots + 1;
    CHECK_THROWS_AS(config.validate(), ParamError);
    config = {};
    config.batch = kMaxCheckBatch + 1;
    CHECK_THROWS_AS(config.validate(), ParamError);
  }

  TEST_CASE("classifier end to end") {
    for (const char* text : {"nf", "na", "ca", "single:2", "resampled:4"}) {
      ClassifierCheckConfig config;
      config.variant = parse_variant(text);
      for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const GradReport report = check_classifier(config, seed);
        CHECK_MESSAGE(report.pass, text, " seed ", seed, " max ", report.max_rel_error());
      }
    }
  }
}
