#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "cfseg/evaluation.hpp"
#include "cfseg/synth.hpp"

namespace fs = std::filesystem;
using namespace cfseg;
using namespace cfseg::synth;

namespace {

AnatomyParams fixed_anatomy() {
  for (std::uint64_t seed = 1;; ++seed) {
    auto a = sample_anatomy(seed, 64);
    try {
      validate_anatomy(a, 0);
      validate_anatomy(a, 1);
      return a;
    } catch (const ValidationError&) {
    }
  }
}

AttributeVector diseased(double severity) { return {0, 0, 1, severity}; }

}  // namespace

TEST_SUITE("attributes") {
  TEST_CASE("zero prevalence forces zero severity") {
    Marginals m;
    m.p_disease = 0.0;
    for (const auto& a : sample_attributes(3, 100, m)) {
      CHECK(a.disease == 0);
      CHECK(a.severity == 0.0);
    }
  }

  TEST_CASE("prevalence count stays within three binomial sigma") {
    Marginals m;
    m.p_disease = 3323.0 / 37612.0;
    const auto attrs = sample_attributes(2024, 37612, m);
    int diseased = 0;
    for (const auto& a : attrs) diseased += a.disease;
    const double sigma = std::sqrt(37612 * m.p_disease * (1 - m.p_disease));
    CHECK(std::abs(diseased - 3323.0) <= 3 * sigma);
  }

  TEST_CASE("severity lies in the configured range when diseased") {
    for (const auto& a : sample_attributes(5, 2000)) {
      a.validate();
      if (a.disease) {
        CHECK(a.severity >= 0.2);
        CHECK(a.severity <= 0.8);
      }
    }
  }

  TEST_CASE("same seed gives identical draws") { CHECK(sample_attributes(9, 50) == sample_attributes(9, 50)); }

  TEST_CASE("nonpositive n is an argument error") {
    CHECK_THROWS_AS(sample_attributes(1, 0), ArgumentError);
    CHECK_THROWS_AS(sample_attributes(1, -3), ArgumentError);
  }

  TEST_CASE("invariant violations are rejected") {
    CHECK_THROWS_AS((AttributeVector{0, 0, 1, 0.0}.validate()), ValidationError);
    CHECK_THROWS_AS((AttributeVector{0, 0, 0, 0.3}.validate()), ValidationError);
    CHECK_THROWS_AS((AttributeVector{2, 0, 0, 0.0}.validate()), ValidationError);
  }
}

TEST_SUITE("render") {
  TEST_CASE("disease never changes the ground-truth mask") {
    const auto anatomy = fixed_anatomy();
    const auto sick = render(diseased(0.7), anatomy);
    const auto healthy = render({0, 0, 0, 0.0}, anatomy);
    CHECK(sick.gt_mask == healthy.gt_mask);
  }

  TEST_CASE("effusion brightens the lower lung") {
    const auto anatomy = fixed_anatomy();
    const auto sick = render(diseased(0.5), anatomy);
    const auto healthy = render({0, 0, 0, 0.0}, anatomy);
    for (const auto& e : {anatomy.right, anatomy.left}) {
      const auto s = scaled(e, 0);
      double diff = 0;
      int n = 0;
      for (int y = static_cast<int>(s.cy) + 1; y < static_cast<int>(s.cy + s.ay); ++y)
        for (int x = static_cast<int>(s.cx - s.ax / 2); x <= static_cast<int>(s.cx + s.ax / 2); ++x) {
          diff += sick.image(y, x) - healthy.image(y, x);
          ++n;
        }
      CHECK(diff / n > 0.01);
    }
  }

  TEST_CASE("rendered intensities lie in [0, 1]") {
    const auto r = render(diseased(0.8), fixed_anatomy());
    for (float v : r.image.values()) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }

  TEST_CASE("invalid attributes are rejected") {
    CHECK_THROWS_AS(render({0, 0, 1, 0.0}, fixed_anatomy()), ValidationError);
  }
}

TEST_SUITE("silver") {
  TEST_CASE("healthy silver equals gt") {
    const auto gt = render({1, 1, 0, 0.0}, fixed_anatomy()).gt_mask;
    CHECK(degrade_to_silver(gt, {1, 1, 0, 0.0}, 77) == gt);
  }

  TEST_CASE("silver is a subset of gt per label") {
    const auto gt = render(diseased(0.8), fixed_anatomy()).gt_mask;
    const auto silver = degrade_to_silver(gt, diseased(0.8), 4);
    for (std::size_t i = 0; i < gt.size(); ++i)
      if (silver.values()[i] != kBackground) CHECK(silver.values()[i] == gt.values()[i]);
  }

  TEST_CASE("severe effusion shrinks the right lung more than the left") {
    const auto gt = render(diseased(0.8), fixed_anatomy()).gt_mask;
    const auto silver = degrade_to_silver(gt, diseased(0.8), 4);
    const auto right_deficit = eval::count(gt, eval::Structure::RightLung) - eval::count(silver, eval::Structure::RightLung);
    const auto left_deficit = eval::count(gt, eval::Structure::LeftLung) - eval::count(silver, eval::Structure::LeftLung);
    CHECK(right_deficit > 0);
    CHECK(right_deficit > left_deficit);
  }

  TEST_CASE("mild effusion below the visibility threshold is invisible to silver") {
    const auto gt = render(diseased(0.22), fixed_anatomy()).gt_mask;
    CHECK(degrade_to_silver(gt, diseased(0.22), 4) == gt);
  }

  TEST_CASE("severity above the threshold strictly shrinks each lung") {
    const auto gt = render(diseased(0.3), fixed_anatomy()).gt_mask;
    const auto silver = degrade_to_silver(gt, diseased(0.3), 8);
    CHECK(eval::count(silver, eval::Structure::RightLung) < eval::count(gt, eval::Structure::RightLung));
    CHECK(eval::count(silver, eval::Structure::LeftLung) < eval::count(gt, eval::Structure::LeftLung));
  }
}

TEST_SUITE("dataset") {
  TEST_CASE("split counts follow the ratios") {
    const auto attrs = sample_attributes(1, 1000);
    const auto splits = assign_splits(attrs, {0.7, 0.2, 0.1}, 1);
    int c[3] = {0, 0, 0};
    for (auto s : splits) ++c[static_cast<int>(s)];
    CHECK(c[0] == 700);
    CHECK(c[1] == 200);
    CHECK(c[2] == 100);
  }

  TEST_CASE("60/30/10 ratios are honoured") {
    const auto splits = assign_splits(sample_attributes(2, 1000), {0.6, 0.3, 0.1}, 2);
    int c[3] = {0, 0, 0};
    for (auto s : splits) ++c[static_cast<int>(s)];
    CHECK(c[0] == 600);
    CHECK(c[1] == 300);
    CHECK(c[2] == 100);
  }

  TEST_CASE("rebuild with the same seed gives a byte-identical manifest") {
    DatasetConfig c;
    c.n = 40;
    c.size = 32;
    c.disease_prevalence = 0.3;
    const auto a = fs::temp_directory_path() / "cfseg_test_synth" / "a";
    const auto b = fs::temp_directory_path() / "cfseg_test_synth" / "b";
    fs::remove_all(a);
    fs::remove_all(b);
    const auto m = build_dataset(c, a);
    build_dataset(c, b);
    CHECK(io::read_text(a / kManifestName) == io::read_text(b / kManifestName));
    CHECK(m.records.size() == 40);
    const auto loaded = Manifest::load(a / kManifestName);
    REQUIRE(loaded.records.size() == 40);
    CHECK(loaded.records[3].attributes == m.records[3].attributes);
    CHECK(loaded.records[3].anatomy == m.records[3].anatomy);
    CHECK(fs::exists(loaded.path_of(loaded.records[0].silver_mask_path)));
  }

  TEST_CASE("config rejects unknown keys and bad sizes") {
    CHECK_THROWS_AS(dataset_config_from_json({{"nn", 3}}), ConfigError);
    CHECK_THROWS_AS(dataset_config_from_json({{"size", 40}}), ConfigError);
    CHECK_THROWS_AS(dataset_config_from_json({{"split_ratios", {{"train", 0.5}, {"val", 0.5}, {"test", 0.5}}}}),
                  ConfigError);
    CHECK(dataset_config_from_json({{"split_ratios", {70, 20, 10}}}).split_ratios.test == doctest::Approx(0.1));
    CHECK(dataset_config_from_json({{"split_ratios", {{"train", 0.6}, {"val", 0.3}, {"test", 0.1}}}}).split_ratios.train ==
          0.6);
  }
}
