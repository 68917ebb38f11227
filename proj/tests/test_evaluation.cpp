#include <doctest.h>

#include <filesystem>
#include <random>
#include <set>

#include "cfseg/evaluation.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace cfseg;
using namespace cfseg::eval;

namespace {

Mask from_rows(std::initializer_list<std::initializer_list<int>> rows) {
  const int h = static_cast<int>(rows.size());
  const int w = static_cast<int>(rows.begin()->size());
  Mask m(h, w);
  int y = 0;
  for (const auto& r : rows) {
    int x = 0;
    for (int v : r) m(y, x++) = static_cast<std::uint8_t>(v);
    ++y;
  }
  return m;
}

}  // namespace

TEST_SUITE("dice") {
  TEST_CASE("identical masks score 1") {
    const auto m = from_rows({{1, 1, 0}, {0, 2, 2}});
    for (auto s : kStructures) CHECK(dice(m, m, s) == 1.0);
  }

  TEST_CASE("disjoint nonempty sets score 0") {
    CHECK(dice(from_rows({{1, 0}}), from_rows({{0, 1}}), Structure::RightLung) == 0.0);
  }

  TEST_CASE("half overlap of four-pixel sets is 0.5") {
    const auto a = from_rows({{1, 1, 1, 1, 0, 0}});
    const auto b = from_rows({{0, 0, 1, 1, 1, 1}});
    CHECK(dice(a, b, Structure::RightLung) == 0.5);
  }

  TEST_CASE("both lungs only count agreeing labels") {
    const auto a = from_rows({{1, 1, 2, 2}});
    const auto b = from_rows({{2, 2, 2, 2}});
    CHECK(dice(a, b, Structure::Both) == 0.5);
  }

  TEST_CASE("two empty masks score 1") { CHECK(dice(Mask(3, 3), Mask(3, 3), Structure::LeftLung) == 1.0); }

  TEST_CASE("shape mismatch is an argument error") {
    CHECK_THROWS_AS(dice(Mask(2, 2), Mask(2, 3), Structure::Both), ArgumentError);
  }

  TEST_CASE("label 3 means both; label 4 is invalid") {
    CHECK(structure_from_label(3) == Structure::Both);
    CHECK_THROWS_AS(structure_from_label(4), ArgumentError);
  }

  TEST_CASE("symmetric in its arguments") {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 200; ++i) {
      const auto a = oracle::random_mask(rng, 8, 8);
      const auto b = oracle::random_mask(rng, 8, 8);
      for (auto s : kStructures) CHECK(dice(a, b, s) == dice(b, a, s));
    }
  }
}

TEST_SUITE("volume") {
  TEST_CASE("pixel counts times area") {
    Mask m(10, 10, kRightLung);
    CHECK(volume(m, Structure::RightLung, 1.0) == 100.0);
    CHECK(volume(Mask(4, 4), Structure::Both, 1.0) == 0.0);
    Mask eight(2, 4, kLeftLung);
    CHECK(volume(eight, Structure::LeftLung, 0.25) == 2.0);
  }

  TEST_CASE("nonpositive pixel area is rejected") {
    CHECK_THROWS_AS(volume(Mask(2, 2), Structure::Both, 0.0), ArgumentError);
  }
}

TEST_SUITE("delta v plus") {
  TEST_CASE("equal volumes give an empty subset") {
    std::vector<VolumeRecord> e{{"a", Method::Gt, 10, 10, 20}}, s{{"a", Method::Silver, 10, 10, 20}};
    CHECK(delta_v_plus(e, s, Structure::Both).empty());
  }

  TEST_CASE("larger expert volume selects the id") {
    std::vector<VolumeRecord> e{{"x", Method::Gt, 110, 0, 110}, {"y", Method::Gt, 100, 0, 100}};
    std::vector<VolumeRecord> s{{"x", Method::Silver, 100, 0, 100}, {"y", Method::Silver, 100, 0, 100}};
    CHECK(delta_v_plus(e, s, Structure::RightLung) == std::set<std::string>{"x"});
  }

  TEST_CASE("id mismatch is a data error") {
    std::vector<VolumeRecord> e{{"x", Method::Gt, 1, 1, 2}}, s{{"z", Method::Silver, 1, 1, 2}};
    CHECK_THROWS_AS(delta_v_plus(e, s, Structure::Both), DataError);
  }

  TEST_CASE("shrinking silver only grows the subset") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(50, 100);
    std::vector<VolumeRecord> e, s;
    for (int i = 0; i < 50; ++i) {
      const double v = u(rng);
      e.push_back({std::to_string(i), Method::Gt, v, v, 2 * v});
      s.push_back({std::to_string(i), Method::Silver, i % 2 ? v : v - 1, v, 2 * v - (i % 2 ? 0 : 1)});
    }
    const auto before = delta_v_plus(e, s, Structure::RightLung);
    for (auto& r : s) r.right -= 0.5;
    const auto after = delta_v_plus(e, s, Structure::RightLung);
    for (const auto& id : before) CHECK(after.contains(id));
    CHECK(after.size() >= before.size());
  }
}

TEST_SUITE("density overlap") {
  TEST_CASE("identical samples overlap fully") {
    std::vector<double> a{1, 2, 3, 4, 5};
    CHECK(density_overlap(a, a, 4) == doctest::Approx(1.0));
  }

  TEST_CASE("disjoint supports do not overlap") {
    std::vector<double> a{0, 0.1, 0.2}, b{0.9, 1.0};
    CHECK(density_overlap(a, b, 2, HistogramRange{0, 1}) == 0.0);
  }

  TEST_CASE("hand computed two-bin example") {
    std::vector<double> a{0, 0, 1, 1}, b{0, 1, 1, 1};
    CHECK(density_overlap(a, b, 2, HistogramRange{0, 1}) == doctest::Approx(0.75));
  }

  TEST_CASE("overlap stays in [0, 1]") {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> n(0, 1);
    for (int t = 0; t < 50; ++t) {
      std::vector<double> a(30), b(40);
      for (auto& v : a) v = n(rng);
      for (auto& v : b) v = n(rng) + 1.0;
      const double o = density_overlap(a, b, 1 + t % 20);
      CHECK(o >= 0.0);
      CHECK(o <= 1.0 + 1e-12);
    }
  }

  TEST_CASE("Freedman-Diaconis bins are clamped") {
    std::vector<double> same(10, 3.0);
    CHECK(freedman_diaconis_bins(same) == 1);
    std::vector<double> spread;
    for (int i = 0; i < 300000; ++i) spread.push_back(i);
    CHECK(freedman_diaconis_bins(spread) == 64);
  }

  TEST_CASE("type-7 quantiles") {
    CHECK(quantile({1, 2, 3, 4}, 0.5) == doctest::Approx(2.5));
    CHECK(quantile({1, 2, 3, 4}, 0.25) == doctest::Approx(1.75));
  }
}

TEST_CASE("metrics agree with the brute-force set oracle on random 8x8 masks") {
  const auto r = oracle::compare_metrics(1000, 8, 20260101);
  CHECK(r.max_dice_error <= 1e-12);
  CHECK(r.max_volume_error <= 1e-12);
  CHECK(r.max_overlap_error <= 1e-12);
}
